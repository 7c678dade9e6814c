"""Velocity-based diffeomorphic image registration with spectral discretization and Newton-Krylov solvers."""

__version__ = "0.1.0"
