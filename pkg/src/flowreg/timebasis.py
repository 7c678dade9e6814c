"""Chebyshev-type Galerkin basis in time for the velocity.

The basis functions are the Chebyshev polynomials ``T_k(2t - 1)``, orthonormalized
in unweighted L2[0, 1] by Gram-Schmidt, so ``b_1 = 1`` and the Gram matrix is
the identity. A velocity is stored as coefficients ``(n_c, 2, n1, n2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L

__all__ = [
    "OutOfRange",
    "LengthMismatch",
    "ChebBasis",
    "eval_basis",
    "expand_velocity",
    "velocity_nodes",
    "project_time_integral",
    "fit_coefficients",
]


class OutOfRange(ValueError):
    """Raised when a basis evaluation point lies outside [0, 1]."""


class LengthMismatch(ValueError):
    """Raised when a time series does not match the time grid."""


@dataclass(frozen=True)
class ChebBasis:
    """Orthonormal polynomial basis of dimension ``n_c`` on [0, 1]."""

    n_c: int

    def __post_init__(self):
        if int(self.n_c) < 1:
            raise ValueError(f"n_c must be positive, got {self.n_c}")
        object.__setattr__(self, "n_c", int(self.n_c))

    @cached_property
    def _quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = L.leggauss(self.n_c + 2)
        return 0.5 * (x + 1.0), 0.5 * w

    @cached_property
    def coef(self) -> np.ndarray:
        """Row ``l`` holds the Chebyshev-series coefficients of ``b_l`` in ``2t - 1``."""
        t, w = self._quadrature
        raw = np.eye(self.n_c)
        vals = np.stack([C.chebval(2 * t - 1, raw[k]) for k in range(self.n_c)])
        out = np.zeros_like(raw)
        for k in range(self.n_c):
            c, f = raw[k].copy(), vals[k].copy()
            # modified Gram-Schmidt, run twice for stability
            for _ in range(2):
                for j in range(k):
                    fj = C.chebval(2 * t - 1, out[j])
                    p = np.sum(w * f * fj)
                    c -= p * out[j]
                    f -= p * fj
            c /= np.sqrt(np.sum(w * f * f))
            out[k] = c
        return out

    @cached_property
    def gram(self) -> np.ndarray:
        t, w = self._quadrature
        B = self(t)
        return (B * w) @ B.T

    @property
    def cgl_nodes(self) -> np.ndarray:
        """Chebyshev-Gauss-Lobatto points mapped to [0, 1] (ascending)."""
        if self.n_c == 1:
            return np.array([0.0, 1.0])
        k = np.arange(self.n_c)
        return np.sort(0.5 * (1.0 - np.cos(np.pi * k / (self.n_c - 1))))

    def __call__(self, t) -> np.ndarray:
        return eval_basis(self, t)


def eval_basis(basis: ChebBasis, t) -> np.ndarray:
    """Values ``b_l(t_j)``, shape ``(n_c, len(t))``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1e-14) or np.any(t > 1 + 1e-14):
        raise OutOfRange("basis is only defined on [0, 1]")
    x = np.clip(2 * t - 1, -1.0, 1.0)
    return np.stack([C.chebval(x, c) for c in basis.coef])


def expand_velocity(coeffs: np.ndarray, basis: ChebBasis, t: float) -> np.ndarray:
    """Velocity field at a single time ``t``."""
    b = eval_basis(basis, t)[:, 0]
    return np.tensordot(b, coeffs, axes=(0, 0))


def velocity_nodes(coeffs: np.ndarray, basis: ChebBasis, times: np.ndarray) -> np.ndarray:
    """Velocity samples at ``times``, shape ``(len(times), 2, n1, n2)``.

    A stationary velocity (``n_c = 1``) is returned as a broadcast view.
    """
    if coeffs.shape[0] != basis.n_c:
        raise ValueError(f"expected {basis.n_c} coefficient fields, got {coeffs.shape[0]}")
    B = eval_basis(basis, times)
    if basis.n_c == 1:
        return np.broadcast_to(B[0, 0] * coeffs[0], (len(times), *coeffs.shape[1:]))
    return np.tensordot(B.T, coeffs, axes=(1, 0))


def project_time_integral(frames: np.ndarray, basis: ChebBasis, times: np.ndarray, weights=None) -> np.ndarray:
    """Trapezoid approximation of ``int_0^1 b_l(t) f(t) dt`` for each ``l``.

    ``frames`` has the time axis first. ``weights`` overrides the trapezoid weights.
    """
    times = np.asarray(times, dtype=float)
    if frames.shape[0] != len(times):
        raise LengthMismatch(f"{frames.shape[0]} frames for {len(times)} time points")
    if weights is None:
        weights = np.zeros(len(times))
        dt = np.diff(times)
        weights[:-1] += 0.5 * dt
        weights[1:] += 0.5 * dt
    B = eval_basis(basis, times) * weights
    return np.tensordot(B, frames, axes=(1, 0))


def fit_coefficients(samples: np.ndarray, basis: ChebBasis, times: np.ndarray) -> np.ndarray:
    """Least-squares coefficients reproducing ``samples`` at ``times``."""
    if samples.shape[0] != len(times):
        raise LengthMismatch(f"{samples.shape[0]} samples for {len(times)} time points")
    B = eval_basis(basis, times).T
    flat = samples.reshape(len(times), -1)
    c, *_ = np.linalg.lstsq(B, flat, rcond=None)
    return c.reshape(basis.n_c, *samples.shape[1:])
