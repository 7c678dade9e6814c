"""Explicit RK2 (Heun) solvers for the hyperbolic equations of the optimality systems.

Velocities are passed as node samples ``vt`` of shape ``(n_t + 1, 2, n1, n2)``
(a broadcast view is fine for stationary fields). Heun only needs the velocity
at the two ends of a step, so no interpolation in time is involved.

Every trajectory keeps the Heun predictor values next to the frames. The
incremental and adjoint solvers evaluate their source terms at the predictor
stage of the field they read from; this makes the adjoint and incremental
recursions the exact transpose / linearization of the discrete state solve,
so gradients and Hessians are exact derivatives of the discrete objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import resample

from .spectral import Grid2, spectral_grad

__all__ = [
    "CflViolation",
    "TimeGrid",
    "Trajectory",
    "cfl_max_dt",
    "cfl_number_of",
    "adaptive_time_grid",
    "check_cfl",
    "solve_state",
    "solve_adjoint",
    "solve_incremental_state",
    "solve_incremental_adjoint",
    "solve_displacement",
    "solve_defgrad",
]


class CflViolation(RuntimeError):
    """Raised when the velocity is too large for the requested time step."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on the unit time horizon."""

    n_t: int
    cfl_number: float = 0.2

    def __post_init__(self):
        if int(self.n_t) < 1:
            raise ValueError(f"n_t must be positive, got {self.n_t}")
        if not 0 < self.cfl_number <= 1:
            raise ValueError(f"cfl_number must lie in (0, 1], got {self.cfl_number}")
        object.__setattr__(self, "n_t", int(self.n_t))

    @property
    def h_t(self) -> float:
        return 1.0 / self.n_t

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_t + 1)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_t + 1, self.h_t)
        w[0] = w[-1] = 0.5 * self.h_t
        return w


@dataclass
class Trajectory:
    """Frames of a transported field at ``t_j = j * h_t`` plus Heun predictor stages.

    For a forward solve ``stages[j]`` is the predictor arriving at node ``j + 1``;
    for a backward solve it is the predictor arriving at node ``j``.
    """

    time_grid: TimeGrid
    frames: np.ndarray
    stages: np.ndarray
    grid: Grid2
    _grads: Optional[tuple[np.ndarray, np.ndarray]] = field(default=None, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.frames[0]

    def gradients(self) -> tuple[np.ndarray, np.ndarray]:
        """Spatial gradients of frames and stages (cached)."""
        if self._grads is None:
            self._grads = (spectral_grad(self.frames, self.grid), spectral_grad(self.stages, self.grid))
        return self._grads


def cfl_max_dt(v_max, grid: Grid2, cfl: float = 0.2) -> float:
    """Largest stable time step ``cfl / max_i(|v^i|_inf / h^i)``; ``inf`` when v = 0."""
    if not cfl > 0:
        raise ValueError("cfl must be positive")
    rate = max(abs(float(v)) / h for v, h in zip(v_max, grid.h))
    if rate == 0:
        return math.inf
    return cfl / rate


def _vmax(vt: np.ndarray) -> np.ndarray:
    return np.abs(vt).max(axis=tuple(i for i in range(vt.ndim) if i != vt.ndim - 3))


def cfl_number_of(vt: np.ndarray, grid: Grid2, tg: TimeGrid) -> float:
    """Courant number ``h_t * max_i(|v^i|_inf / h^i)`` of node velocities ``vt``."""
    vmax = _vmax(vt)
    return tg.h_t * max(vmax[i] / grid.h[i] for i in range(2))


def check_cfl(vt: np.ndarray, grid: Grid2, tg: TimeGrid) -> None:
    c = cfl_number_of(vt, grid, tg)
    if not np.isfinite(c) or c > tg.cfl_number:
        raise CflViolation(f"CFL number {c:.4g} exceeds {tg.cfl_number} at n_t={tg.n_t}")


def adaptive_time_grid(v_max, grid: Grid2, cfl: float = 0.2, n_min: int = 1) -> TimeGrid:
    """Smallest uniform time grid (at least ``n_min`` steps) satisfying the CFL condition."""
    dt = cfl_max_dt(v_max, grid, cfl)
    n = n_min if math.isinf(dt) else max(n_min, math.ceil(1.0 / dt - 1e-12))
    return TimeGrid(n, cfl)


def _advect(v: np.ndarray, s: np.ndarray, grid: Grid2) -> np.ndarray:
    """v . grad(s) for scalar s."""
    return np.einsum("i...,i...->...", v, spectral_grad(s, grid))


def _div_flux(v: np.ndarray, s: np.ndarray, grid: Grid2) -> np.ndarray:
    """div(v s)."""
    wh = grid.fft(v * s)
    return grid.ifft(np.sum(grid.ik * wh, axis=0))


def _prepare(vt: np.ndarray, grid: Grid2, tg: TimeGrid) -> None:
    if vt.shape != (tg.n_t + 1, 2, *grid.n):
        raise ValueError(f"velocity samples have shape {vt.shape}, expected {(tg.n_t + 1, 2, *grid.n)}")
    check_cfl(vt, grid, tg)


def solve_state(m0: np.ndarray, vt: np.ndarray, grid: Grid2, tg: TimeGrid) -> Trajectory:
    """Transport ``m0`` forward: dm/dt + grad(m) . v = 0."""
    _prepare(vt, grid, tg)
    h = tg.h_t
    frames = np.empty((tg.n_t + 1, *grid.n))
    stages = np.empty((tg.n_t, *grid.n))
    frames[0] = m0
    for j in range(tg.n_t):
        m = frames[j]
        k1 = -_advect(vt[j], m, grid)
        mp = m + h * k1
        k2 = -_advect(vt[j + 1], mp, grid)
        stages[j] = mp
        frames[j + 1] = m + 0.5 * h * (k1 + k2)
    return Trajectory(tg, frames, stages, grid)


def solve_adjoint(lam1: np.ndarray, vt: np.ndarray, grid: Grid2, tg: TimeGrid) -> Trajectory:
    """Transport ``lam1`` backward in time: -dlam/dt - div(v lam) = 0."""
    _prepare(vt, grid, tg)
    h = tg.h_t
    frames = np.empty((tg.n_t + 1, *grid.n))
    stages = np.empty((tg.n_t, *grid.n))
    frames[-1] = lam1
    for j in range(tg.n_t - 1, -1, -1):
        lam = frames[j + 1]
        k1 = _div_flux(vt[j + 1], lam, grid)
        lp = lam + h * k1
        k2 = _div_flux(vt[j], lp, grid)
        stages[j] = lp
        frames[j] = lam + 0.5 * h * (k1 + k2)
    return Trajectory(tg, frames, stages, grid)


def solve_incremental_state(
    vt: np.ndarray, vtilde_t: np.ndarray, m_traj: Trajectory, grid: Grid2, tg: TimeGrid
) -> Trajectory:
    """Linearized state: dm~/dt + grad(m~) . v + grad(m) . v~ = 0, m~(0) = 0."""
    _prepare(vt, grid, tg)
    h = tg.h_t
    gm, gmp = m_traj.gradients()
    frames = np.empty((tg.n_t + 1, *grid.n))
    stages = np.empty((tg.n_t, *grid.n))
    frames[0] = 0.0
    for j in range(tg.n_t):
        mt = frames[j]
        k1 = -(_advect(vt[j], mt, grid) + np.einsum("i...,i...->...", vtilde_t[j], gm[j]))
        mp = mt + h * k1
        k2 = -(_advect(vt[j + 1], mp, grid) + np.einsum("i...,i...->...", vtilde_t[j + 1], gmp[j]))
        stages[j] = mp
        frames[j + 1] = mt + 0.5 * h * (k1 + k2)
    return Trajectory(tg, frames, stages, grid)


def solve_incremental_adjoint(
    lam_tilde1: np.ndarray,
    vt: np.ndarray,
    vtilde_t: np.ndarray,
    lam_traj: Optional[Trajectory],
    grid: Grid2,
    tg: TimeGrid,
    gn: bool = False,
) -> Trajectory:
    """Linearized adjoint: -dlam~/dt - div(v lam~) - div(v~ lam) = 0, backward from ``lam_tilde1``.

    With ``gn=True`` the ``div(v~ lam)`` source is dropped (Gauss-Newton) and
    ``lam_traj`` is never read.
    """
    _prepare(vt, grid, tg)
    if not gn and lam_traj is None:
        raise ValueError("full Newton needs the adjoint trajectory")
    h = tg.h_t
    frames = np.empty((tg.n_t + 1, *grid.n))
    stages = np.empty((tg.n_t, *grid.n))
    frames[-1] = lam_tilde1
    for j in range(tg.n_t - 1, -1, -1):
        lt = frames[j + 1]
        flux = vt[j + 1] * lt
        if not gn:
            flux = flux + vtilde_t[j + 1] * lam_traj.frames[j + 1]
        k1 = grid.ifft(np.sum(grid.ik * grid.fft(flux), axis=0))
        lp = lt + h * k1
        flux = vt[j] * lp
        if not gn:
            flux = flux + vtilde_t[j] * lam_traj.stages[j]
        k2 = grid.ifft(np.sum(grid.ik * grid.fft(flux), axis=0))
        stages[j] = lp
        frames[j] = lt + 0.5 * h * (k1 + k2)
    return Trajectory(tg, frames, stages, grid)


def _oversample(vt: np.ndarray, grid: Grid2, pad: int) -> tuple[np.ndarray, Grid2]:
    if pad == 1:
        return vt, grid
    fine = Grid2((pad * grid.n[0], pad * grid.n[1]))
    if vt.strides[0] == 0:
        v = resample(resample(vt[0], fine.n[0], axis=-2), fine.n[1], axis=-1)
        return np.broadcast_to(v, (vt.shape[0], *v.shape)), fine
    return resample(resample(vt, fine.n[0], axis=-2), fine.n[1], axis=-1), fine


def solve_displacement(vt: np.ndarray, grid: Grid2, tg: TimeGrid, pad: int = 2) -> np.ndarray:
    """Final displacement ``u_1`` of du/dt + (grad u) v = v, u(0) = 0. The map is y = x - u_1.

    The products in this equation alias badly on the registration grid, so it
    is solved on a ``pad``-times finer grid and sampled back at the nodes.
    """
    _prepare(vt, grid, tg)
    vt, fine = _oversample(vt, grid, pad)
    h = tg.h_t

    def rhs(v, u):
        gu = spectral_grad(u, fine)  # (2 comps, 2 derivs, n1, n2)
        return v - np.einsum("ik...,k...->i...", gu, v)

    u = fine.zeros(2)
    for j in range(tg.n_t):
        k1 = rhs(vt[j], u)
        k2 = rhs(vt[j + 1], u + h * k1)
        u = u + 0.5 * h * (k1 + k2)
    return np.ascontiguousarray(u[..., ::pad, ::pad])


def solve_defgrad(vt: np.ndarray, grid: Grid2, tg: TimeGrid, pad: int = 2) -> np.ndarray:
    """Final deformation gradient ``F_1``, shape (2, 2, n1, n2), of dF/dt + (v.grad)F = (grad v)F, F(0) = I.

    Solved on a ``pad``-times finer grid (see :func:`solve_displacement`).
    """
    _prepare(vt, grid, tg)
    vt, fine = _oversample(vt, grid, pad)
    h = tg.h_t
    stationary = vt.strides[0] == 0
    gv_cache = spectral_grad(vt[0], fine) if stationary else None

    def rhs(j, F):
        v = vt[j]
        gv = gv_cache if stationary else spectral_grad(v, fine)  # gv[i, k] = d v_i / d x_k
        gF = spectral_grad(F, fine)  # (2, 2, 2, n1, n2), last derivative axis
        adv = np.einsum("ijk...,k...->ij...", gF, v)
        return np.einsum("ik...,kj...->ij...", gv, F) - adv

    F = np.zeros((2, 2, *fine.n))
    F[0, 0] = F[1, 1] = 1.0
    for j in range(tg.n_t):
        k1 = rhs(j, F)
        k2 = rhs(j + 1, F + h * k1)
        F = F + 0.5 * h * (k1 + k2)
    return np.ascontiguousarray(F[..., ::pad, ::pad])
