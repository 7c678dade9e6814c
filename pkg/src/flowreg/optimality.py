"""Objective, reduced gradient and reduced Hessian matvecs for the transport-constrained problem.

Every quantity here is the exact derivative of the *discrete* objective: the
force terms read the Heun predictor stages stored in the trajectories (see
:mod:`flowreg.transport`), with trapezoid-type weights in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .spectral import Grid2, RegConfig, apply_reg_operator, inner, leray_project
from .timebasis import ChebBasis, project_time_integral, velocity_nodes
from .transport import (
    CflViolation,
    TimeGrid,
    Trajectory,
    check_cfl,
    solve_adjoint,
    solve_incremental_adjoint,
    solve_incremental_state,
    solve_state,
)

__all__ = [
    "ObjectiveReport",
    "AdaptiveTime",
    "OuterState",
    "ReducedProblem",
    "evaluate_objective",
    "reduced_gradient",
    "hessian_matvec",
]


@dataclass(frozen=True)
class ObjectiveReport:
    """Objective ``j = l2_half + s`` split into data mismatch and regularization."""

    j: float
    l2_half: float
    s: float


@dataclass(frozen=True)
class AdaptiveTime:
    """CFL-adaptive time policy: pick the smallest stable ``n_t`` for each velocity."""

    cfl_number: float = 0.2
    n_min: int = 4
    n_max: int = 1 << 16


@dataclass
class OuterState:
    """Frozen linearization point of an outer iteration."""

    vc: np.ndarray
    tg: TimeGrid
    vt: np.ndarray
    m_traj: Trajectory
    lam_traj: Trajectory
    report: ObjectiveReport
    gradient: np.ndarray


class ReducedProblem:
    """Reduced-space view of a registration problem.

    Parameters
    ----------
    m_template, m_reference : ndarray
        Template ``m_T`` (initial state) and reference ``m_R`` on ``grid``.
    reg : RegConfig
        Regularization kind, weight and incompressibility switch.
    grid : Grid2
    time : TimeGrid or AdaptiveTime
        Fixed time grid, or a CFL-adaptive policy.
    basis : ChebBasis, optional
        Time basis of the velocity, stationary (``n_c = 1``) by default.
    """

    def __init__(
        self,
        m_template: np.ndarray,
        m_reference: np.ndarray,
        reg: RegConfig,
        grid: Grid2,
        time: Union[TimeGrid, AdaptiveTime],
        basis: Optional[ChebBasis] = None,
    ):
        if m_template.shape != grid.n or m_reference.shape != grid.n:
            raise ValueError("images must live on the problem grid")
        self.m_template = np.asarray(m_template, dtype=float)
        self.m_reference = np.asarray(m_reference, dtype=float)
        self.reg = reg
        self.grid = grid
        self.time = time
        self.basis = basis or ChebBasis(1)

    @property
    def n_c(self) -> int:
        return self.basis.n_c

    @property
    def coeff_shape(self) -> tuple[int, ...]:
        return (self.n_c, 2, *self.grid.n)

    def with_reg(self, reg: RegConfig) -> "ReducedProblem":
        return ReducedProblem(self.m_template, self.m_reference, reg, self.grid, self.time, self.basis)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.coeff_shape)

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return inner(a, b, self.grid)

    # time grid handling -------------------------------------------------

    def time_grid_for(self, vc: np.ndarray) -> TimeGrid:
        """Time grid used to transport under ``vc``; raises CflViolation for a fixed grid."""
        if isinstance(self.time, TimeGrid):
            return self.time
        pol = self.time
        probe = np.linspace(0.0, 1.0, 33) if self.n_c > 1 else np.array([0.0])
        vmax = np.abs(velocity_nodes(vc, self.basis, probe)).max(axis=(0, 2, 3))
        rate = max(vmax[i] / self.grid.h[i] for i in range(2))
        n = max(pol.n_min, math.ceil(rate / pol.cfl_number)) if rate > 0 else pol.n_min
        while n <= pol.n_max:
            tg = TimeGrid(n, pol.cfl_number)
            try:
                check_cfl(velocity_nodes(vc, self.basis, tg.times), self.grid, tg)
                return tg
            except CflViolation:
                n = math.ceil(1.25 * n)
        raise CflViolation(f"no stable time grid with at most {pol.n_max} steps")

    def nodes(self, vc: np.ndarray, tg: TimeGrid) -> np.ndarray:
        return velocity_nodes(vc, self.basis, tg.times)

    # objective -----------------------------------------------------------

    def regularization(self, vc: np.ndarray) -> float:
        if self.reg.beta == 0:
            return 0.0
        return 0.5 * self.reg.beta * self.inner(vc, apply_reg_operator(vc, self.reg, self.grid))

    def evaluate_objective(self, vc: np.ndarray) -> tuple[ObjectiveReport, Trajectory]:
        tg = self.time_grid_for(vc)
        m_traj = solve_state(self.m_template, self.nodes(vc, tg), self.grid, tg)
        r = self.m_reference - m_traj.final
        l2_half = 0.5 * self.inner(r, r)
        s = self.regularization(vc)
        return ObjectiveReport(l2_half + s, l2_half, s), m_traj

    def linearize(self, vc: np.ndarray) -> OuterState:
        """State, adjoint and gradient at ``vc`` (two hyperbolic solves)."""
        report, m_traj = self.evaluate_objective(vc)
        return self.linearize_from(vc, report, m_traj)

    def linearize_from(self, vc: np.ndarray, report: ObjectiveReport, m_traj: Trajectory) -> OuterState:
        """Adjoint and gradient given an already computed state trajectory."""
        tg = m_traj.time_grid
        vt = self.nodes(vc, tg)
        lam_traj = solve_adjoint(self.m_reference - m_traj.final, vt, self.grid, tg)
        g = self.reduced_gradient(vc, m_traj, lam_traj)
        return OuterState(vc, tg, vt, m_traj, lam_traj, report, g)

    # derivatives ---------------------------------------------------------

    def _project_force(self, frames: np.ndarray, tg: TimeGrid) -> np.ndarray:
        if self.reg.gamma == 1:
            frames = leray_project(frames, self.grid)
        if self.n_c == 1:
            return np.tensordot(tg.trapezoid_weights, frames, axes=(0, 0))[None]
        return project_time_integral(frames, self.basis, tg.times, tg.trapezoid_weights)

    def _reg_part(self, vc: np.ndarray) -> np.ndarray:
        if self.reg.beta == 0:
            return np.zeros_like(vc)
        return self.reg.beta * apply_reg_operator(vc, self.reg, self.grid)

    def reduced_gradient(self, vc: np.ndarray, m_traj: Trajectory, lam_traj: Trajectory) -> np.ndarray:
        """``g_l = beta A v_l + int b_l K[lambda grad m] dt`` in its exact discrete form."""
        frames = _force_frames(lam_traj, m_traj)
        return self._reg_part(vc) + self._project_force(frames, m_traj.time_grid)

    def hessian_matvec(self, vtilde: np.ndarray, state: OuterState, gn: bool = False) -> np.ndarray:
        """Reduced Hessian (``gn=False``) or Gauss-Newton Hessian applied to ``vtilde``."""
        tg = state.tg
        vtt = self.nodes(vtilde, tg)
        mt = solve_incremental_state(state.vt, vtt, state.m_traj, self.grid, tg)
        lt = solve_incremental_adjoint(-mt.final, state.vt, vtt, None if gn else state.lam_traj, self.grid, tg, gn=gn)
        frames = _force_frames(lt, state.m_traj)
        if not gn:
            frames += _force_frames(state.lam_traj, mt)
        return self._reg_part(vtilde) + self._project_force(frames, tg)


def _force_frames(lam: Trajectory, m: Trajectory) -> np.ndarray:
    """Node frames whose trapezoid integral is the exact discrete force ``int lambda grad m``.

    Interior nodes average ``lam_stage * grad m`` and ``lam * grad m_stage``; the
    end nodes carry one term each with doubled weight.
    """
    gm, gms = m.gradients()
    n_t = lam.time_grid.n_t
    out = np.zeros_like(gm)
    out[:n_t] += lam.stages[:, None] * gm[:n_t]
    out[1:] += lam.frames[1:, None] * gms
    out[1:n_t] *= 0.5
    return out


def evaluate_objective(vc: np.ndarray, problem: ReducedProblem) -> tuple[ObjectiveReport, Trajectory]:
    return problem.evaluate_objective(vc)


def reduced_gradient(vc: np.ndarray, m_traj: Trajectory, lam_traj: Trajectory, problem: ReducedProblem) -> np.ndarray:
    return problem.reduced_gradient(vc, m_traj, lam_traj)


def hessian_matvec(vtilde: np.ndarray, state: OuterState, problem: ReducedProblem, gn: bool = False) -> np.ndarray:
    return problem.hessian_matvec(vtilde, state, gn=gn)
