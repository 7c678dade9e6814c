"""Automatic selection of the regularization weight by continuation in beta.

Beta is first reduced by factors of ten while the deformation stays regular,
then bisected between the last admissible and the first inadmissible value.
Regularity means ``min det F_1 >= eps_F`` for the smoothness schemes and
deformed-cell angles inside ``[eps_theta, 2 pi - eps_theta]`` for the
incompressible scheme.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .diagnostics import det2
from .optimality import ReducedProblem
from .optimizer import OuterResult, SolverConfig, outer_loop
from .transport import solve_defgrad, solve_displacement

__all__ = [
    "BoundViolatedAtStart",
    "ContinuationConfig",
    "Regularity",
    "TraceRow",
    "ContinuationResult",
    "cell_angles",
    "check_regularity",
    "run_continuation",
]

log = logging.getLogger(__name__)


class BoundViolatedAtStart(RuntimeError):
    """The deformation is already irregular at the initial (largest) beta."""


@dataclass(frozen=True)
class ContinuationConfig:
    eps_f: float = 0.1
    eps_theta: float = math.pi / 16
    beta_init: float = 1.0
    beta_min: float = 1e-6
    rel_l2_floor: float = 1e-2
    binary_stop_frac: float = 0.05

    def __post_init__(self):
        if not 0 < self.eps_f < 1:
            raise ValueError("eps_f must lie in (0, 1)")
        if not 0 < self.eps_theta < math.pi:
            raise ValueError("eps_theta must lie in (0, pi)")
        if not 0 < self.beta_min < self.beta_init:
            raise ValueError("need 0 < beta_min < beta_init")


@dataclass(frozen=True)
class Regularity:
    min_det: float
    angle_min: float
    angle_max: float
    admissible: bool


@dataclass(frozen=True)
class TraceRow:
    step: int
    phase: int
    beta: float
    min_det: float
    angle_min: float
    angle_max: float
    l2_rel: float
    accepted: bool
    iterations: int
    n_pde: int

    FIELDS = ("step", "phase", "beta", "min_det", "angle_min", "angle_max", "l2_rel", "accepted", "iterations", "n_pde")


@dataclass
class ContinuationResult:
    beta_star: float
    vc: np.ndarray
    trace: list[TraceRow]
    reason: str
    beta_breach: Optional[float] = None
    solve: Optional[OuterResult] = field(default=None, repr=False)


def cell_angles(u: np.ndarray, grid) -> np.ndarray:
    """Oriented angle in [0, 2 pi) between the deformed cell edges at every node.

    Edges are forward differences of ``y = x - u`` towards ``+e_1`` and ``+e_2``
    with periodic wrap-around.
    """
    h1, h2 = grid.h
    du1 = np.roll(u, -1, axis=-2) - u
    du2 = np.roll(u, -1, axis=-1) - u
    e1 = np.stack([h1 - du1[0], -du1[1]])
    e2 = np.stack([-du2[0], h2 - du2[1]])
    cross = e1[0] * e2[1] - e1[1] * e2[0]
    dot = e1[0] * e2[0] + e1[1] * e2[1]
    return np.mod(np.arctan2(cross, dot), 2 * np.pi)


def check_regularity(
    problem: ReducedProblem, vc: np.ndarray, cfg: ContinuationConfig, stokes: Optional[bool] = None
) -> Regularity:
    """Measure ``min det F_1`` and the deformed-cell angle range and test the scheme's bound."""
    stokes = problem.reg.gamma == 1 if stokes is None else stokes
    tg = problem.time_grid_for(vc)
    vt = problem.nodes(vc, tg)
    min_det = float(det2(solve_defgrad(vt, problem.grid, tg)).min())
    ang = cell_angles(solve_displacement(vt, problem.grid, tg), problem.grid)
    amin, amax = float(ang.min()), float(ang.max())
    if stokes:
        ok = amin >= cfg.eps_theta and amax <= 2 * math.pi - cfg.eps_theta
    else:
        ok = min_det >= cfg.eps_f
    return Regularity(min_det, amin, amax, bool(ok))


def _l2_rel(problem: ReducedProblem, res: OuterResult) -> float:
    d0 = problem.inner(problem.m_template - problem.m_reference, problem.m_template - problem.m_reference)
    if d0 == 0:
        return 0.0
    return 2.0 * res.state.report.l2_half / d0


def run_continuation(
    problem: ReducedProblem,
    cfg: ContinuationConfig,
    solver_cfg: SolverConfig,
    callback: Optional[Callable[[TraceRow], None]] = None,
) -> ContinuationResult:
    """Search for the smallest admissible beta.

    Every solve warm-starts from the last admissible velocity. Raises
    :class:`BoundViolatedAtStart` when the first solve is already inadmissible.
    """
    trace: list[TraceRow] = []

    def solve(beta: float, vc0, phase: int):
        p = problem.with_reg(problem.reg.with_beta(beta))
        res = outer_loop(p, solver_cfg, vc0)
        reg = check_regularity(p, res.vc, cfg)
        row = TraceRow(
            len(trace), phase, beta, reg.min_det, reg.angle_min, reg.angle_max,
            _l2_rel(problem, res), reg.admissible, res.log.iterations, res.log.n_pde,
        )
        trace.append(row)
        log.info("continuation step %d beta=%.6e admissible=%s", row.step, beta, reg.admissible)
        if callback is not None:
            callback(row)
        return res, row

    beta = cfg.beta_init
    res, row = solve(beta, None, 1)
    if not row.accepted:
        raise BoundViolatedAtStart(f"regularity bound violated at beta={beta}")
    best, best_row = res, row
    if row.l2_rel == 0:
        return ContinuationResult(beta, res.vc, trace, "images already match", solve=res)

    beta_bad = None
    reason = ""
    while True:
        nxt = best_row.beta / 10
        if nxt < cfg.beta_min:
            reason = "beta floor reached"
            break
        res, row = solve(nxt, best.vc, 1)
        if not row.accepted:
            beta_bad = nxt
            break
        change = abs(best_row.l2_rel - row.l2_rel) / best_row.l2_rel if best_row.l2_rel > 0 else 0.0
        best, best_row = res, row
        if change < cfg.rel_l2_floor:
            reason = "relative change of the L2 distance below floor"
            break
        if row.l2_rel == 0:
            reason = "images matched exactly"
            break

    if beta_bad is not None:
        while abs(best_row.beta - beta_bad) >= cfg.binary_stop_frac * beta_bad:
            mid = 0.5 * (best_row.beta + beta_bad)
            res, row = solve(mid, best.vc, 2)
            if row.accepted:
                best, best_row = res, row
            else:
                beta_bad = mid
        reason = "bisection converged"
    return ContinuationResult(best_row.beta, best.vc, trace, reason, beta_bad, solve=best)
