"""Outer optimization loop: Picard, inexact Newton-PCG and Gauss-Newton-PCG.

All norms and inner products are the cell-volume weighted discrete L2 ones of
:class:`flowreg.optimality.ReducedProblem`, except the stopping tests, which
use the max norm of the gradient.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .optimality import ObjectiveReport, OuterState, ReducedProblem
from .spectral import invert_reg_operator
from .transport import CflViolation, TimeGrid, check_cfl

__all__ = [
    "SolverConfig",
    "IterationRecord",
    "IterationLog",
    "ZeroGradient",
    "LineSearchFailure",
    "OuterResult",
    "pcg_solve",
    "armijo_line_search",
    "picard_step",
    "check_convergence",
    "outer_loop",
]

log = logging.getLogger(__name__)

METHODS = ("picard", "npcg", "gnpcg")
STOP_MODES = ("battery", "gradred", "stagnation")


class ZeroGradient(ValueError):
    """PCG was asked to solve with a vanishing right-hand side."""


class LineSearchFailure(RuntimeError):
    """No acceptable step length was found."""


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop and inner-solver settings.

    ``stop`` selects the termination rule: ``"battery"`` is the combined
    objective/step/gradient test, ``"gradred"`` stops once the max-norm gradient
    dropped by ``grad_tol`` relative to the first iterate, and ``"stagnation"``
    additionally stops when ``J`` changed by at most ``stagnation_tol`` over
    ``stagnation_window`` iterations.
    """

    method: str = "gnpcg"
    tau_j: float = 1e-3
    n_opt: int = 1_000_000
    stop: str = "battery"
    grad_tol: float = 1e-3
    stagnation_window: int = 10
    stagnation_tol: float = 1e-6
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    max_halvings: int = 50
    pcg_max_iters: Optional[int] = None
    step_memory: bool = True
    cfl_prescale: float = 0.5
    eps_mach: float = float(np.finfo(float).eps)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.stop not in STOP_MODES:
            raise ValueError(f"stop must be one of {STOP_MODES}, got {self.stop!r}")
        if not self.tau_j > 0:
            raise ValueError("tau_j must be positive")
        if self.n_opt < 1:
            raise ValueError("n_opt must be at least 1")
        if not 0 < self.armijo_c < 1 or not 0 < self.armijo_shrink < 1:
            raise ValueError("Armijo parameters must lie in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    j: float
    l2_half: float
    s: float
    grad_inf: float
    vdiff_inf: float
    v_inf: float
    alpha: float
    alpha_tilde: float
    inner: int
    trials: int
    n_pde: int

    FIELDS = ("k", "j", "l2_half", "s", "grad_inf", "alpha", "alpha_tilde", "inner", "trials", "n_pde")


@dataclass
class IterationLog:
    """Per-iterate records; ``n_pde`` is the cumulative hyperbolic solve count."""

    records: list[IterationRecord] = field(default_factory=list)
    callback: Optional[Callable[[IterationRecord], None]] = None

    def append(self, rec: IterationRecord) -> None:
        self.records.append(rec)
        if self.callback is not None:
            self.callback(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def n_pde(self) -> int:
        return self.records[-1].n_pde if self.records else 0

    @property
    def iterations(self) -> int:
        """Number of accepted outer steps."""
        return max(len(self.records) - 1, 0)

    @property
    def mean_trials(self) -> float:
        steps = [r.trials for r in self.records if r.trials > 0]
        return float(np.mean(steps)) if steps else 0.0

    @property
    def mean_alpha(self) -> float:
        steps = [r.alpha for r in self.records if r.trials > 0]
        return float(np.mean(steps)) if steps else 0.0


@dataclass
class OuterResult:
    vc: np.ndarray
    log: IterationLog
    status: str  # "converged" or "stagnation"
    reason: str
    state: OuterState


def _apply_precond(r: np.ndarray, problem: ReducedProblem) -> np.ndarray:
    return invert_reg_operator(r, problem.reg, problem.grid)


def pcg_solve(
    state: OuterState,
    g: np.ndarray,
    problem: ReducedProblem,
    rtol: float,
    gn: bool,
    max_iters: Optional[int] = None,
) -> tuple[np.ndarray, int, bool]:
    """Solve ``H s = -g`` by PCG with the spectral preconditioner ``(beta A)^{-1}``.

    Returns ``(step, iterations, negative_curvature)``. Stops when
    ``||r|| <= rtol ||g||``. On negative curvature the current iterate is
    returned, or the preconditioned gradient step if that iterate is still zero.
    """
    gnorm = math.sqrt(problem.inner(g, g))
    if gnorm == 0:
        raise ZeroGradient("PCG called with zero gradient")
    n = g.size if max_iters is None else max_iters
    x = np.zeros_like(g)
    r = -g
    z = _apply_precond(r, problem)
    d = z.copy()
    rz = problem.inner(r, z)
    it = 0
    while it < n:
        Hd = problem.hessian_matvec(d, state, gn=gn)
        it += 1
        dHd = problem.inner(d, Hd)
        if dHd <= 0:
            log.debug("negative curvature in PCG at iteration %d", it)
            if not np.any(x):
                x = _apply_precond(-g, problem)
            return x, it, True
        a = rz / dHd
        x = x + a * d
        r = r - a * Hd
        if math.sqrt(problem.inner(r, r)) <= rtol * gnorm:
            break
        z = _apply_precond(r, problem)
        rz_new = problem.inner(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, it, False


def armijo_line_search(
    vc: np.ndarray,
    step: np.ndarray,
    j0: float,
    slope: float,
    problem: ReducedProblem,
    cfg: SolverConfig,
):
    """Backtracking from ``alpha = 1`` until ``J(v + alpha s) <= J(v) + c alpha <g, s>``.

    Returns ``(alpha, new_vc, trials, report, m_traj)``. A trial that violates
    the CFL condition counts as rejected.
    """
    if not slope < 0:
        raise LineSearchFailure(f"step is not a descent direction (slope {slope:.3e})")
    alpha = 1.0
    for trials in range(1, cfg.max_halvings + 2):
        trial = vc + alpha * step
        try:
            rep, m_traj = problem.evaluate_objective(trial)
            if rep.j <= j0 + cfg.armijo_c * alpha * slope:
                return alpha, trial, trials, rep, m_traj
        except CflViolation:
            pass
        alpha *= cfg.armijo_shrink
    raise LineSearchFailure(f"no sufficient decrease after {cfg.max_halvings} halvings")


def picard_step(state: OuterState, problem: ReducedProblem) -> np.ndarray:
    """Step of the fixed-point iteration ``v <- -(beta A)^{-1} K[f]``.

    Written as ``-(beta A)^{-1} g``, which agrees with ``candidate - v`` on all
    nonconstant modes and is always a descent direction.
    """
    return -_apply_precond(state.gradient, problem)


def _vinf(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


def check_convergence(log_: IterationLog, cfg: SolverConfig) -> tuple[bool, str]:
    """Evaluate the stopping rule for the last record. Returns ``(stop, reason)``."""
    rec = log_.records[-1]
    first = log_.records[0]
    k = rec.k
    if cfg.stop == "battery":
        j0 = first.j
        if rec.grad_inf < 1e3 * cfg.eps_mach:
            return True, "C4: gradient at machine precision"
        if k > cfg.n_opt:
            return True, "C5: iteration limit"
        if k == 0:
            return False, ""
        prev = log_.records[-2]
        c1 = prev.j - rec.j < cfg.tau_j * (1 + j0)
        c2 = rec.vdiff_inf < math.sqrt(cfg.tau_j) * (1 + rec.v_inf)
        c3 = rec.grad_inf < cfg.tau_j ** (1.0 / 3.0) * (1 + j0)
        if c1 and c2 and c3:
            return True, "C1-C3: objective, step and gradient tolerances met"
        return False, ""
    if rec.grad_inf == 0 or rec.grad_inf <= cfg.grad_tol * first.grad_inf:
        return True, "relative gradient reduction reached"
    if k > cfg.n_opt:
        return True, "stagnation: iteration limit before the gradient target"
    if cfg.stop == "stagnation" and k >= cfg.stagnation_window:
        old = log_.records[-1 - cfg.stagnation_window]
        if old.j - rec.j <= cfg.stagnation_tol:
            return True, "stagnation: objective no longer decreasing"
    return False, ""


def outer_loop(
    problem: ReducedProblem,
    cfg: SolverConfig,
    vc0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[IterationRecord], None]] = None,
) -> OuterResult:
    """Run the outer iteration from ``vc0`` (zero by default).

    Returns an :class:`OuterResult` whose status is ``"converged"`` when the
    stopping rule fired and ``"stagnation"`` when the line search failed, the
    stagnation stop fired or the gradient target was not met within ``n_opt``.
    """
    vc = problem.zeros() if vc0 is None else np.array(vc0, dtype=float)
    hist = IterationLog(callback=callback)
    state = problem.linearize(vc)
    n_pde = 2
    g0 = None
    alpha_tilde = 1.0
    vdiff = math.inf
    k = 0
    alpha, inner_its, trials = 0.0, 0, 0
    while True:
        ginf = _vinf(state.gradient)
        rep = state.report
        hist.append(
            IterationRecord(k, rep.j, rep.l2_half, rep.s, ginf, vdiff, _vinf(vc), alpha, alpha_tilde, inner_its, trials, n_pde)
        )
        log.info("k=%d J=%.6e |g|=%.3e n_pde=%d", k, rep.j, ginf, n_pde)
        stop, reason = check_convergence(hist, cfg)
        if stop:
            status = "stagnation" if reason.startswith("stagnation") else "converged"
            return OuterResult(vc, hist, status, reason, state)

        g = state.gradient
        if g0 is None:
            g0 = math.sqrt(problem.inner(g, g))
        inner_its = 0
        if cfg.method == "picard":
            step = picard_step(state, problem)
            if cfg.step_memory:
                step = alpha_tilde * step
        else:
            gnorm = math.sqrt(problem.inner(g, g))
            eta = min(0.5, math.sqrt(gnorm / g0))
            step, inner_its, _ = pcg_solve(state, g, problem, eta, cfg.method == "gnpcg", cfg.pcg_max_iters)
        n_pde += 2 * inner_its

        if isinstance(problem.time, TimeGrid):
            step = _cfl_prescale(vc, step, problem, cfg)

        try:
            alpha, new_vc, trials, rep_new, m_traj = armijo_line_search(
                vc, step, rep.j, problem.inner(g, step), problem, cfg
            )
        except LineSearchFailure as exc:
            n_pde += cfg.max_halvings + 1
            hist.append(
                IterationRecord(k, rep.j, rep.l2_half, rep.s, ginf, 0.0, _vinf(vc), 0.0, alpha_tilde, inner_its, cfg.max_halvings + 1, n_pde)
            )
            return OuterResult(vc, hist, "stagnation", f"line search failed: {exc}", state)
        n_pde += trials
        if cfg.method == "picard" and cfg.step_memory:
            alpha_tilde = alpha_tilde * alpha if alpha < 1 else 2.0 * alpha_tilde
        vdiff = _vinf(new_vc - vc)
        vc = new_vc
        state = problem.linearize_from(vc, rep_new, m_traj)
        # a gradient evaluation is booked as two solves even though the state comes from the line search
        n_pde += 2
        k += 1


def _cfl_prescale(vc: np.ndarray, step: np.ndarray, problem: ReducedProblem, cfg: SolverConfig) -> np.ndarray:
    """Halve the step until ``v + s`` satisfies the CFL condition of a fixed time grid."""
    tg = problem.time
    for _ in range(200):
        try:
            check_cfl(problem.nodes(vc + step, tg), problem.grid, tg)
            return step
        except CflViolation:
            step = cfg.cfl_prescale * step
    return step
