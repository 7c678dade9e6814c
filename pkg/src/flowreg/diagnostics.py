"""Registration quality measures, deformation maps and dense Hessian spectra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .optimality import OuterState, ReducedProblem
from .optimizer import IterationLog
from .transport import Trajectory, solve_defgrad, solve_displacement

__all__ = [
    "IdenticalImages",
    "TooLarge",
    "MeasureSet",
    "SpectrumReport",
    "det2",
    "deformation_determinant",
    "compute_measures",
    "power_spectrum",
    "assemble_dense_hessian",
    "spectrum_report",
    "high_frequency_fraction",
    "export_maps",
]

MAX_DENSE_ORDER = 8192


class IdenticalImages(ZeroDivisionError):
    """Relative measures are undefined because template and reference coincide."""


class TooLarge(ValueError):
    """The dense Hessian would exceed the supported order."""


@dataclass(frozen=True)
class MeasureSet:
    l2_rel: float
    dj_rel: float
    grad_rel_inf: float
    det_min: float
    det_max: float
    det_mean: float
    det_std: float
    power_spectrum: tuple[float, ...]

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("l2_rel", "dj_rel", "grad_rel_inf", "det_min", "det_max", "det_mean", "det_std")}
        for i, p in enumerate(self.power_spectrum, start=1):
            d[f"power_{i}"] = p
        return d


@dataclass
class SpectrumReport:
    """Eigenvalues of a dense reduced Hessian.

    Sorted by descending modulus when ``beta == 0`` and by ascending real part otherwise.
    """

    beta: float
    eigenvalues: np.ndarray
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return len(self.eigenvalues)

    @property
    def min_re(self) -> float:
        return float(self.eigenvalues.real.min())

    @property
    def max_re(self) -> float:
        return float(self.eigenvalues.real.max())

    @property
    def max_abs_im(self) -> float:
        return float(np.abs(self.eigenvalues.imag).max())


def det2(F: np.ndarray) -> np.ndarray:
    return F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]


def deformation_determinant(problem: ReducedProblem, vc: np.ndarray, tg=None) -> np.ndarray:
    """Pointwise ``det F_1`` for the velocity ``vc``."""
    tg = tg or problem.time_grid_for(vc)
    return det2(solve_defgrad(problem.nodes(vc, tg), problem.grid, tg))


def power_spectrum(problem: ReducedProblem, vc: np.ndarray) -> tuple[float, ...]:
    """Relative norm ``||v_l|| / ||(v_1, ..., v_nc)||`` of each coefficient field."""
    total = np.sqrt(problem.inner(vc, vc))
    if total == 0:
        return tuple(1.0 if l == 0 else 0.0 for l in range(problem.n_c))
    return tuple(float(np.sqrt(problem.inner(v, v)) / total) for v in vc)


def compute_measures(
    problem: ReducedProblem,
    vc: np.ndarray,
    m_traj: Optional[Trajectory] = None,
    log: Optional[IterationLog] = None,
    tg=None,
) -> MeasureSet:
    """Evaluate the standard quality measures at ``vc``.

    Raises :class:`IdenticalImages` when ``m_T == m_R``.
    """
    mt, mr = problem.m_template, problem.m_reference
    d0 = problem.inner(mt - mr, mt - mr)
    if d0 == 0:
        raise IdenticalImages("template and reference are identical")
    if m_traj is None:
        report, m_traj = problem.evaluate_objective(vc)
        j = report.j
    else:
        r = mr - m_traj.final
        j = 0.5 * problem.inner(r, r) + problem.regularization(vc)
    r = m_traj.final - mr
    l2_rel = problem.inner(r, r) / d0
    dj_rel = j / (0.5 * d0)
    if log is not None and len(log) and log[0].grad_inf > 0:
        grad_rel = log[-1].grad_inf / log[0].grad_inf
    else:
        grad_rel = float("nan")
    det = deformation_determinant(problem, vc, tg or m_traj.time_grid)
    return MeasureSet(
        float(l2_rel), float(dj_rel), float(grad_rel),
        float(det.min()), float(det.max()), float(det.mean()), float(det.std()),
        power_spectrum(problem, vc),
    )


def assemble_dense_hessian(
    problem: ReducedProblem, state: OuterState, gn: bool = False, max_order: int = MAX_DENSE_ORDER
) -> np.ndarray:
    """Dense matrix of the reduced Hessian in the coefficient basis, one matvec per column."""
    shape = problem.coeff_shape
    n = int(np.prod(shape))
    if n > max_order:
        raise TooLarge(f"system order {n} exceeds {max_order}")
    H = np.empty((n, n))
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        H[:, i] = problem.hessian_matvec(e.reshape(shape), state, gn=gn).ravel()
        e[i] = 0.0
    return H


def spectrum_report(
    problem: ReducedProblem,
    state: OuterState,
    gn: bool = False,
    vectors: bool = True,
    max_order: int = MAX_DENSE_ORDER,
) -> SpectrumReport:
    """Assemble the dense Hessian and compute its full (general) eigendecomposition."""
    H = assemble_dense_hessian(problem, state, gn, max_order)
    if vectors:
        lam, V = np.linalg.eig(H)
    else:
        lam, V = np.linalg.eigvals(H), None
    beta = problem.reg.beta
    order = np.argsort(-np.abs(lam), kind="stable") if beta == 0 else np.argsort(lam.real, kind="stable")
    lam = lam[order]
    if V is not None:
        V = V[:, order]
    return SpectrumReport(beta, lam, V, H)


def high_frequency_fraction(field_: np.ndarray, grid) -> float:
    """Share of spectral energy above half the Nyquist wavenumber."""
    fh = np.abs(grid.fft(field_)) ** 2
    k1, k2 = grid._k
    hi = (np.abs(k1) > grid.n[0] // 4) | (np.abs(k2) > grid.n[1] // 4)
    hi = np.broadcast_to(hi, fh.shape[-2:])
    tot = fh.sum()
    return float(fh[..., hi].sum() / tot) if tot > 0 else 0.0


def export_maps(
    problem: ReducedProblem, vc: np.ndarray, tg=None, lattice: int = 16, clamp: Sequence[float] = (0.0, 2.0)
) -> dict[str, np.ndarray]:
    """Residual ``|m_R - m_1|``, clamped ``det F_1`` and deformed lattice coordinates ``y = x - u_1``."""
    tg = tg or problem.time_grid_for(vc)
    _, m_traj = problem.evaluate_objective(vc)
    vt = problem.nodes(vc, tg)
    det = det2(solve_defgrad(vt, problem.grid, tg))
    u = solve_displacement(vt, problem.grid, tg)
    x1, x2 = problem.grid.coords
    step = tuple(max(1, n // lattice) for n in problem.grid.n)
    y = np.stack([x1 - u[0], x2 - u[1]])[:, :: step[0], :: step[1]]
    return {
        "m1": m_traj.final,
        "residual": np.abs(problem.m_reference - m_traj.final),
        "det": det,
        "det_clamped": np.clip(det, *clamp),
        "grid_y": y,
    }
