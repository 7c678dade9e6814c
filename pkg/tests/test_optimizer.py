import math

import numpy as np
import pytest

from flowreg.optimality import ObjectiveReport, ReducedProblem
from flowreg.optimizer import (
    IterationLog,
    IterationRecord,
    LineSearchFailure,
    SolverConfig,
    ZeroGradient,
    armijo_line_search,
    check_convergence,
    outer_loop,
    pcg_solve,
    picard_step,
)
from flowreg.problems import synth_sinusoidal
from flowreg.spectral import Grid2, RegConfig, apply_reg_operator, invert_reg_operator, leray_project
from flowreg.transport import TimeGrid, cfl_number_of


def rec(k, j, g, vdiff=0.0, v=1.0, inner=0, trials=0, n_pde=0):
    return IterationRecord(k, j, j, 0.0, g, vdiff, v, 1.0, 1.0, inner, trials, n_pde)


def smooth_problem(grid, reg=None, n_t=64):
    tg = TimeGrid(n_t)
    prob, vs = synth_sinusoidal(grid, tg)
    return ReducedProblem(prob.m_template, prob.m_reference, reg or RegConfig("h2", 1e-3), grid, tg)


class Quadratic(ReducedProblem):
    """J(v) = 0.5 <v, v>: used to exercise the line search in isolation."""

    def evaluate_objective(self, vc):
        j = 0.5 * self.inner(vc, vc)
        return ObjectiveReport(j, j, 0.0), None


class NegativeCurvature(ReducedProblem):
    def hessian_matvec(self, vtilde, state, gn=False):
        return -vtilde


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="bfgs")
    with pytest.raises(ValueError):
        SolverConfig(stop="never")
    with pytest.raises(ValueError):
        SolverConfig(tau_j=0)
    with pytest.raises(ValueError):
        SolverConfig(n_opt=0)


def test_battery_stopping_rules():
    cfg = SolverConfig(tau_j=1e-3, n_opt=5)
    assert check_convergence(IterationLog([rec(0, 1.0, 0.0)]), cfg)[0]  # C4
    assert check_convergence(IterationLog([rec(0, 1.0, 1.0), rec(6, 1.0, 1.0)]), cfg)[0]  # C5
    assert not check_convergence(IterationLog([rec(0, 1.0, 1.0)]), cfg)[0]  # C1, C2 undefined at k = 0
    # C1 and C2 hold, C3 fails
    hist = IterationLog([rec(0, 1.0, 1.0), rec(1, 1.0 - 1e-4, 1.0, vdiff=1e-4)])
    assert not check_convergence(hist, cfg)[0]
    hist = IterationLog([rec(0, 1.0, 1.0), rec(1, 1.0 - 1e-4, 1e-2, vdiff=1e-4)])
    assert check_convergence(hist, cfg)[0]
    # C1 and C3 hold, C2 fails
    hist = IterationLog([rec(0, 1.0, 1.0), rec(1, 1.0 - 1e-4, 1e-2, vdiff=1.0)])
    assert not check_convergence(hist, cfg)[0]


def test_gradient_reduction_and_stagnation_rules():
    cfg = SolverConfig(stop="gradred", grad_tol=1e-3)
    assert check_convergence(IterationLog([rec(0, 1.0, 1.0), rec(1, 0.5, 1e-3)]), cfg)[0]
    assert not check_convergence(IterationLog([rec(0, 1.0, 1.0), rec(1, 0.5, 2e-3)]), cfg)[0]
    cfg = SolverConfig(stop="stagnation", grad_tol=1e-3)
    flat = IterationLog([rec(k, 1.0 - 1e-8 * k, 1.0) for k in range(11)])
    stop, reason = check_convergence(flat, cfg)
    assert stop and reason.startswith("stagnation")
    assert not check_convergence(IterationLog(flat.records[:10]), cfg)[0]


def test_pcg_zero_gradient(grid16):
    P = smooth_problem(grid16)
    st = P.linearize(P.zeros())
    with pytest.raises(ZeroGradient):
        pcg_solve(st, np.zeros(P.coeff_shape), P, 0.1, gn=True)


def test_pcg_meets_forcing_tolerance(grid16):
    P = smooth_problem(grid16)
    st = P.linearize(P.zeros())
    g = st.gradient
    for rtol in (0.5, 1e-2, 1e-6):
        s, it, neg = pcg_solve(st, g, P, rtol, gn=True)
        r = -g - P.hessian_matvec(s, st, gn=True)
        assert not neg
        assert math.sqrt(P.inner(r, r)) <= rtol * math.sqrt(P.inner(g, g)) * (1 + 1e-8)
        assert P.inner(g, s) < 0


def test_pcg_negative_curvature_fallback(grid16):
    P = smooth_problem(grid16)
    st = P.linearize(P.zeros())
    Q = NegativeCurvature(P.m_template, P.m_reference, P.reg, P.grid, P.time)
    s, it, neg = pcg_solve(st, st.gradient, Q, 1e-3, gn=False)
    assert neg and it == 1
    np.testing.assert_allclose(s, -invert_reg_operator(st.gradient, P.reg, P.grid))


def test_armijo_accepts_full_step_on_quadratic(grid16, rng):
    Q = Quadratic(np.zeros(grid16.n), np.zeros(grid16.n), RegConfig("h2", 1.0), grid16, TimeGrid(4))
    v = np.ones(Q.coeff_shape)
    j0 = 0.5 * Q.inner(v, v)
    alpha, new, trials, rep, _ = armijo_line_search(v, -v, j0, -Q.inner(v, v), Q, SolverConfig())
    assert alpha == 1.0 and trials == 1 and rep.j == 0.0


def test_armijo_backtracks_and_fails(grid16):
    Q = Quadratic(np.zeros(grid16.n), np.zeros(grid16.n), RegConfig("h2", 1.0), grid16, TimeGrid(4))
    v = np.ones(Q.coeff_shape)
    j0 = 0.5 * Q.inner(v, v)
    alpha, _, trials, _, _ = armijo_line_search(v, -4 * v, j0, -4 * Q.inner(v, v), Q, SolverConfig())
    assert alpha == 0.25 and trials == 3
    with pytest.raises(LineSearchFailure):
        armijo_line_search(v, v, j0, Q.inner(v, v), Q, SolverConfig())
    # a descent slope that the objective never honours exhausts the halvings
    with pytest.raises(LineSearchFailure):
        armijo_line_search(v, v, j0, -1.0, Q, SolverConfig())


def test_picard_step_identity(grid16, rng):
    P = smooth_problem(grid16, RegConfig.stokes(1e-2))
    v = leray_project(0.1 * rng.standard_normal(P.coeff_shape), grid16)
    st = P.linearize(v)
    step = picard_step(st, P)
    # fixed-point form: candidate = -(beta A)^{-1} K[f], step = candidate - v on nonconstant modes
    force = st.gradient - P.reg.beta * apply_reg_operator(v, P.reg, grid16)
    candidate = -invert_reg_operator(force, P.reg, grid16)
    diff = candidate - v - step
    diff -= diff.mean(axis=(-2, -1), keepdims=True)
    assert np.abs(diff).max() <= 1e-10
    assert P.inner(st.gradient, step) < 0


def test_picard_step_vanishes_at_stationary_point(grid16, rng):
    m = rng.random(grid16.n)
    P = ReducedProblem(m, m, RegConfig("h2", 1e-3), grid16, TimeGrid(8))
    st = P.linearize(P.zeros())
    assert np.abs(picard_step(st, P)).max() == 0


def test_identical_images_stop_immediately(grid16, rng):
    m = rng.random(grid16.n)
    P = ReducedProblem(m, m, RegConfig("h2", 1e-3), grid16, TimeGrid(8))
    res = outer_loop(P, SolverConfig())
    assert res.status == "converged" and res.log.iterations == 0
    assert res.reason.startswith("C4")


@pytest.mark.parametrize("method", ["gnpcg", "npcg", "picard"])
def test_outer_loop_invariants(grid16, method):
    P = smooth_problem(grid16)
    seen = []
    cfg = SolverConfig(method=method, stop="gradred", grad_tol=1e-2, n_opt=40)
    res = outer_loop(P, cfg, callback=seen.append)
    recs = res.log.records
    assert seen == recs
    js = [r.j for r in recs]
    assert all(b <= a for a, b in zip(js, js[1:]))
    assert res.log.n_pde == sum(2 + 2 * r.inner + r.trials for r in recs)
    if method != "picard":
        assert res.status == "converged" and res.log.mean_trials == 1.0
        assert any(r.inner > 0 for r in recs)


def test_picard_step_memory_rule(grid16):
    P = smooth_problem(grid16)
    res = outer_loop(P, SolverConfig(method="picard", stop="gradred", grad_tol=1e-2, n_opt=15))
    recs = res.log.records
    for prev, cur in zip(recs[1:], recs[2:]):
        # each record carries the step length of the step that produced it and the updated memory
        expected = prev.alpha_tilde * cur.alpha if cur.alpha < 1 else 2 * prev.alpha_tilde
        assert cur.alpha_tilde == pytest.approx(expected)


def test_cfl_prescaling_keeps_iterates_stable(grid16):
    P = smooth_problem(grid16, RegConfig("h2", 1e-6), n_t=4)
    res = outer_loop(P, SolverConfig(method="gnpcg", stop="gradred", n_opt=3))
    assert cfl_number_of(P.nodes(res.vc, P.time), grid16, P.time) <= P.time.cfl_number


def test_iteration_cap_in_gradred_mode_is_stagnation(grid16):
    P = smooth_problem(grid16)
    res = outer_loop(P, SolverConfig(method="picard", stop="gradred", grad_tol=1e-12, n_opt=2))
    assert res.status == "stagnation" and res.log.records[-1].k == 3
