import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowreg.spectral import Grid2, inner
from flowreg.transport import (
    CflViolation,
    TimeGrid,
    adaptive_time_grid,
    cfl_max_dt,
    solve_adjoint,
    solve_defgrad,
    solve_displacement,
    solve_incremental_adjoint,
    solve_incremental_state,
    solve_state,
)


def stationary(v, tg):
    return np.broadcast_to(v, (tg.n_t + 1, *v.shape))


def shift_oracle(s, a, grid):
    """s(x - a) for a band-limited field, evaluated exactly in Fourier space."""
    k1, k2 = grid._k
    return grid.ifft(grid.fft(s) * np.exp(-1j * (k1 * a[0] + k2 * a[1])))


def test_time_grid():
    tg = TimeGrid(4)
    assert tg.h_t == 0.25
    np.testing.assert_allclose(tg.times, [0, 0.25, 0.5, 0.75, 1])
    assert tg.trapezoid_weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TimeGrid(0)


def test_cfl_helpers(grid32):
    assert cfl_max_dt((0.0, 0.0), grid32) == np.inf
    assert cfl_max_dt((1.0, 0.5), grid32, 0.2) == pytest.approx(0.2 * grid32.h[0])
    tg = adaptive_time_grid((1.0, 0.0), grid32, 0.2)
    assert tg.n_t == int(np.ceil(1 / (0.2 * grid32.h[0])))
    assert adaptive_time_grid((0.0, 0.0), grid32, n_min=3).n_t == 3


def test_cfl_violation(grid32):
    tg = TimeGrid(4)
    v = np.ones((2, *grid32.n))
    with pytest.raises(CflViolation):
        solve_state(np.zeros(grid32.n), stationary(v, tg), grid32, tg)


def test_zero_velocity_is_identity(grid16, rng):
    tg = TimeGrid(8)
    m0 = rng.standard_normal(grid16.n)
    traj = solve_state(m0, np.zeros((9, 2, *grid16.n)), grid16, tg)
    np.testing.assert_array_equal(traj.final, m0)


def test_constant_velocity_translates(grid32):
    x1, x2 = grid32.coords
    m0 = np.sin(x1) * np.cos(2 * x2)
    a = np.array([0.3, -0.2])
    tg = TimeGrid(256)
    v = a[:, None, None] * np.ones((2, *grid32.n))
    m1 = solve_state(m0, stationary(v, tg), grid32, tg).final
    np.testing.assert_allclose(m1, shift_oracle(m0, a, grid32), atol=1e-6)
    lam0 = solve_adjoint(m0, stationary(v, tg), grid32, tg).initial
    np.testing.assert_allclose(lam0, shift_oracle(m0, -a, grid32), atol=1e-6)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_adjoint_is_discrete_transpose(seed):
    # for a fixed velocity the state map is linear; the adjoint solve must be its transpose
    g = Grid2.square(8)
    rng = np.random.default_rng(seed)
    tg = TimeGrid(16)
    vt = 0.05 * rng.standard_normal((tg.n_t + 1, 2, *g.n))
    m0, lam1 = rng.standard_normal(g.n), rng.standard_normal(g.n)
    lhs = inner(solve_state(m0, vt, g, tg).final, lam1, g)
    rhs = inner(m0, solve_adjoint(lam1, vt, g, tg).initial, g)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_adjoint_conserves_mass(grid16, rng):
    tg = TimeGrid(32)
    vt = 0.1 * rng.standard_normal((tg.n_t + 1, 2, *grid16.n))
    lam1 = rng.standard_normal(grid16.n)
    lam0 = solve_adjoint(lam1, vt, grid16, tg).initial
    assert lam0.sum() == pytest.approx(lam1.sum(), abs=1e-10)


def test_incremental_state_is_linearization(grid16, rng):
    tg = TimeGrid(32)
    x1, x2 = grid16.coords
    m0 = np.sin(x1) * np.sin(2 * x2)
    vt = 0.2 * rng.standard_normal((tg.n_t + 1, 2, *grid16.n))
    wt = rng.standard_normal((tg.n_t + 1, 2, *grid16.n))
    m_traj = solve_state(m0, vt, grid16, tg)
    inc = solve_incremental_state(vt, wt, m_traj, grid16, tg).final
    eps = 1e-6
    fd = (solve_state(m0, vt + eps * wt, grid16, tg).final - solve_state(m0, vt - eps * wt, grid16, tg).final) / (2 * eps)
    np.testing.assert_allclose(inc, fd, atol=1e-7 * np.abs(fd).max())


def test_gauss_newton_incremental_adjoint_ignores_lambda(grid16, rng):
    tg = TimeGrid(16)
    vt = 0.1 * rng.standard_normal((tg.n_t + 1, 2, *grid16.n))
    wt = rng.standard_normal((tg.n_t + 1, 2, *grid16.n))
    l1 = rng.standard_normal(grid16.n)
    gn = solve_incremental_adjoint(l1, vt, wt, None, grid16, tg, gn=True)
    plain = solve_adjoint(l1, vt, grid16, tg)
    np.testing.assert_allclose(gn.frames, plain.frames, atol=1e-13)
    with pytest.raises(ValueError):
        solve_incremental_adjoint(l1, vt, wt, None, grid16, tg, gn=False)


def test_shear_flow_deformation(grid32):
    # v = (a sin x2, 0): u_1 = v and F_1 = [[1, a cos x2], [0, 1]] exactly
    x1, x2 = grid32.coords
    a = 0.3
    v = np.stack([a * np.sin(x2), np.zeros_like(x2)])
    tg = TimeGrid(64)
    F = solve_defgrad(stationary(v, tg), grid32, tg)
    np.testing.assert_allclose(F[0, 0], 1, atol=1e-12)
    np.testing.assert_allclose(F[0, 1], a * np.cos(x2), atol=1e-12)
    np.testing.assert_allclose(F[1, 0], 0, atol=1e-12)
    np.testing.assert_allclose(F[1, 1], 1, atol=1e-12)
    u = solve_displacement(stationary(v, tg), grid32, tg)
    np.testing.assert_allclose(u, v, atol=1e-12)


def test_constant_velocity_displacement(grid16):
    tg = TimeGrid(8)
    v = np.stack([0.2 * np.ones(grid16.n), -0.1 * np.ones(grid16.n)])
    np.testing.assert_allclose(solve_displacement(stationary(v, tg), grid16, tg), v, atol=1e-13)
    F = solve_defgrad(stationary(v, tg), grid16, tg)
    np.testing.assert_allclose(F, np.eye(2)[:, :, None, None] * np.ones(grid16.n), atol=1e-13)


def test_oversampling_is_exact_on_resolved_fields(grid32):
    x1, x2 = grid32.coords
    v = np.stack([0.3 * np.sin(x2), np.zeros_like(x2)])
    tg = TimeGrid(32)
    a = solve_defgrad(stationary(v, tg), grid32, tg, pad=1)
    b = solve_defgrad(stationary(v, tg), grid32, tg, pad=2)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_divergence_free_flow_preserves_volume(grid32):
    x1, x2 = grid32.coords
    v = np.stack([0.25 * np.sin(x1) * np.cos(x2), -0.25 * np.cos(x1) * np.sin(x2)])
    tg = TimeGrid(128)
    F = solve_defgrad(stationary(v, tg), grid32, tg)
    det = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    assert np.abs(det - 1).max() < 1e-5
