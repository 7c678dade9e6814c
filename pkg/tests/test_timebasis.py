import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import legendre as L

from flowreg.timebasis import (
    ChebBasis,
    LengthMismatch,
    OutOfRange,
    eval_basis,
    expand_velocity,
    fit_coefficients,
    project_time_integral,
    velocity_nodes,
)


@pytest.mark.parametrize("n_c", [1, 2, 4, 8, 16])
def test_gram_is_identity(n_c):
    np.testing.assert_allclose(ChebBasis(n_c).gram, np.eye(n_c), atol=1e-12)


def test_orthonormality_with_independent_quadrature():
    # oracle: high-order Gauss-Legendre rule, independent of the basis' own rule
    b = ChebBasis(6)
    x, w = L.leggauss(40)
    t, w = 0.5 * (x + 1), 0.5 * w
    B = eval_basis(b, t)
    np.testing.assert_allclose((B * w) @ B.T, np.eye(6), atol=1e-12)


def test_basis_is_normalized_shifted_legendre():
    b = ChebBasis(4)
    t = np.linspace(0, 1, 11)
    for k in range(4):
        leg = L.legval(2 * t - 1, np.eye(4)[k]) * np.sqrt(2 * k + 1)
        sign = np.sign(eval_basis(b, [1.0])[k, 0])
        np.testing.assert_allclose(eval_basis(b, t)[k], sign * leg, atol=1e-12)


def test_first_basis_function_is_one():
    np.testing.assert_allclose(eval_basis(ChebBasis(3), [0.0, 0.3, 1.0])[0], 1.0)


def test_out_of_range():
    with pytest.raises(OutOfRange):
        eval_basis(ChebBasis(2), [1.5])
    with pytest.raises(ValueError):
        ChebBasis(0)


def test_cgl_nodes():
    np.testing.assert_allclose(ChebBasis(3).cgl_nodes, [0.0, 0.5, 1.0], atol=1e-15)
    assert ChebBasis(1).cgl_nodes.tolist() == [0.0, 1.0]


def test_stationary_expansion_is_broadcast(rng):
    c = rng.standard_normal((1, 2, 4, 4))
    vt = velocity_nodes(c, ChebBasis(1), np.linspace(0, 1, 5))
    assert vt.strides[0] == 0
    np.testing.assert_allclose(vt[3], c[0])


def test_expand_matches_nodes(rng):
    b = ChebBasis(3)
    c = rng.standard_normal((3, 2, 4, 4))
    vt = velocity_nodes(c, b, np.array([0.0, 0.25, 1.0]))
    np.testing.assert_allclose(expand_velocity(c, b, 0.25), vt[1], atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_c=st.integers(1, 5))
def test_fit_roundtrip(seed, n_c):
    b = ChebBasis(n_c)
    c = np.random.default_rng(seed).standard_normal((n_c, 2, 4, 4))
    t = np.linspace(0, 1, 3 * n_c + 2)
    np.testing.assert_allclose(fit_coefficients(velocity_nodes(c, b, t), b, t), c, atol=1e-10)


def test_projection_recovers_coefficients(rng):
    # the trapezoid projection of the expansion converges to the coefficients at O(h^2)
    b = ChebBasis(3)
    c = rng.standard_normal((3, 2, 4, 4))
    errs = []
    for n in (64, 128):
        t = np.linspace(0, 1, n + 1)
        errs.append(np.abs(project_time_integral(velocity_nodes(c, b, t), b, t) - c).max())
    assert errs[1] < 1e-2
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_projection_length_mismatch():
    with pytest.raises(LengthMismatch):
        project_time_integral(np.zeros((3, 2, 4, 4)), ChebBasis(2), np.linspace(0, 1, 4))
