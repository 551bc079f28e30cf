import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sklimit.spectral import (Field, InvalidConfigError, PhaseState, build_space,
                              field_from_function, from_collocation, sobolev_norm, to_collocation)

SPACE = build_space(1.0, 8, 2)
coeff_arrays = arrays(np.float64, SPACE.shape, elements=st.floats(-3, 3))


def test_eigenvalues_are_squared_wavenumbers():
    sp = build_space(2.0, 4, 1)
    np.testing.assert_allclose(sp.eigenvalues, (np.arange(1, 5) * np.pi / 2.0) ** 2, rtol=1e-15)


def test_norm_of_single_mode():
    # ||a e_3||_{H^delta} = |a| alpha_3^(delta/2)
    f = SPACE.mode(3, component=1, amplitude=-2.0)
    for delta in (-1.0, 0.0, 0.5, 1.0, 2.0):
        assert f.norm(delta) == pytest.approx(2.0 * (3 * np.pi) ** delta, rel=1e-14)


def test_frozen_norm_example():
    c = np.zeros(SPACE.shape)
    c[0, 0], c[1, 1] = 1.0, 1.0
    # sqrt(pi^2 + 4 pi^2) for delta = 1
    assert sobolev_norm(Field(SPACE, c), 1.0) == pytest.approx(np.sqrt(5) * np.pi, rel=1e-15)


def test_collocation_matches_direct_basis_sum():
    rng = np.random.default_rng(0)
    c = rng.standard_normal(SPACE.shape)
    direct = c @ SPACE.basis_values
    np.testing.assert_allclose(SPACE.to_values(c), direct, atol=1e-13)


@given(coeff_arrays)
def test_collocation_round_trip(c):
    np.testing.assert_allclose(SPACE.from_values(SPACE.to_values(c)), c, atol=1e-12)


@given(coeff_arrays)
def test_parseval(c):
    # L2 norm of the point values by Gauss-Legendre equals the coefficient 2-norm
    x, w = np.polynomial.legendre.leggauss(64)
    x = 0.5 * (x + 1.0)
    idx = np.arange(1, SPACE.n_modes + 1)
    vals = c @ (np.sqrt(2.0) * np.sin(np.outer(idx, x) * np.pi))
    l2 = np.sum(vals**2 * 0.5 * w)
    assert l2 == pytest.approx(SPACE.norm(c, 0.0) ** 2, rel=1e-10, abs=1e-12)


@given(coeff_arrays, st.floats(0, 1), st.floats(-1, 1), st.floats(1, 3))
def test_interpolation_inequality(c, theta, a, b):
    lhs = SPACE.norm(c, theta * a + (1 - theta) * b)
    rhs = SPACE.norm(c, a) ** theta * SPACE.norm(c, b) ** (1 - theta)
    assert lhs <= rhs * (1 + 1e-12) + 1e-300


def test_field_from_function_projects_eigenfunction():
    f = field_from_function(SPACE, lambda x: np.stack([np.sqrt(2) * np.sin(2 * np.pi * x),
                                                        np.zeros_like(x)]))
    expected = np.zeros(SPACE.shape)
    expected[0, 1] = 1.0
    np.testing.assert_allclose(f.coeffs, expected, atol=1e-13)


def test_field_is_immutable_and_checked():
    f = SPACE.mode(1)
    with pytest.raises(ValueError):
        f.coeffs[0, 0] = 2.0
    with pytest.raises(ValueError):
        Field(SPACE, np.full(SPACE.shape, np.nan))
    with pytest.raises(ValueError):
        Field(SPACE, np.zeros((3, 8)))


def test_field_algebra_and_collocation_wrappers():
    a, b = SPACE.mode(1), SPACE.mode(2, 1, 3.0)
    s = 2 * a - b
    assert s.inner(a) == pytest.approx(2.0)
    np.testing.assert_allclose(from_collocation(to_collocation(s), SPACE).coeffs, s.coeffs, atol=1e-13)
    np.testing.assert_allclose(s.laplacian().coeffs, -s.coeffs * SPACE.eigenvalues)


def test_phase_state_energy():
    st_ = PhaseState(SPACE.mode(2, amplitude=1.0), SPACE.mode(2, amplitude=2.0), mass=0.25)
    expected = (2 * np.pi) ** 2 + 0.25 * 4.0
    assert st_.energy_norm_sq(1.0) == pytest.approx(expected)


def test_vec_layout_is_mode_major():
    c = np.arange(SPACE.dim, dtype=float).reshape(SPACE.shape)
    v = SPACE.to_vec(c)
    assert v[1] == c[1, 0] and v[2] == c[0, 1]
    np.testing.assert_array_equal(SPACE.from_vec(v), c)


@pytest.mark.parametrize("args", [(0.0, 4, 1), (1.0, 0, 1), (1.0, 4, 0), (1.0, 4, 1, 2)])
def test_invalid_spaces(args):
    with pytest.raises(InvalidConfigError):
        build_space(*args)
