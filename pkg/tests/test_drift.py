import numpy as np
import pytest
from hypothesis import given, strategies as st

from sklimit.coefficients import (Coefficients, constant_coefficients, default_coefficients,
                                  scalar_nonlocal_friction, tanh_diffusion, zero_forcing)
from sklimit.drift import (DriftResult, drift, drift_batch, drift_contract, drift_lipschitz_probe,
                           drift_monte_carlo, drift_spectral, stationary_process_oracle)
from sklimit.noise import NoisePath
from sklimit.ou import noise_gram
from sklimit.spectral import Field, build_space

from conftest import smooth_field


def test_spectral_and_contract_routes_agree(small_coeffs):
    u = smooth_field(np.random.default_rng(0), small_coeffs.space)
    a = drift_spectral(u, small_coeffs).value.coeffs
    b = drift_contract(u, small_coeffs).value.coeffs
    assert np.max(np.abs(a)) > 1e-6
    np.testing.assert_allclose(a, b, atol=1e-15 + 1e-12 * np.max(np.abs(a)))


@pytest.mark.parametrize("method", ["spectral", "contract"])
def test_batched_drift_matches_single(small_coeffs, method):
    u = np.stack([smooth_field(np.random.default_rng(s), small_coeffs.space) for s in range(3)])
    batch = drift_batch(small_coeffs, u, method)
    for i in range(3):
        np.testing.assert_allclose(batch[i], drift_spectral(u[i], small_coeffs).value.coeffs,
                                   atol=1e-15)


def test_scalar_closed_form():
    # r = 1, g(u) = g0 + a tanh(s), s = <u, e1>_{H^1}: Lambda = B / (2 g) and
    # S = -(a sech^2(s) / g^2) Lambda (alpha * e1)
    sp = build_space(1.0, 6, 1)
    g0, a = 2.0, 0.8
    coeffs = Coefficients(scalar_nonlocal_friction(sp, g0, a), zero_forcing(), tanh_diffusion(sp))
    u = smooth_field(np.random.default_rng(1), sp, 0.03)
    s = np.pi**2 * u[0, 0]
    g = g0 + a * np.tanh(s)
    lam = noise_gram(u, coeffs) / (2 * g)
    w = np.zeros(sp.dim)
    w[0] = sp.eigenvalues[0]
    expect = -(a / np.cosh(s) ** 2 / g**2) * (lam @ w)
    np.testing.assert_allclose(drift_spectral(u, coeffs).value.coeffs[0], expect, rtol=1e-12)


def test_constant_friction_has_zero_drift(small_space):
    coeffs = constant_coefficients(small_space)
    u = smooth_field(np.random.default_rng(2), small_space, 0.5)
    assert not np.any(drift_spectral(u, coeffs).value.coeffs)
    assert not np.any(drift_batch(coeffs, u[None]))
    assert not np.any(drift_spectral(u, default_coefficients(small_space, friction_amplitude=0.0)).value.coeffs)


@given(st.floats(0.1, 5.0))
def test_drift_is_quadratic_in_noise_amplitude(scale):
    sp = build_space(1.0, 6, 2)
    u = smooth_field(np.random.default_rng(3), sp)
    s1 = drift_spectral(u, default_coefficients(sp)).value.coeffs
    ss = drift_spectral(u, default_coefficients(sp, noise_scale=scale)).value.coeffs
    np.testing.assert_allclose(ss, scale**2 * s1, rtol=1e-10, atol=1e-20)


def test_monte_carlo_and_ergodic_agree_with_spectral(small_coeffs):
    u = smooth_field(np.random.default_rng(4), small_coeffs.space)
    spec = drift_spectral(u, small_coeffs)
    mc = drift_monte_carlo(u, small_coeffs, 200000, np.random.default_rng(5))
    path = NoisePath(11, 0.1, 1010.0, small_coeffs.space.shape)
    erg = stationary_process_oracle(u, small_coeffs, path, 10.0, 1000.0)
    assert mc.sample_count == 200000 and mc.stderr.shape == small_coeffs.space.shape
    assert spec.agrees_with(mc) and spec.agrees_with(erg) and mc.agrees_with(erg)
    # and the check is not vacuous: the signal exceeds the Monte-Carlo error
    assert np.linalg.norm(spec.value.coeffs) > 3 * mc.error_estimate


def test_agreement_check_rejects_wrong_value(small_coeffs):
    u = smooth_field(np.random.default_rng(4), small_coeffs.space)
    spec = drift_spectral(u, small_coeffs)
    mc = drift_monte_carlo(u, small_coeffs, 200000, np.random.default_rng(5))
    wrong = DriftResult(spec.value * 1.5, "scaled")
    assert not wrong.agrees_with(mc)


def test_oracle_argument_checks(small_coeffs):
    u = np.zeros(small_coeffs.space.shape)
    path = NoisePath(1, 0.1, 50.0, small_coeffs.space.shape)
    with pytest.raises(ValueError):
        stationary_process_oracle(u, small_coeffs, path, 1.0, 10.0)
    with pytest.raises(ValueError):
        stationary_process_oracle(u, small_coeffs, path, 10.0, 100.0)
    with pytest.raises(ValueError):
        drift_monte_carlo(u, small_coeffs, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        drift(u, small_coeffs, "nope")


@given(st.integers(0, 2**31), st.floats(1e-3, 1.0))
def test_lipschitz_ratio_bounded(seed, sep):
    sp = build_space(1.0, 6, 2)
    coeffs = default_coefficients(sp)
    rng = np.random.default_rng(seed)
    u1 = smooth_field(rng, sp, 0.1)
    u2 = u1 + sep * smooth_field(rng, sp, 0.1)
    if sp.norm(u1 - u2, 1.0) == 0:
        return
    assert 0 <= drift_lipschitz_probe(u1, u2, coeffs) < 1.0


def test_lipschitz_probe_rejects_equal_fields(small_coeffs):
    u = np.zeros(small_coeffs.space.shape)
    with pytest.raises(ValueError):
        drift_lipschitz_probe(u, u, small_coeffs)


def test_dispatch(small_coeffs):
    u = Field(small_coeffs.space, smooth_field(np.random.default_rng(6), small_coeffs.space))
    a = drift(u, small_coeffs, "spectral").value.coeffs
    b = drift(u, small_coeffs, "contract").value.coeffs
    c = drift(u, small_coeffs, "monte_carlo", n_samples=1000, rng=np.random.default_rng(0))
    np.testing.assert_allclose(a, b, atol=1e-15)
    assert c.method == "monte_carlo"
