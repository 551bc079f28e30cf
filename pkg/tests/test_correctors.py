import numpy as np
import pytest

from sklimit import correctors as co
from sklimit.spectral import InvalidConfigError


@pytest.fixture(scope="module")
def case(small_coeffs):
    return co.random_case(small_coeffs, np.random.default_rng(0))


def test_scaling_exponent():
    assert co.scaling(1e-4, 0.25) == pytest.approx(1e-4 ** 0.125, rel=1e-15)
    assert co.scaling(1e-8) / co.scaling(1e-4) == pytest.approx(1e-4 ** 0.125)
    for bad in (0.0, 0.5):
        with pytest.raises(InvalidConfigError):
            co.scaling(0.1, bad)


def test_phi1_matches_definition(case, small_coeffs):
    ctx, v = case
    direct = np.sum((small_coeffs.inverse_friction(ctx.u) @ v) * ctx.h)
    assert co.phi1(ctx, v) == pytest.approx(direct, rel=1e-13)
    assert co.phi1(ctx, 2 * v) == pytest.approx(2 * co.phi1(ctx, v), rel=1e-14)


def test_psi_matches_definition(case, small_coeffs):
    ctx, v = case
    d = small_coeffs.inverse_friction_derivative(ctx.u, v)
    assert co.psi(ctx, v) == pytest.approx(np.sum((d @ v) * ctx.h), rel=1e-12)


def test_generator_identity_for_phi1(case):
    ctx, v = case
    assert abs(co.generator_identity_phi1(ctx, v)) < 1e-13


def test_stationary_mean_equals_drift_pairing(case):
    ctx, _ = case
    a, b = co.stationary_mean_psi(ctx), co.drift_pairing(ctx)
    assert abs(a) > 1e-8
    assert abs(a - b) < 1e-14


@pytest.mark.parametrize("mu", [1e-1, 1e-3])
def test_resolvent_identity_and_ladder(case, mu):
    ctx, v = case
    ladder = co.doubling_ladder(ctx, v, mu)
    assert ladder[co.LADDER.index(co.DEFAULT_NODES)] < 1e-10
    assert co.ladder_converges(ladder)
    assert ladder[0] > 10 * ladder[-1]


def test_phi2_quadrature_routes_agree(case):
    # per-node semigroup evaluation against the closed quadratic form v^T Z v - tr(Z Lambda)
    ctx, v = case
    direct = co.phi2(ctx, v, 1e-2)
    form = ctx.phi2_form(1e-2)
    closed = float(form.value(ctx.vec(v)))
    assert direct.value == pytest.approx(closed, rel=1e-10, abs=1e-16)
    assert direct.tail_bound < 1e-20 and direct.n_nodes == co.DEFAULT_NODES


def test_phi2_envelope(case):
    # ||e^{-Gt}|| <= e^{-gamma0 t}, so |phi2| <= ||P|| (|v|^2 + tr Lambda) / (lam + 2 gamma0)
    ctx, v = case
    z = ctx.vec(v)
    g0 = ctx.coeffs.friction.gamma0
    for mu in (1e-1, 1e-3):
        bound = np.linalg.norm(ctx.psi_form.P, 2) * (z @ z + np.trace(ctx.kernel.Lambda)) \
            / (ctx.lam(mu) + 2 * g0)
        assert abs(co.phi2(ctx, v, mu).value) <= bound


def test_phi2_integrand_decays(case):
    ctx, v = case
    vals = [abs(co.phi2_integrand(ctx, v, t)) for t in (0.0, 2.0, 8.0, 20.0)]
    assert vals[-1] < 1e-12 * max(vals[0], 1e-300) + 1e-25
    assert vals[1] < vals[0]


def test_residual_matrix_consistency(case):
    ctx, v = case
    mu = 1e-2
    r = co.resolvent_residual_matrix(ctx, mu)
    z = ctx.vec(v)
    via_matrix = abs(z @ r @ z - np.sum(r * ctx.kernel.Lambda))
    assert via_matrix == pytest.approx(co.resolvent_identity_phi2(ctx, v, mu), abs=1e-14)


def test_ladder_rule():
    assert co.ladder_converges([1e-3, 1e-5, 1e-7])
    assert co.ladder_converges([1e-6, 1e-8, 3e-15, 5e-15])
    assert not co.ladder_converges([1e-3, 5e-4])
    assert not co.ladder_converges([1e-10, 1e-10])


def test_short_horizon_rejected(small_coeffs):
    sp = small_coeffs.space
    with pytest.raises(InvalidConfigError):
        co.CorrectorContext(small_coeffs, np.zeros(sp.shape), np.ones(sp.shape), horizon=1.0)


def test_validation_battery_small(small_coeffs):
    rows, checks = co.validate_correctors(small_coeffs, mus=(1e-2,), n_cases=2, seed=3)
    assert len(rows) == 2 and all(checks.values())
