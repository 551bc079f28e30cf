import numpy as np
import pytest
import scipy.linalg

from sklimit import parabolic
from sklimit.coefficients import DEFAULT_BASE, CutoffModel, constant_coefficients, default_coefficients
from sklimit.noise import NoisePath, make_paths
from sklimit.spectral import Field, InvalidConfigError, build_space

SPACE = build_space(1.0, 4, 2)


def u_init():
    u = np.zeros(SPACE.shape)
    u[0, 0], u[1, 1] = 0.5, 0.3
    return u


def heat_error(dt, horizon=0.2):
    coeffs = constant_coefficients(SPACE, noise_scale=0.0, forcing=False)
    cfg = parabolic.LimitRunConfig(dt, horizon, coeffs, u_init(), output_stride=10**9)
    traj = parabolic.simulate(cfg, NoisePath(1, dt, horizon, SPACE.shape))
    minv = np.linalg.inv(DEFAULT_BASE)
    exact = np.stack([scipy.linalg.expm(-a * minv * horizon) @ u_init()[:, i]
                      for i, a in enumerate(SPACE.eigenvalues)], axis=1)
    return np.max(np.abs(traj.u[-1] - exact))


def test_heat_mode_decay_first_order():
    errs = [heat_error(dt) for dt in (4e-3, 2e-3, 1e-3)]
    assert all(1.7 < a / b < 2.3 for a, b in zip(errs[:-1], errs[1:])), errs


def test_constant_friction_drift_switch_is_inert():
    coeffs = constant_coefficients(SPACE)
    paths = make_paths([1, 2], 1e-3, 0.05, SPACE.shape)
    runs = [parabolic.simulate(parabolic.LimitRunConfig(1e-3, 0.05, coeffs, u_init(), include_drift=d),
                               paths) for d in (True, False)]
    np.testing.assert_array_equal(runs[0].u, runs[1].u)


def test_drift_switch_matters_for_state_dependent_friction():
    coeffs = default_coefficients(SPACE)
    paths = make_paths([1], 1e-3, 0.05, SPACE.shape)
    a, b = (parabolic.simulate(parabolic.LimitRunConfig(1e-3, 0.05, coeffs, u_init(), include_drift=d),
                               paths) for d in (True, False))
    assert np.max(np.abs(a.u - b.u)) > 1e-8


def test_drift_routes_give_same_trajectory():
    coeffs = default_coefficients(SPACE)
    paths = make_paths([1, 2], 1e-3, 0.05, SPACE.shape)
    a, b = (parabolic.simulate(parabolic.LimitRunConfig(1e-3, 0.05, coeffs, u_init(), drift_method=m),
                               paths) for m in ("spectral", "contract"))
    np.testing.assert_allclose(a.u, b.u, atol=1e-13)


def test_large_cutoff_radius_changes_nothing():
    coeffs = default_coefficients(SPACE)
    cut = coeffs.with_cutoff(CutoffModel(50.0))
    paths = make_paths([3], 1e-3, 0.05, SPACE.shape)
    a, b = (parabolic.simulate(parabolic.LimitRunConfig(1e-3, 0.05, c, u_init()), paths)
            for c in (coeffs, cut))
    np.testing.assert_allclose(a.u, b.u, atol=1e-13)


def test_step_matches_simulate():
    coeffs = default_coefficients(SPACE)
    path = NoisePath(4, 1e-3, 0.01, SPACE.shape)
    cfg = parabolic.LimitRunConfig(2e-3, 2e-3, coeffs, u_init(), output_stride=1)
    traj = parabolic.simulate(cfg, path)
    nxt = parabolic.step(Field(SPACE, u_init()), cfg, path, 0)
    np.testing.assert_allclose(nxt.coeffs, traj.u[-1], atol=1e-15)
    assert traj.ledger.functionals()["sup_u_h1"].shape == (1,)


def test_invalid_limit_config():
    coeffs = default_coefficients(SPACE)
    for kw in (dict(dt=0.0), dict(drift_lag=0), dict(drift_method="x")):
        args = dict(dt=1e-3, horizon=0.1, coeffs=coeffs, u0=u_init()) | kw
        with pytest.raises(InvalidConfigError):
            parabolic.LimitRunConfig(**args)
