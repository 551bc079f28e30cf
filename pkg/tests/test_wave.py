import numpy as np
import pytest
import scipy.linalg

from sklimit import wave
from sklimit.coefficients import DEFAULT_BASE, constant_coefficients, default_coefficients
from sklimit.noise import NoisePath, make_paths
from sklimit.spectral import Field, InvalidConfigError, PhaseState, build_space

SPACE = build_space(1.0, 4, 2)
QUIET = constant_coefficients(SPACE, noise_scale=0.0, forcing=False)


def u_init():
    u = np.zeros(SPACE.shape)
    u[0, 0], u[1, 1] = 0.5, 0.3
    return u


def test_rotation_invariant_and_composition():
    rng = np.random.default_rng(0)
    u, v = rng.standard_normal(SPACE.shape), rng.standard_normal(SPACE.shape)
    mu, a = 0.01, SPACE.eigenvalues
    e0 = a * u**2 + mu * v**2
    uu, vv = u, v
    for _ in range(1000):
        uu, vv = wave.group_rotate(SPACE, mu, uu, vv, 1.3e-3)
    assert np.max(np.abs(a * uu**2 + mu * vv**2 - e0) / e0) < 1e-12
    u2, v2 = wave.group_rotate(SPACE, mu, *wave.group_rotate(SPACE, mu, u, v, 0.2), 0.3)
    u3, v3 = wave.group_rotate(SPACE, mu, u, v, 0.5)
    np.testing.assert_allclose(u2, u3, atol=1e-12)
    np.testing.assert_allclose(v2, v3, atol=1e-10)


def test_group_step_period():
    st = PhaseState(SPACE.mode(1), SPACE.zeros(), mass=0.5)
    period = 2 * np.pi / np.sqrt(SPACE.eigenvalues[0] / 0.5)
    back = wave.group_step(st, period)
    np.testing.assert_allclose(back.u.coeffs, st.u.coeffs, atol=1e-14)


def damped_oscillator_error(dt, mu=0.1, horizon=0.5):
    path = NoisePath(1, dt, horizon, SPACE.shape)
    cfg = wave.WaveRunConfig(mu, horizon, QUIET, u_init(), dt=dt, output_stride=10**9)
    traj = wave.simulate(cfg, path)
    g = DEFAULT_BASE
    exact = np.zeros(SPACE.shape)
    for i, a in enumerate(SPACE.eigenvalues):
        gen = np.block([[np.zeros((2, 2)), np.eye(2)], [-a / mu * np.eye(2), -g / mu]])
        y = scipy.linalg.expm(gen * horizon) @ np.concatenate([u_init()[:, i], np.zeros(2)])
        exact[:, i] = y[:2]
    return np.max(np.abs(traj.u[-1] - exact))


def test_damped_oscillator_converges_at_least_first_order():
    errs = [damped_oscillator_error(dt) for dt in (2e-3, 1e-3, 5e-4)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert errs[-1] < 5e-3
    assert all(r > 1.8 for r in ratios), ratios


def test_noise_free_energy_dissipates():
    path = NoisePath(1, 1e-3, 0.5, SPACE.shape)
    cfg = wave.WaveRunConfig(0.05, 0.5, QUIET, u_init(), dt=1e-3, output_stride=1)
    traj = wave.simulate(cfg, path)
    e = np.sum(SPACE.eigenvalues * traj.u**2, axis=(-1, -2)) + 0.05 * np.sum(traj.v**2, axis=(-1, -2))
    assert np.all(np.diff(e) <= 1e-12 * e[0])
    assert e[-1] < 0.5 * e[0]


def test_stable_dt_rule():
    coeffs = default_coefficients(SPACE)
    mu = 1e-3
    expect = min(1e-2, 0.5 * np.sqrt(mu / SPACE.eigenvalues[-1]), 0.05 * mu / coeffs.friction.bound())
    assert wave.stable_dt(mu, SPACE, coeffs) == pytest.approx(expect, rel=1e-15)
    assert wave.stable_dt(mu, SPACE) == pytest.approx(min(1e-2, 0.5 * np.sqrt(mu) / (4 * np.pi)))


def test_resolved_step_is_power_of_two_multiple():
    coeffs = default_coefficients(SPACE)
    batch = make_paths([1], 1e-5, 0.01, SPACE.shape)
    cfg = wave.WaveRunConfig(0.01, 0.01, coeffs, u_init())
    dt = wave.resolve_dt(cfg, batch)
    k = round(dt / 1e-5)
    assert k & (k - 1) == 0 and dt <= wave.stable_dt(0.01, SPACE, coeffs) and 2 * dt > wave.stable_dt(0.01, SPACE, coeffs)
    with pytest.raises(InvalidConfigError):
        wave.dt_multiple(1.5e-5, 1e-5)


def test_batched_run_matches_single_runs_and_is_deterministic():
    coeffs = default_coefficients(SPACE)
    seeds = [5, 6]
    cfg = wave.WaveRunConfig(0.05, 0.05, coeffs, u_init(), dt=4e-4, output_stride=25)
    batch = wave.simulate(cfg, make_paths(seeds, 2e-4, 0.05, SPACE.shape))
    again = wave.simulate(cfg, make_paths(seeds, 2e-4, 0.05, SPACE.shape))
    np.testing.assert_array_equal(batch.u, again.u)
    for i, s in enumerate(seeds):
        single = wave.simulate(cfg, NoisePath(s, 2e-4, 0.05, SPACE.shape))
        np.testing.assert_allclose(batch.u[:, i], single.u, atol=1e-13)
    assert batch.times[-1] == pytest.approx(0.05)


def test_step_matches_simulate():
    coeffs = default_coefficients(SPACE)
    path = NoisePath(3, 1e-4, 0.01, SPACE.shape)
    cfg = wave.WaveRunConfig(0.05, 2e-4, coeffs, u_init(), dt=2e-4, output_stride=1)
    traj = wave.simulate(cfg, path)
    st = PhaseState(Field(SPACE, u_init()), SPACE.zeros(), 0.05)
    nxt = wave.step(st, cfg, path, 0)
    np.testing.assert_allclose(nxt.u.coeffs, traj.u[-1], atol=1e-15)
    np.testing.assert_allclose(nxt.v.coeffs, traj.v[-1], atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reported():
    coeffs = default_coefficients(SPACE)
    bad = u_init()
    bad[0, 0] = np.inf
    path = NoisePath(3, 1e-4, 0.01, SPACE.shape)
    with pytest.raises(wave.BlowUpError):
        wave.simulate(wave.WaveRunConfig(0.05, 1e-3, coeffs, bad, dt=1e-4), path)
    traj = wave.simulate(wave.WaveRunConfig(0.05, 1e-3, coeffs, bad, dt=1e-4, raise_on_blowup=False),
                         make_paths([3, 4], 1e-4, 0.01, SPACE.shape))
    assert traj.failed.all()


def test_energy_ledger_functionals_are_finite_and_consistent():
    coeffs = default_coefficients(SPACE)
    cfg = wave.WaveRunConfig(0.05, 0.02, coeffs, u_init(), dt=2e-4, output_stride=1)
    traj = wave.simulate(cfg, make_paths([1, 2], 2e-4, 0.02, SPACE.shape))
    f = traj.ledger.functionals()
    assert all(np.all(np.isfinite(x)) and x.shape == (2,) for x in f.values())
    sup_u2 = np.max(np.sum(SPACE.eigenvalues**2 * traj.u**2, axis=(-1, -2)), axis=0)
    np.testing.assert_allclose(f["sqrt_mu_sup_h2"], np.sqrt(0.05) * sup_u2, rtol=1e-14)


def test_snapshot_round_trip(tmp_path):
    states = np.random.default_rng(0).standard_normal((3,) + SPACE.shape)
    p = tmp_path / "snap.csv"
    wave.write_snapshots(p, np.array([0.0, 0.1, 0.2]), states, space=SPACE, seed=9, mass=0.01,
                         chash="abc")
    header, t, back = wave.read_snapshots(p)
    assert header["seed"] == "9" and header["config_hash"] == "abc"
    np.testing.assert_array_equal(back, states)
    np.testing.assert_array_equal(t, [0.0, 0.1, 0.2])


def test_invalid_wave_config():
    with pytest.raises(InvalidConfigError):
        wave.WaveRunConfig(0.0, 1.0, QUIET, u_init())
    with pytest.raises(InvalidConfigError):
        wave.simulate(wave.WaveRunConfig(0.1, 1.0, QUIET, u_init(), dt=1e-3),
                      NoisePath(1, 1e-3, 0.5, SPACE.shape))
