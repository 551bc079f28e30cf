"""Semi-implicit integrator for the limiting quasilinear equation

    du = g_R^{-1}(u) [Delta u + f_R(u)] dt + S_R(u) dt + g_R^{-1}(u) sigma_R(u) dw^Q.

Per step: M = g_R^{-1}(u_n); for each mode i solve
(I + dt alpha_i M) u_{n+1,i} = u_{n,i} + dt [M f_R(u_n) + S_R(u_n)]_i + [M sigma_R(u_n) dw_n]_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import Coefficients
from .drift import drift_batch
from .noise import as_batch
from .spectral import Field, InvalidConfigError, SpectralSpace
from .wave import BlowUpError, Trajectory, dt_multiple, snapshot_steps


@dataclass
class LimitRunConfig:
    dt: float
    horizon: float
    coeffs: Coefficients
    u0: np.ndarray
    include_drift: bool = True
    drift_method: str = "spectral"
    drift_lag: int = 1  # recompute S every drift_lag steps
    output_stride: int = 100
    snapshot_times: np.ndarray | None = None
    raise_on_blowup: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidConfigError("dt must be positive")
        if self.horizon < 0:
            raise InvalidConfigError("horizon must be nonnegative")
        if self.drift_lag < 1:
            raise InvalidConfigError("drift_lag must be >= 1")
        if self.drift_method not in ("spectral", "contract"):
            raise InvalidConfigError(f"unknown drift method {self.drift_method!r}")

    @property
    def space(self) -> SpectralSpace:
        return self.coeffs.space


class LimitLedger:
    """sup ||u||^2_{H^1}, int ||u||^2_{H^2} dt and sup ||u||^2_{H^0} per replica."""

    def __init__(self, space: SpectralSpace, u0: np.ndarray):
        self.space = space
        b = u0.shape[:-2]
        self.sup_h0 = np.zeros(b)
        self.sup_h1 = np.zeros(b)
        self.int_h2 = np.zeros(b)
        self._last = None
        self.observe(u0, 0.0)

    def observe(self, u, dt):
        sp = self.space
        h0, h1, h2 = sp.norm_sq(u, 0), sp.norm_sq(u, 1), sp.norm_sq(u, 2)
        np.maximum(self.sup_h0, h0, out=self.sup_h0)
        np.maximum(self.sup_h1, h1, out=self.sup_h1)
        if self._last is not None:
            self.int_h2 += 0.5 * dt * (h2 + self._last)
        self._last = h2

    def functionals(self) -> dict[str, np.ndarray]:
        return {"sup_u_h1": self.sup_h1, "int_u_h2": self.int_h2,
                "energy_h1": self.sup_h1 + self.int_h2}


def _step_arrays(coeffs: Coefficients, u, dw, dt, s):
    sp = coeffs.space
    m = coeffs.inverse_friction(u)  # (..., r, r)
    rhs = u + dt * np.einsum("...ab,...bi->...ai", m, coeffs.forcing_coeffs(u))
    if s is not None:
        rhs = rhs + dt * s
    rhs = rhs + np.einsum("...ab,...bi->...ai", m, coeffs.sigma_apply(u, dw))
    r = sp.n_components
    # system matrices (..., N, r, r): I + dt alpha_i M
    mats = np.eye(r) + dt * sp.eigenvalues[:, None, None] * m[..., None, :, :]
    sol = np.linalg.solve(mats, np.swapaxes(rhs, -1, -2)[..., None])[..., 0]
    return np.swapaxes(sol, -1, -2)


def step(u: Field, config: LimitRunConfig, path, n: int, drift: np.ndarray | None = None) -> Field:
    batch, _ = as_batch(path)
    k = dt_multiple(config.dt, batch.base_dt)
    dw = batch.paths[0].increment(n, k)
    c = u.coeffs
    if config.include_drift and drift is None:
        drift = drift_batch(config.coeffs, c, config.drift_method)
    new = _step_arrays(config.coeffs, c, dw, config.dt, drift if config.include_drift else None)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(n, [0])
    return Field(config.space, new)


def simulate(config: LimitRunConfig, path) -> Trajectory:
    batch, batched = as_batch(path)
    sp = config.space
    b = len(batch.paths)
    u0 = config.u0.coeffs if isinstance(config.u0, Field) else np.asarray(config.u0, float)
    u = np.broadcast_to(u0, (b,) + sp.shape).copy()
    k = dt_multiple(config.dt, batch.base_dt)
    n_total = int(round(config.horizon / batch.base_dt))
    if n_total % k:
        raise InvalidConfigError("horizon must be an integer number of steps")
    if n_total > batch.n_steps:
        raise InvalidConfigError("noise path shorter than the run horizon")
    n_steps = n_total // k
    if config.snapshot_times is not None:
        snap = set(snapshot_steps(config.snapshot_times, batch.base_dt, k).tolist())
    else:
        snap = {j * k for j in range(0, n_steps + 1, config.output_stride)}
        snap.add(n_steps * k)  # the final state is always recorded
    ledger = LimitLedger(sp, u)
    times, us = [], []
    failed = np.zeros(b, dtype=bool)
    failed_step = np.full(b, -1)
    use_drift = config.include_drift and not (config.coeffs.friction.is_constant
                                              and config.coeffs.cutoff is None)
    s = None
    if 0 in snap:
        times.append(0.0)
        us.append(u.copy())
    for j in range(n_steps):
        n = j * k
        if use_drift and j % config.drift_lag == 0:
            s = drift_batch(config.coeffs, u, config.drift_method)
        dw = batch.increment(n, k)
        u = _step_arrays(config.coeffs, u, dw, config.dt, s if use_drift else None)
        ok = np.isfinite(u).all(axis=(-1, -2))
        if not ok.all():
            bad = np.flatnonzero(~ok)
            if config.raise_on_blowup:
                raise BlowUpError(n + k, bad)
            newly = bad[~failed[bad]]
            failed[newly] = True
            failed_step[newly] = n + k
            u[bad] = 0.0
        ledger.observe(u, config.dt)
        if (n + k) in snap:
            times.append((n + k) * batch.base_dt)
            us.append(u.copy())
    u_arr = np.stack(us)
    if not batched:
        u_arr = u_arr[:, 0]
    return Trajectory(np.array(times), u_arr, None, ledger, config.dt, failed, failed_step)
