"""Lie-splitting integrator for the damped wave system

    mu u'' = Delta u - g_R(u) u' + f_R(u) + sigma_R(u) dw^Q/dt,

with states batched over replicas: u, v have shape (B, r, N), v = du/dt.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coefficients import Coefficients
from .noise import BatchNoise, as_batch
from .spectral import Field, InvalidConfigError, PhaseState, SpectralSpace

C_WAVE = 0.5
C_DAMP = 0.05


class BlowUpError(FloatingPointError):
    def __init__(self, step: int, replicas, message: str = ""):
        self.step = step
        self.replicas = list(replicas)
        super().__init__(message or f"non-finite state at step {step} (replicas {self.replicas})")


def stable_dt(mass: float, space: SpectralSpace, coeffs: Coefficients | None = None,
              dt_max: float = 1e-2, c_wave: float = C_WAVE, c_damp: float = C_DAMP) -> float:
    """min(dt_max, c_wave sqrt(mu/alpha_N), c_damp mu/gamma_max).

    The damping term is integrated exactly, but the noise kick enters as an
    impulse before the next damping stage; resolving gamma dt/mu keeps the
    resulting bias in the effective diffusion at O(c_damp).
    """
    dt = min(dt_max, c_wave * np.sqrt(mass / space.eigenvalues[-1]))
    if coeffs is not None and c_damp > 0:
        dt = min(dt, c_damp * mass / coeffs.friction.bound())
    return float(dt)


def _as_batch(x, space: SpectralSpace) -> np.ndarray:
    c = x.coeffs if isinstance(x, Field) else np.asarray(x, dtype=float)
    if c.shape[-2:] != space.shape:
        raise ValueError(f"state shape {c.shape} incompatible with {space.shape}")
    return c


def group_step(state: PhaseState, t: float) -> PhaseState:
    """Exact flow of mu u'' = -alpha u over time t, mode by mode."""
    sp = state.u.space
    u, v = group_rotate(sp, state.mass, state.u.coeffs, state.v.coeffs, t)
    return PhaseState(Field(sp, u), Field(sp, v), state.mass, state.scaled)


def group_rotate(space: SpectralSpace, mass: float, u: np.ndarray, v: np.ndarray, t: float):
    om = np.sqrt(space.eigenvalues / mass)
    c, s = np.cos(om * t), np.sin(om * t)
    return c * u + (s / om) * v, -om * s * u + c * v


@dataclass
class WaveRunConfig:
    mass: float
    horizon: float
    coeffs: Coefficients
    u0: np.ndarray
    v0: np.ndarray | None = None
    dt: float | None = None  # None: stable_dt rounded down to a multiple of the path step
    output_stride: int = 100
    snapshot_times: np.ndarray | None = None  # overrides output_stride
    raise_on_blowup: bool = True

    def __post_init__(self):
        if not 0 < self.mass <= 1:
            raise InvalidConfigError(f"mass must lie in (0, 1], got {self.mass}")
        if self.horizon < 0:
            raise InvalidConfigError("horizon must be nonnegative")
        if self.output_stride < 1:
            raise InvalidConfigError("output_stride must be >= 1")

    @property
    def space(self) -> SpectralSpace:
        return self.coeffs.space


# -- diagnostics ----------------------------------------------------------------

_SUP = ("u0", "u1", "u2", "u1rbar", "vm1", "v0", "v1", "vrbar", "u0_4", "u1_4", "v0_4")
_INT = ("u1", "u2", "v0", "v1", "u1v0", "v0_4")


class EnergyLedger:
    """Running sups and time integrals of Sobolev norms, per replica."""

    def __init__(self, space: SpectralSpace, mass: float, rbar: float, u0: np.ndarray,
                 v0: np.ndarray):
        self.space = space
        self.mass = mass
        self.rbar = rbar
        b = u0.shape[:-2]
        self.sup = {k: np.zeros(b) for k in _SUP}
        self.integral = {k: np.zeros(b) for k in _INT}
        self._comp = {k: np.zeros(b) for k in _INT}
        self._last = None
        self.initial = {f"Lambda{i}": sp_norm(space, u0, i) + mass * sp_norm(space, v0, i - 1)
                        for i in (1, 2, 3)}
        self.energy_trace: list[np.ndarray] = []
        self.observe(u0, v0, 0.0)

    def _values(self, u, v) -> dict:
        sp = self.space
        n = {"u0": sp_norm(sp, u, 0), "u1": sp_norm(sp, u, 1), "u2": sp_norm(sp, u, 2),
             "u1rbar": sp_norm(sp, u, 1 + self.rbar), "vm1": sp_norm(sp, v, -1),
             "v0": sp_norm(sp, v, 0), "v1": sp_norm(sp, v, 1), "vrbar": sp_norm(sp, v, self.rbar)}
        n["u0_4"] = n["u0"] ** 2
        n["u1_4"] = n["u1"] ** 2
        n["v0_4"] = n["v0"] ** 2
        n["u1v0"] = n["u1"] * n["v0"]
        return n

    def observe(self, u, v, dt: float) -> None:
        vals = self._values(u, v)
        for k in _SUP:
            np.maximum(self.sup[k], vals[k], out=self.sup[k])
        if self._last is not None and dt > 0:
            for k in _INT:
                # trapezoid increment with Kahan compensation
                inc = 0.5 * dt * (vals[k] + self._last[k]) - self._comp[k]
                tot = self.integral[k] + inc
                self._comp[k] = (tot - self.integral[k]) - inc
                self.integral[k] = tot
        self._last = vals
        self.energy_trace.append(vals["u1"] + self.mass * vals["v0"])

    def functionals(self) -> dict[str, np.ndarray]:
        """Energy functionals per replica (squared norms, sup over t and int dt):

        energy_h0      sup ||u||_0^2 + int ||u||_1^2
        energy_quartic mu^3 sup ||v||_0^4 + mu sup ||u||_1^4 + mu int ||u||_1^2 ||v||_0^2
                       + mu^2 int ||v||_0^4 + mu int ||v||_0^2
        energy_h1      sup ||u||_1^2 + int ||u||_2^2
        energy_h2      mu sup ||u||_2^2 + mu^2 sup ||v||_1^2 + mu int ||v||_1^2
        energy_rbar    sqrt(mu) (sup ||u||_{1+rbar}^2 + mu sup ||v||_rbar^2)
        """
        mu, s, i = self.mass, self.sup, self.integral
        return {
            "energy_h0": s["u0"] + i["u1"],
            "energy_quartic": mu**3 * s["v0_4"] + mu * s["u1_4"] + mu * i["u1v0"]
            + mu**2 * i["v0_4"] + mu * i["v0"],
            "energy_h1": s["u1"] + i["u2"],
            "energy_h2": mu * s["u2"] + mu**2 * s["v1"] + mu * i["v1"],
            "energy_rbar": np.sqrt(mu) * (s["u1rbar"] + mu * s["vrbar"]),
            "sqrt_mu_sup_h2": np.sqrt(mu) * s["u2"],
            "sup_u_h0": s["u0"].copy(),
            "mu_int_v_h0": mu * i["v0"],
            "mu2_sup_v_h1": mu**2 * s["v1"],
        }


def sp_norm(space: SpectralSpace, c: np.ndarray, delta: float) -> np.ndarray:
    return space.norm_sq(c, delta)


@dataclass
class Trajectory:
    times: np.ndarray
    u: np.ndarray  # (S, B, r, N)
    v: np.ndarray | None
    ledger: EnergyLedger
    dt: float
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    failed_step: np.ndarray | None = None


# -- stepping -------------------------------------------------------------------

def _step_arrays(coeffs: Coefficients, mass: float, u, v, dw, dt):
    sp = coeffs.space
    u, v = group_rotate(sp, mass, u, v, dt)
    g = coeffs.friction_matrix(u)
    prop = scipy.linalg.expm(-g * (dt / mass))
    v = np.einsum("...ab,...bi->...ai", prop, v)
    v = v + (dt / mass) * coeffs.forcing_coeffs(u)
    v = v + coeffs.sigma_apply(u, dw) / mass
    return u, v


def step(state: PhaseState, config: WaveRunConfig, path, n: int) -> PhaseState:
    """Advance one step of size config.dt using base increments n, n+1, ..."""
    batch, _ = as_batch(path)
    dt = config.dt if config.dt is not None else resolve_dt(config, batch)
    k = dt_multiple(dt, batch.base_dt)
    dw = batch.paths[0].increment(n, k)
    u, v = _step_arrays(config.coeffs, config.mass, state.u.coeffs, state.v.coeffs, dw, dt)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise BlowUpError(n, [0])
    sp = config.space
    return PhaseState(Field(sp, u), Field(sp, v), config.mass)


def dt_multiple(dt: float, base_dt: float) -> int:
    k = int(round(dt / base_dt))
    if k < 1 or abs(k * base_dt - dt) > 1e-9 * dt:
        raise InvalidConfigError(f"dt={dt} is not an integer multiple of the path step {base_dt}")
    return k


def resolve_dt(config: WaveRunConfig, batch: BatchNoise) -> float:
    """Largest power-of-two multiple of the path step not exceeding stable_dt."""
    target = stable_dt(config.mass, config.space, config.coeffs)
    k = 1
    while 2 * k * batch.base_dt <= target * (1 + 1e-12):
        k *= 2
    if batch.base_dt > target * (1 + 1e-12):
        raise InvalidConfigError(
            f"path step {batch.base_dt:.3g} exceeds the stable step {target:.3g} for mu={config.mass}")
    return k * batch.base_dt


def snapshot_steps(times: np.ndarray, base_dt: float, k: int) -> np.ndarray:
    """Base-step indices of the requested snapshot times, which must lie on the step grid."""
    idx = np.rint(np.asarray(times) / base_dt).astype(int)
    if np.any(np.abs(idx * base_dt - times) > 1e-9 * max(1.0, float(np.max(times, initial=1.0)))) \
            or np.any(idx % k):
        raise InvalidConfigError("snapshot times must fall on the integrator's step grid")
    return idx


def simulate(config: WaveRunConfig, path) -> Trajectory:
    batch, batched = as_batch(path)
    sp = config.space
    b = len(batch.paths)
    u = np.broadcast_to(_as_batch(config.u0, sp), (b,) + sp.shape).copy()
    v0 = np.zeros(sp.shape) if config.v0 is None else _as_batch(config.v0, sp)
    v = np.broadcast_to(v0, (b,) + sp.shape).copy()
    dt = config.dt if config.dt is not None else resolve_dt(config, batch)
    k = dt_multiple(dt, batch.base_dt)
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
    rbar = config.coeffs.cutoff.rbar if config.coeffs.cutoff is not None else 0.95
    ledger = EnergyLedger(sp, config.mass, rbar, u, v)
    times, us, vs = [], [], []
    failed = np.zeros(b, dtype=bool)
    failed_step = np.full(b, -1)

    def record(n):
        times.append(n * batch.base_dt)
        us.append(u.copy())
        vs.append(v.copy())

    if 0 in snap:
        record(0)
    for j in range(n_steps):
        n = j * k
        dw = batch.increment(n, k)
        u, v = _step_arrays(config.coeffs, config.mass, u, v, dw, dt)
        ok = np.isfinite(u).all(axis=(-1, -2)) & np.isfinite(v).all(axis=(-1, -2))
        if not ok.all():
            bad = np.flatnonzero(~ok)
            if config.raise_on_blowup:
                raise BlowUpError(n + k, bad)
            newly = bad[~failed[bad]]
            failed[newly] = True
            failed_step[newly] = n + k
            u[bad] = 0.0
            v[bad] = 0.0
        ledger.observe(u, v, dt)
        if (n + k) in snap:
            record(n + k)
    u_arr = np.stack(us)
    v_arr = np.stack(vs)
    if not batched:
        u_arr, v_arr = u_arr[:, 0], v_arr[:, 0]
    return Trajectory(np.array(times), u_arr, v_arr, ledger, dt, failed, failed_step)


# -- persistence ----------------------------------------------------------------

def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_snapshots(path, times: np.ndarray, states: np.ndarray, *, space: SpectralSpace,
                    seed: int, mass: float, chash: str) -> None:
    """Columnar text file: '#' header lines then rows ``t, c0_m1, c0_m2, ...``."""
    r, n = space.shape
    cols = ["t"] + [f"c{c}_m{i + 1}" for c in range(r) for i in range(n)]
    with open(path, "w") as fh:
        fh.write(f"# config_hash={chash}\n# seed={seed}\n# mu={mass!r}\n# N={n}\n# r={r}\n")
        fh.write(",".join(cols) + "\n")
        for t, c in zip(times, states):
            fh.write(",".join([repr(float(t))] + [repr(float(x)) for x in np.ravel(c)]) + "\n")


def read_snapshots(path) -> tuple[dict, np.ndarray, np.ndarray]:
    header = {}
    with open(path) as fh:
        lines = fh.readlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        else:
            body.append(line)
    r, n = int(header["r"]), int(header["N"])
    data = np.loadtxt(body[1:], delimiter=",", ndmin=2)
    return header, data[:, 0], data[:, 1:].reshape(-1, r, n)
