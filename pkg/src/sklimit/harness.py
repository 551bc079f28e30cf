"""Coupled small-mass sweeps: wave system vs limit equation on shared noise paths.

All replicas of one mass are integrated as a single batch. The limit equation
does not depend on mu, so it is solved once per replica (and once more with
S = 0 when the drift ablation is requested) and compared against every mass.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import parabolic, wave
from .coefficients import CutoffModel, build_coefficients
from .config import SweepConfig
from .noise import make_paths
from .spectral import InvalidConfigError, build_space

ENERGY_KEYS = ("energy_h0", "energy_quartic", "energy_h1", "energy_h2", "energy_rbar")
DIAGNOSTIC_KEYS = ENERGY_KEYS + ("sqrt_mu_sup_h2", "sup_u_h0", "mu_int_v_h0", "mu2_sup_v_h1")
BOUNDED_KEYS = ENERGY_KEYS + ("mu2_sup_v_h1",)
CSV_COLUMNS = ("config_hash", "mu", "replica", "seed", "path_checksum", "wave_dt", "limit_dt",
               "flagged", "sup_error", "int_error", "error", "sup_error_nodrift",
               "int_error_nodrift", "error_nodrift") + DIAGNOSTIC_KEYS + (
               "Lambda1", "Lambda2", "Lambda3")


@dataclass
class SweepReport:
    config: SweepConfig
    config_hash: str
    rows: list[dict]
    summary: dict
    checks: dict[str, bool]
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def column(self, name: str, mu: float, only_ok: bool = True) -> np.ndarray:
        return np.array([r[name] for r in self.rows
                         if r["mu"] == mu and not (only_ok and r["flagged"])], dtype=float)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# -- setup ----------------------------------------------------------------------

def build_model(cfg: SweepConfig):
    space = build_space(cfg.domain_length, cfg.n_modes, cfg.n_components)
    cutoff = None if cfg.cutoff_radius is None else CutoffModel(cfg.cutoff_radius, rbar=cfg.rbar)
    kw = dict(noise_scale=cfg.noise_scale, noise_amplitude=cfg.noise_amplitude,
              theta_decay=cfg.theta_decay, forcing=cfg.forcing, cutoff=cutoff)
    if cfg.model == "default":
        kw["friction_amplitude"] = cfg.friction_amplitude
    return space, build_coefficients(cfg.model, space, **kw)


def initial_field(cfg: SweepConfig, space) -> np.ndarray:
    u0 = np.zeros(space.shape)
    u0[0, 0] = cfg.init_amplitude1
    u0[1 % space.n_components, 1] = cfg.init_amplitude2
    return u0


def config_hash(cfg: SweepConfig) -> str:
    return wave.config_hash(cfg.to_dict())


@dataclass(frozen=True)
class StepPlan:
    base_dt: float
    steps_per_snapshot: int
    limit_multiple: int
    wave_multiples: dict


def plan_steps(cfg: SweepConfig, space, coeffs) -> StepPlan:
    """Base noise step T / (snapshots * m), m a power of two fine enough for the
    smallest mass; each mass then steps with the largest admissible power-of-two
    multiple, so every run lands on the shared snapshot grid."""
    interval = cfg.horizon / cfg.snapshots

    def target(mu):
        return wave.stable_dt(mu, space, coeffs, cfg.dt_max, cfg.c_wave, cfg.c_damp)

    finest = min(target(mu) for mu in cfg.mu_grid)
    m = cfg.steps_per_snapshot or 1
    if not cfg.steps_per_snapshot:
        while interval / m > finest * (1 + 1e-12):
            m *= 2
    m = max(m, cfg.limit_dt_multiple)
    base = interval / m
    if base > finest * (1 + 1e-12):
        raise InvalidConfigError(
            f"steps_per_snapshot: base step {base:.3g} exceeds the stable step {finest:.3g}")
    multiples = {}
    for mu in cfg.mu_grid:
        k = 1
        while 2 * k <= m and 2 * k * base <= target(mu) * (1 + 1e-12):
            k *= 2
        multiples[mu] = k
    return StepPlan(base, m, cfg.limit_dt_multiple, multiples)


# -- error metric ----------------------------------------------------------------

def coupled_error(space, times: np.ndarray, u_wave: np.ndarray, u_lim: np.ndarray,
                  rho: float, vartheta: float, p: float):
    """sup_t ||d||_{H^rho} and int_0^T ||d||^p_{H^vartheta} dt (trapezoid, d(0) included)."""
    d = u_wave - u_lim
    sup = np.sqrt(space.norm_sq(d, rho)).max(axis=0)
    g = np.sqrt(space.norm_sq(d, vartheta)) ** p
    t = np.asarray(times)
    if t[0] > 0:  # both runs start from the same u0
        t = np.concatenate([[0.0], t])
        g = np.concatenate([np.zeros((1,) + g.shape[1:]), g])
    integ = np.trapezoid(g, t, axis=0)
    return sup, integ


# -- sweeps ------------------------------------------------------------------------

def _run(cfg: SweepConfig, with_limit: bool = True, log=None) -> SweepReport:
    t_start = time.time()
    space, coeffs = build_model(cfg)
    plan = plan_steps(cfg, space, coeffs)
    u0 = initial_field(cfg, space)
    seeds = [cfg.seed + i for i in range(cfg.replicas)]
    paths = make_paths(seeds, plan.base_dt, cfg.horizon, space.shape)
    n_total = int(round(cfg.horizon / plan.base_dt))
    checksums = [p.checksum(n_total) for p in paths.paths]
    snaps = np.arange(1, cfg.snapshots + 1) * (cfg.horizon / cfg.snapshots)
    chash = config_hash(cfg)
    timings = {}

    limits = {}
    if with_limit:
        arms = [True, False] if cfg.ablation else [True]
        for include in arms:
            t0 = time.time()
            lc = parabolic.LimitRunConfig(plan.limit_multiple * plan.base_dt, cfg.horizon, coeffs,
                                          u0, include_drift=include, drift_method=cfg.drift_method,
                                          drift_lag=cfg.drift_lag, snapshot_times=snaps,
                                          raise_on_blowup=False)
            limits[include] = parabolic.simulate(lc, paths)
            timings[f"limit_drift={include}"] = time.time() - t0
            if log:
                log(f"limit (drift={include}) done in {timings[f'limit_drift={include}']:.1f}s")

    rows = []
    for mu in cfg.mu_grid:
        t0 = time.time()
        wc = wave.WaveRunConfig(mu, cfg.horizon, coeffs, u0, dt=plan.wave_multiples[mu] * plan.base_dt,
                                snapshot_times=snaps, raise_on_blowup=False)
        traj = wave.simulate(wc, paths)
        timings[f"wave_mu={mu!r}"] = time.time() - t0
        funcs = traj.ledger.functionals()
        errs = {}
        if with_limit:
            for include, lim in limits.items():
                sup, integ = coupled_error(space, traj.times, traj.u, lim.u, cfg.rho, cfg.vartheta, cfg.p)
                errs[include] = (sup, integ, lim.failed)
        for i, seed in enumerate(seeds):
            flagged = bool(traj.failed[i]) or any(bool(e[2][i]) for e in errs.values())
            row = {"config_hash": chash, "mu": mu, "replica": i, "seed": seed,
                   "path_checksum": checksums[i][:16], "wave_dt": traj.dt,
                   "limit_dt": plan.limit_multiple * plan.base_dt if with_limit else None,
                   "flagged": flagged}
            for include, suffix in ((True, ""), (False, "_nodrift")):
                if include in errs and not flagged:
                    sup, integ, _ = errs[include]
                    row["sup_error" + suffix] = float(sup[i])
                    row["int_error" + suffix] = float(integ[i])
                    row["error" + suffix] = float(sup[i] + integ[i])
            for k in DIAGNOSTIC_KEYS:
                row[k] = float(funcs[k][i])
            for k, v in traj.ledger.initial.items():
                row[k] = float(np.atleast_1d(v)[i] if np.ndim(v) else v)
            rows.append(row)
        if log:
            med = np.median([r["error"] for r in rows if r["mu"] == mu and "error" in r]) \
                if with_limit else float("nan")
            log(f"mu={mu:g}: wave dt={traj.dt:.3g}, {timings[f'wave_mu={mu!r}']:.1f}s, median error {med:.4g}")

    report = SweepReport(cfg, chash, rows, {}, {})
    report.summary = summarize(report, with_limit)
    report.checks = evaluate_checks(report, with_limit)
    report.metadata = {"config_hash": chash, "started": t_start, "wall_time": time.time() - t_start,
                       "timings": timings, "base_dt": plan.base_dt,
                       "steps_per_snapshot": plan.steps_per_snapshot,
                       "python": platform.python_version(), "numpy": np.__version__}
    return report


def _quartiles(x: np.ndarray) -> list[float]:
    if x.size == 0:
        return [math.nan] * 3
    return [float(q) for q in np.percentile(x, [25, 50, 75])]


def summarize(report: SweepReport, with_limit: bool = True) -> dict:
    cfg = report.config
    per_mu = []
    for mu in cfg.mu_grid:
        entry = {"mu": mu, "flagged": int(sum(r["flagged"] for r in report.rows if r["mu"] == mu))}
        if with_limit:
            e = report.column("error", mu)
            entry["error_quartiles"] = _quartiles(e)
            entry["sup_error_median"] = _quartiles(report.column("sup_error", mu))[1]
            entry["int_error_median"] = _quartiles(report.column("int_error", mu))[1]
            entry["exceed_eta_fraction"] = float(np.mean(e > cfg.eta)) if e.size else math.nan
            if cfg.ablation:
                entry["error_nodrift_quartiles"] = _quartiles(report.column("error_nodrift", mu))
        entry["diagnostics_mean"] = {k: float(np.mean(report.column(k, mu, only_ok=False)))
                                     for k in DIAGNOSTIC_KEYS}
        per_mu.append(entry)
    out = {"config_hash": report.config_hash, "per_mu": per_mu}
    if with_limit and cfg.ablation:
        out["ablation"] = ablation_statistics(report)
    return out


def ablation_statistics(report: SweepReport, mu: float | None = None) -> dict:
    mu = report.config.mu_grid[-1] if mu is None else mu
    with_s = report.column("error", mu)
    without = report.column("error_nodrift", mu)
    q_s, q_n = _quartiles(with_s), _quartiles(without)
    iqr = max(q_s[2] - q_s[0], q_n[2] - q_n[0])
    return {"mu": mu, "median_with_drift": q_s[1], "median_without_drift": q_n[1],
            "gap": q_n[1] - q_s[1], "iqr": iqr,
            "paired_gap_median": float(np.median(without - with_s)) if with_s.size else math.nan}


def count_inversions(values) -> int:
    return int(sum(b >= a for a, b in zip(values[:-1], values[1:])))


def evaluate_checks(report: SweepReport, with_limit: bool = True) -> dict[str, bool]:
    cfg = report.config
    checks = {}
    flagged = sum(r["flagged"] for r in report.rows)
    checks["flagged_fraction"] = flagged <= cfg.max_flagged_fraction * len(report.rows)
    if with_limit:
        med = [e["error_quartiles"][1] for e in report.summary["per_mu"]]
        checks["median_error_decreasing"] = count_inversions(med) <= cfg.max_inversions
        checks["error_ratio"] = bool(med[-1] < med[0] / cfg.ratio_threshold)
        if cfg.ablation:
            ab = report.summary["ablation"]
            checks["drift_gap_exceeds_iqr"] = bool(ab["gap"] > ab["iqr"])
    diag = diagnostics_checks(report)
    checks.update(diag)
    return checks


def diagnostics_checks(report: SweepReport) -> dict[str, bool]:
    cfg = report.config
    finite = all(math.isfinite(r[k]) for r in report.rows for k in DIAGNOSTIC_KEYS)
    means = [e["diagnostics_mean"]["sqrt_mu_sup_h2"] for e in report.summary["per_mu"]]
    decreasing = all(b <= (1 + cfg.trend_slack) * a for a, b in zip(means[:-1], means[1:]))
    # functionals bounded uniformly in mu: no value exceeds the running max over
    # the larger masses by more than the slack
    bounded = True
    for key in BOUNDED_KEYS:
        vals = [e["diagnostics_mean"][key] for e in report.summary["per_mu"]]
        bounded &= all(vals[k] <= (1 + cfg.trend_slack) * max(vals[:k]) for k in range(1, len(vals)))
    return {"diagnostics_finite": bool(finite), "sqrt_mu_sup_h2_nonincreasing": bool(decreasing),
            "energy_bounds_nonexploding": bool(bounded)}


def run_convergence_sweep(cfg: SweepConfig, log=None) -> SweepReport:
    return _run(cfg, True, log)


def run_drift_ablation(cfg: SweepConfig, log=None) -> SweepReport:
    from dataclasses import replace
    return _run(replace(cfg, ablation=True), True, log)


def run_diagnostics(cfg: SweepConfig, log=None) -> SweepReport:
    """Wave ensembles only: energy functionals per mass and their monitored trends."""
    return _run(cfg, False, log)


# -- persistence -----------------------------------------------------------------

def write_report(report: SweepReport, outdir: str | None = None) -> str:
    outdir = outdir or report.config.output_dir
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "sweep.csv"), "w", newline="") as fh:
        fh.write(report.csv_text())
    summary = dict(report.summary, checks=report.checks, passed=report.passed,
                   config=report.config.to_dict())
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
    with open(os.path.join(outdir, "metadata.json"), "w") as fh:
        json.dump(report.metadata, fh, indent=2, sort_keys=True, default=_json_default)
    return outdir


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))
