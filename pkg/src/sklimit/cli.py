"""Command-line entry point: ``sklimit <command> [--config FILE] [--key value ...]``.

Exit status: 0 when every check of the command passes, 1 when a check fails,
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import correctors, harness, parabolic, wave
from .config import SweepConfig, add_config_arguments, config_from_args
from .drift import drift_monte_carlo, drift_spectral, stationary_process_oracle
from .noise import NoisePath, make_paths
from .spectral import InvalidConfigError


def _log(msg: str) -> None:
    print(msg, flush=True)


def _print_checks(checks: dict) -> bool:
    for name, ok in checks.items():
        print(f"  {'PASS' if ok else 'FAIL'}  {name}")
    return all(checks.values())


def load_field(text: str, cfg: SweepConfig, space) -> np.ndarray:
    """``default`` (the configured u0), ``random:SEED`` or ``from-file:PATH``."""
    if text == "default":
        return harness.initial_field(cfg, space)
    if text.startswith("random:"):
        rng = np.random.default_rng(int(text.split(":", 1)[1]))
        return 0.3 * rng.standard_normal(space.shape) * np.arange(1, space.n_modes + 1) ** -1.5
    if text.startswith("from-file:"):
        path = text.split(":", 1)[1]
        with open(path) as fh:
            first = fh.readline()
        if first.startswith("#"):
            _, _, states = wave.read_snapshots(path)
            c = states[-1]
        else:
            c = np.loadtxt(path, delimiter=None if "," not in first else ",", ndmin=2)
        if c.shape != space.shape:
            raise InvalidConfigError(f"u: field shape {c.shape} does not match {space.shape}")
        return c
    raise InvalidConfigError(f"u: unrecognised field {text!r}")


# -- commands -------------------------------------------------------------------

def cmd_sweep(args, cfg: SweepConfig) -> int:
    rep = harness.run_convergence_sweep(cfg, log=_log)
    out = harness.write_report(rep, cfg.output_dir)
    for e in rep.summary["per_mu"]:
        q = e["error_quartiles"]
        _log(f"mu={e['mu']:<8g} error quartiles {q[0]:.4g} {q[1]:.4g} {q[2]:.4g}"
             f"  P(error > eta)={e['exceed_eta_fraction']:.3g}")
    _log(f"reports written to {out}")
    return 0 if _print_checks(rep.checks) else 1


def cmd_ablation(args, cfg: SweepConfig) -> int:
    rep = harness.run_drift_ablation(cfg, log=_log)
    out = harness.write_report(rep, cfg.output_dir)
    ab = rep.summary["ablation"]
    _log(f"mu={ab['mu']:g}: median error with S {ab['median_with_drift']:.4g}, without S "
         f"{ab['median_without_drift']:.4g}, gap {ab['gap']:.4g}, IQR {ab['iqr']:.4g}")
    _log(f"reports written to {out}")
    return 0 if _print_checks(rep.checks) else 1


def cmd_diagnostics(args, cfg: SweepConfig) -> int:
    rep = harness.run_diagnostics(cfg, log=_log)
    out = harness.write_report(rep, cfg.output_dir)
    keys = harness.DIAGNOSTIC_KEYS
    _log("mu        " + " ".join(f"{k:>14}" for k in keys))
    for e in rep.summary["per_mu"]:
        _log(f"{e['mu']:<9g} " + " ".join(f"{e['diagnostics_mean'][k]:>14.5g}" for k in keys))
    _log(f"reports written to {out}")
    return 0 if _print_checks(rep.checks) else 1


def _single_run_setup(cfg: SweepConfig):
    space, coeffs = harness.build_model(cfg)
    plan = harness.plan_steps(cfg, space, coeffs)
    seeds = [cfg.seed + i for i in range(cfg.replicas)]
    paths = make_paths(seeds, plan.base_dt, cfg.horizon, space.shape)
    snaps = np.arange(0, cfg.snapshots + 1) * (cfg.horizon / cfg.snapshots)
    return space, coeffs, plan, seeds, paths, snaps


def _write_runs(cfg, space, seeds, traj, mass, prefix) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    chash = harness.config_hash(cfg)
    for i, seed in enumerate(seeds):
        wave.write_snapshots(os.path.join(cfg.output_dir, f"{prefix}_r{i}.csv"), traj.times,
                             traj.u[:, i], space=space, seed=seed, mass=mass, chash=chash)
    funcs = traj.ledger.functionals()
    with open(os.path.join(cfg.output_dir, f"{prefix}_ledger.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = list(funcs)
        w.writerow(["replica", "seed", "flagged"] + keys)
        for i, seed in enumerate(seeds):
            w.writerow([i, seed, int(traj.failed[i])] + [repr(float(funcs[k][i])) for k in keys])


def cmd_simulate_wave(args, cfg: SweepConfig) -> int:
    space, coeffs, plan, seeds, paths, snaps = _single_run_setup(cfg)
    mu = cfg.mu_grid[0]
    wc = wave.WaveRunConfig(mu, cfg.horizon, coeffs, harness.initial_field(cfg, space),
                            dt=plan.wave_multiples[mu] * plan.base_dt, snapshot_times=snaps,
                            raise_on_blowup=False)
    traj = wave.simulate(wc, paths)
    _write_runs(cfg, space, seeds, traj, mu, f"wave_mu{mu:g}")
    _log(f"wave run mu={mu:g}, dt={traj.dt:.4g}, {len(traj.times)} snapshots, "
         f"{int(traj.failed.sum())} blown-up replicas; files in {cfg.output_dir}")
    return 0 if not traj.failed.any() else 1


def cmd_simulate_limit(args, cfg: SweepConfig) -> int:
    space, coeffs, plan, seeds, paths, snaps = _single_run_setup(cfg)
    lc = parabolic.LimitRunConfig(plan.limit_multiple * plan.base_dt, cfg.horizon, coeffs,
                                  harness.initial_field(cfg, space),
                                  include_drift=not args.no_drift, drift_method=cfg.drift_method,
                                  drift_lag=cfg.drift_lag, snapshot_times=snaps,
                                  raise_on_blowup=False)
    traj = parabolic.simulate(lc, paths)
    os.makedirs(cfg.output_dir, exist_ok=True)
    chash = harness.config_hash(cfg)
    for i, seed in enumerate(seeds):
        wave.write_snapshots(os.path.join(cfg.output_dir, f"limit_r{i}.csv"), traj.times,
                             traj.u[:, i], space=space, seed=seed, mass=0.0, chash=chash)
    f = traj.ledger.functionals()
    with open(os.path.join(cfg.output_dir, "limit_ledger.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "seed", "flagged"] + list(f))
        for i, seed in enumerate(seeds):
            w.writerow([i, seed, int(traj.failed[i])] + [repr(float(f[k][i])) for k in f])
    _log(f"limit run dt={traj.dt:.4g}, drift={'off' if args.no_drift else cfg.drift_method}; "
         f"files in {cfg.output_dir}")
    return 0 if not traj.failed.any() else 1


def cmd_drift(args, cfg: SweepConfig) -> int:
    space, coeffs = harness.build_model(cfg)
    u = load_field(args.u, cfg, space)
    exact = drift_spectral(u, coeffs)
    mc = drift_monte_carlo(u, coeffs, args.samples, np.random.default_rng(cfg.seed))
    path = NoisePath(cfg.seed, 0.1, args.ergodic_time + 20.0, space.shape)
    erg = stationary_process_oracle(u, coeffs, path, 20.0, args.ergodic_time)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = os.path.join(cfg.output_dir, "drift.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component", "mode", "spectral", "monte_carlo", "monte_carlo_se",
                    "ergodic", "ergodic_se"])
        for c in range(space.n_components):
            for i in range(space.n_modes):
                w.writerow([c, i + 1, repr(float(exact.value.coeffs[c, i])),
                            repr(float(mc.value.coeffs[c, i])), repr(float(mc.stderr[c, i])),
                            repr(float(erg.value.coeffs[c, i])), repr(float(erg.stderr[c, i]))])
    _log(f"{'comp':>4} {'mode':>4} {'spectral':>13} {'monte carlo':>13} {'(se)':>10} {'ergodic':>13} {'(se)':>10}")
    for c in range(space.n_components):
        for i in range(min(space.n_modes, args.show)):
            _log(f"{c:>4} {i + 1:>4} {exact.value.coeffs[c, i]:>13.6g} {mc.value.coeffs[c, i]:>13.6g} "
                 f"{mc.stderr[c, i]:>10.2g} {erg.value.coeffs[c, i]:>13.6g} {erg.stderr[c, i]:>10.2g}")
    _log(f"||S||_H1 = {space.norm(exact.value.coeffs, 1.0):.6g}; full table in {out}")
    checks = {"spectral_vs_monte_carlo": exact.agrees_with(mc),
              "spectral_vs_ergodic": exact.agrees_with(erg),
              "monte_carlo_vs_ergodic": mc.agrees_with(erg)}
    return 0 if _print_checks(checks) else 1


def cmd_validate_correctors(args, cfg: SweepConfig) -> int:
    _, coeffs = harness.build_model(cfg)
    rows, checks = correctors.validate_correctors(coeffs, cfg.mu_grid, args.cases, cfg.seed)
    _log(f"{'case':>4} {'mu':>8} {'phi1 id':>10} {'resolvent':>10} {'doubled':>10} {'stat mean':>10}")
    for r in rows:
        _log(f"{r['case']:>4} {r['mu']:>8g} {r['phi1_identity']:>10.2e} {r['resolvent']:>10.2e} "
             f"{r['resolvent_doubled']:>10.2e} {r['stationary_mean']:>10.2e}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "correctors.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "mu", "phi1_identity", "resolvent", "resolvent_doubled",
                    "stationary_mean", "ladder_ok"])
        for r in rows:
            w.writerow([r["case"], repr(r["mu"]), repr(r["phi1_identity"]), repr(r["resolvent"]),
                        repr(r["resolvent_doubled"]), repr(r["stationary_mean"]), int(r["ladder_ok"])])
    return 0 if _print_checks(checks) else 1


COMMANDS = {
    "simulate-wave": (cmd_simulate_wave, "integrate the wave system for the first mass of mu_grid"),
    "simulate-limit": (cmd_simulate_limit, "integrate the limiting equation"),
    "drift": (cmd_drift, "noise-induced drift S(u) with Monte-Carlo and ergodic cross-checks"),
    "sweep": (cmd_sweep, "coupled small-mass convergence sweep"),
    "ablation": (cmd_ablation, "sweep with and without the drift S in the limit"),
    "validate-correctors": (cmd_validate_correctors, "corrector identity residual table"),
    "diagnostics": (cmd_diagnostics, "energy functionals of the wave ensembles"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sklimit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        add_config_arguments(p)
        if name == "drift":
            p.add_argument("--u", default="default",
                           help="field: default | random:SEED | from-file:PATH")
            p.add_argument("--samples", type=int, default=200000, help="Monte-Carlo sample count")
            p.add_argument("--ergodic-time", type=float, default=2000.0,
                           help="averaging time of the stationary-process estimate")
            p.add_argument("--show", type=int, default=4, help="modes per component to print")
        if name == "validate-correctors":
            p.add_argument("--cases", type=int, default=20, help="number of random (u, v, h)")
        if name == "simulate-limit":
            p.add_argument("--no-drift", action="store_true", help="force S = 0")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        func = COMMANDS[args.command][0]
        return func(args, cfg)
    except InvalidConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
