"""Flat ``key = value`` run configuration with a typed schema.

Every key can be set in a config file, and overridden on the command line as
``--key-name VALUE`` (underscores become dashes). See docs/config.md.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, fields, replace

from .spectral import InvalidConfigError


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    if text is None:
        return None
    if isinstance(text, (int, float)):
        return float(text)
    t = str(text).strip().lower()
    return None if t in ("", "none", "off") else float(t)


# key: (parser, help). Defaults live on SweepConfig.
SCHEMA = {
    "model": (str, "coefficient catalog entry: default | constant"),
    "domain_length": (float, "interval length l"),
    "n_modes": (int, "number of sine modes N"),
    "n_components": (int, "number of field components r"),
    "horizon": (float, "final time T"),
    "mu_grid": (_floats, "comma-separated masses, largest first"),
    "replicas": (int, "ensemble size"),
    "seed": (int, "seed of replica 0; replica i uses seed + i"),
    "rho": (float, "sup-error Sobolev exponent (rho < 1)"),
    "vartheta": (float, "integrated-error Sobolev exponent in [1, 2)"),
    "p": (float, "integrated-error power, p (vartheta - 1) < 2"),
    "rbar": (float, "cutoff norm exponent"),
    "cutoff_radius": (_optional_float, "cutoff radius R (none = untruncated)"),
    "friction_amplitude": (float, "scale of the friction perturbation A"),
    "noise_scale": (float, "multiplier of the diffusion matrix lam"),
    "noise_amplitude": (float, "tanh amplitude inside lam"),
    "theta_decay": (float, "covariance weights theta_i = i^-q"),
    "forcing": (_bool, "include the Nemytskii forcing f"),
    "init_amplitude1": (float, "u0 coefficient on mode 1 of component 0"),
    "init_amplitude2": (float, "u0 coefficient on mode 2 of component 1"),
    "snapshots": (int, "number of uniform snapshot times in (0, T]"),
    "steps_per_snapshot": (int, "base noise steps per snapshot (0 = automatic)"),
    "limit_dt_multiple": (int, "limit-equation step in base noise steps"),
    "drift_method": (str, "drift route inside the limit integrator: contract | spectral"),
    "drift_lag": (int, "recompute S every k limit steps"),
    "c_wave": (float, "wave-frequency factor of the wave time step"),
    "c_damp": (float, "damping factor of the wave time step"),
    "dt_max": (float, "upper bound on the wave time step"),
    "ratio_threshold": (float, "required error(mu_max) / error(mu_min)"),
    "max_inversions": (int, "allowed increases of the median error as mu decreases"),
    "eta": (float, "threshold for the exceedance-fraction table"),
    "max_flagged_fraction": (float, "fraction of blown-up rows that fails a sweep"),
    "trend_slack": (float, "relative slack for monitored energy trends"),
    "ablation": (_bool, "also run the limit equation with S forced to zero"),
    "output_dir": (str, "report directory"),
}

ALIASES = {"mu": "mu_grid"}


@dataclass(frozen=True)
class SweepConfig:
    model: str = "default"
    domain_length: float = 1.0
    n_modes: int = 32
    n_components: int = 2
    horizon: float = 1.0
    mu_grid: tuple[float, ...] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    replicas: int = 16
    seed: int = 1000
    rho: float = 0.9
    vartheta: float = 1.5
    p: float = 3.0
    rbar: float = 0.95
    cutoff_radius: float | None = None
    friction_amplitude: float = 1.0
    noise_scale: float = 1.0
    noise_amplitude: float = 0.3
    theta_decay: float = 2.0
    forcing: bool = True
    init_amplitude1: float = 0.5
    init_amplitude2: float = 0.3
    snapshots: int = 200
    steps_per_snapshot: int = 0
    limit_dt_multiple: int = 8
    drift_method: str = "contract"
    drift_lag: int = 1
    c_wave: float = 0.5
    c_damp: float = 0.05
    dt_max: float = 1e-2
    ratio_threshold: float = 3.0
    max_inversions: int = 1
    eta: float = 0.1
    max_flagged_fraction: float = 0.2
    trend_slack: float = 0.1
    ablation: bool = True
    output_dir: str = "reports"

    def __post_init__(self):
        errors = []
        if self.model not in ("default", "constant"):
            errors.append(f"model: unknown catalog entry {self.model!r}")
        if not self.mu_grid or any(not 0 < m <= 1 for m in self.mu_grid):
            errors.append("mu_grid: masses must lie in (0, 1]")
        elif list(self.mu_grid) != sorted(self.mu_grid, reverse=True):
            errors.append("mu_grid: list masses from largest to smallest")
        if self.replicas < 1:
            errors.append("replicas: must be >= 1")
        if not 0 <= self.seed < 2**63:
            errors.append("seed: must be a nonnegative 64-bit integer")
        if not self.rho < 1:
            errors.append("rho: must be < 1")
        if not 1 <= self.vartheta < 2:
            errors.append("vartheta: must lie in [1, 2)")
        if not self.p * (self.vartheta - 1) < 2:
            errors.append("p: need p (vartheta - 1) < 2")
        if not self.rho <= self.rbar:
            errors.append("rho: must not exceed rbar")
        if self.horizon <= 0:
            errors.append("horizon: must be positive")
        if self.snapshots < 1:
            errors.append("snapshots: must be >= 1")
        if self.steps_per_snapshot < 0 or (self.steps_per_snapshot & (self.steps_per_snapshot - 1)):
            errors.append("steps_per_snapshot: must be 0 or a power of two")
        k = self.limit_dt_multiple
        if k < 1 or k & (k - 1):
            errors.append("limit_dt_multiple: must be a power of two")
        if self.drift_method not in ("contract", "spectral"):
            errors.append("drift_method: choose contract or spectral")
        if self.drift_lag < 1:
            errors.append("drift_lag: must be >= 1")
        if self.n_components != 2:
            errors.append("n_components: the catalog models are two-component")
        if self.n_modes < 2:
            errors.append("n_modes: need at least 2 modes for the initial condition")
        if errors:
            raise InvalidConfigError("; ".join(errors))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_overrides(self, **kw) -> "SweepConfig":
        return replace(self, **parse_values(kw))


def parse_values(raw: dict) -> dict:
    out = {}
    for key, val in raw.items():
        key = ALIASES.get(key, key)
        if key not in SCHEMA:
            raise InvalidConfigError(f"{key}: unknown configuration key")
        parser = SCHEMA[key][0]
        try:
            out[key] = parser(val)
        except (TypeError, ValueError) as exc:
            raise InvalidConfigError(f"{key}: cannot parse {val!r} ({exc})") from None
    return out


def read_config_file(path) -> dict:
    raw = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            raw[key] = val
    return raw


def load_config(path=None, **overrides) -> SweepConfig:
    raw = read_config_file(path) if path else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return SweepConfig(**parse_values(raw))


def write_config_file(cfg: SweepConfig, path) -> None:
    with open(path, "w") as fh:
        for key, val in cfg.to_dict().items():
            if isinstance(val, tuple):
                val = ",".join(repr(x) for x in val)
            elif val is None:
                val = "none"
            fh.write(f"{key} = {val}\n")


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for key, (_, text) in SCHEMA.items():
        flags = ["--" + key.replace("_", "-")]
        flags += ["--" + a for a, target in ALIASES.items() if target == key]
        parser.add_argument(*flags, dest=key, default=None, help=text)


def config_from_args(args: argparse.Namespace) -> SweepConfig:
    overrides = {k: getattr(args, k) for k in SCHEMA if getattr(args, k, None) is not None}
    return load_config(args.config, **overrides)
