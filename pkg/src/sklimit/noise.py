"""Reproducible Q-Wiener increments keyed on (seed, step, component, mode).

Standard normals are produced by a Philox counter-based generator whose
counter is positioned from the chunk index, so any window of steps can be
regenerated without replaying the path. Covariance weights theta_i are applied
downstream (``DiffusionModel``); the path itself is white in every coordinate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

CHUNK = 256


class WindowError(IndexError):
    """Requested increment window lies outside the path horizon."""


@dataclass(frozen=True)
class NoisePath:
    seed: int
    base_dt: float
    horizon: float
    shape: tuple[int, int]  # (r, N)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.base_dt > 0 and self.horizon > 0):
            raise ValueError("base_dt and horizon must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.base_dt))

    def _chunk(self, k: int) -> np.ndarray:
        cached = self._cache.get(k)
        if cached is not None:
            return cached
        # counter word 1 carries the chunk index; word 0 is consumed by the draws
        bitgen = np.random.Philox(key=int(self.seed), counter=[0, k, 0, 0])
        z = np.random.Generator(bitgen).standard_normal((CHUNK,) + tuple(self.shape))
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[k] = z
        return z

    def normals(self, n: int, count: int = 1) -> np.ndarray:
        """Standard normals for base steps n, ..., n+count-1, shape (count, r, N)."""
        if n < 0 or count < 1 or n + count > self.n_steps:
            raise WindowError(f"steps [{n}, {n + count}) outside [0, {self.n_steps})")
        first, last = n // CHUNK, (n + count - 1) // CHUNK
        if first == last:
            return self._chunk(first)[n % CHUNK: n % CHUNK + count]
        parts = [self._chunk(k) for k in range(first, last + 1)]
        block = np.concatenate(parts)
        start = n - first * CHUNK
        return block[start: start + count]

    def increment(self, n: int, dt_multiple: int = 1) -> np.ndarray:
        """Brownian increment over [n*base_dt, (n+dt_multiple)*base_dt], shape (r, N)."""
        z = self.normals(n, dt_multiple)
        total = z[0].copy()
        for row in z[1:]:
            total += row
        return np.sqrt(self.base_dt) * total

    def checksum(self, n_steps: int | None = None) -> str:
        """SHA-256 of the first ``n_steps`` base normals (coupling audit)."""
        n = self.n_steps if n_steps is None else n_steps
        h = hashlib.sha256()
        for start in range(0, n, CHUNK):
            h.update(self.normals(start, min(CHUNK, n - start)).tobytes())
        return h.hexdigest()


class BatchNoise:
    """Several independent paths (one per replica) sharing base_dt and horizon."""

    def __init__(self, paths: list[NoisePath]):
        if not paths:
            raise ValueError("need at least one path")
        p0 = paths[0]
        for p in paths[1:]:
            if (p.base_dt, p.horizon, tuple(p.shape)) != (p0.base_dt, p0.horizon, tuple(p0.shape)):
                raise ValueError("batched paths must share base_dt, horizon and shape")
        self.paths = list(paths)
        self.base_dt = p0.base_dt
        self.horizon = p0.horizon
        self.shape = p0.shape
        self._cached_key = None
        self._cached = None

    @property
    def n_steps(self) -> int:
        return self.paths[0].n_steps

    def _chunk(self, k: int) -> np.ndarray:
        if self._cached_key != k:
            self._cached = np.stack([p._chunk(k) for p in self.paths], axis=1)  # (CHUNK, B, r, N)
            self._cached_key = k
        return self._cached

    def increment(self, n: int, dt_multiple: int = 1) -> np.ndarray:
        """Stacked increments, shape (B, r, N); equal to each path's own increment."""
        if n < 0 or dt_multiple < 1 or n + dt_multiple > self.n_steps:
            raise WindowError(f"steps [{n}, {n + dt_multiple}) outside [0, {self.n_steps})")
        first, last = n // CHUNK, (n + dt_multiple - 1) // CHUNK
        if first != last:
            return np.stack([p.increment(n, dt_multiple) for p in self.paths])
        z = self._chunk(first)[n % CHUNK: n % CHUNK + dt_multiple]
        total = z[0].copy()
        for row in z[1:]:
            total += row
        return np.sqrt(self.base_dt) * total


def make_paths(seeds, base_dt: float, horizon: float, shape) -> BatchNoise:
    return BatchNoise([NoisePath(int(s), base_dt, horizon, tuple(shape)) for s in seeds])


def as_batch(path) -> tuple[BatchNoise, bool]:
    """Wrap a single path so integrators can treat everything as a batch."""
    if isinstance(path, BatchNoise):
        return path, True
    return BatchNoise([path]), False
