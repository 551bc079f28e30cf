"""Dirichlet sine basis on an interval, fractional Sobolev norms and the
collocation transform pair used for pointwise (Nemytskii) maps.

Coefficient arrays have shape ``(..., r, N)``: component axis second to last,
mode axis last. Leading axes are batch axes (replicas) and are carried through
every routine untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft


class InvalidConfigError(ValueError):
    """Raised when a model or run is configured outside its admissible range."""


@dataclass(frozen=True)
class SpectralSpace:
    domain_length: float
    n_modes: int
    n_components: int
    collocation_size: int
    eigenvalues: np.ndarray = field(repr=False)
    grid: np.ndarray = field(repr=False)
    basis_values: np.ndarray = field(repr=False)  # (N, M): e_i(x_j)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_components, self.n_modes)

    @property
    def dim(self) -> int:
        return self.n_components * self.n_modes

    @property
    def quadrature_weight(self) -> float:
        return self.domain_length / (self.collocation_size + 1)

    def weights(self, delta: float) -> np.ndarray:
        return self.eigenvalues**delta

    def norm_sq(self, coeffs: np.ndarray, delta: float) -> np.ndarray:
        return np.einsum("...ci,i->...", coeffs**2, self.weights(delta))

    def norm(self, coeffs: np.ndarray, delta: float) -> np.ndarray:
        return np.sqrt(self.norm_sq(coeffs, delta))

    def inner(self, a: np.ndarray, b: np.ndarray, delta: float = 0.0) -> np.ndarray:
        return np.einsum("...ci,...ci,i->...", a, b, self.weights(delta))

    def laplacian(self, coeffs: np.ndarray) -> np.ndarray:
        return -coeffs * self.eigenvalues

    def eigenfunction(self, i: int, x: np.ndarray) -> np.ndarray:
        """e_i(x) for 1-based mode index ``i``."""
        ell = self.domain_length
        return np.sqrt(2.0 / ell) * np.sin(i * np.pi * np.asarray(x) / ell)

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def mode(self, i: int, component: int = 0, amplitude: float = 1.0) -> "Field":
        c = np.zeros(self.shape)
        c[component, i - 1] = amplitude
        return Field(self, c)

    # -- collocation ----------------------------------------------------------
    def to_values(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.n_modes:
            raise ValueError(f"expected {self.n_modes} modes, got {coeffs.shape[-1]}")
        m = self.collocation_size
        full = np.zeros(coeffs.shape[:-1] + (m,))
        full[..., : self.n_modes] = coeffs
        scale = np.sqrt(2.0 / self.domain_length) * np.sqrt((m + 1) / 2.0)
        return scale * scipy.fft.dst(full, type=1, axis=-1, norm="ortho")

    def from_values(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        m = self.collocation_size
        if values.shape[-1] != m:
            raise ValueError(f"expected {m} collocation values, got {values.shape[-1]}")
        scale = np.sqrt(self.domain_length / 2.0) * np.sqrt(2.0 / (m + 1))
        full = scale * scipy.fft.dst(values, type=1, axis=-1, norm="ortho")
        return full[..., : self.n_modes]

    # -- flattening (mode-major: index = mode * r + component) ----------------
    def to_vec(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs)
        return np.swapaxes(c, -1, -2).reshape(c.shape[:-2] + (self.dim,))

    def from_vec(self, vec: np.ndarray) -> np.ndarray:
        v = np.asarray(vec)
        out = v.reshape(v.shape[:-1] + (self.n_modes, self.n_components))
        return np.swapaxes(out, -1, -2)

    def vec_weights(self, delta: float) -> np.ndarray:
        return np.repeat(self.weights(delta), self.n_components)


def build_space(length: float, n_modes: int, n_components: int,
                collocation_size: int | None = None) -> SpectralSpace:
    if not (length > 0):
        raise InvalidConfigError(f"domain length must be positive, got {length}")
    if int(n_modes) != n_modes or n_modes < 1:
        raise InvalidConfigError(f"n_modes must be a positive integer, got {n_modes}")
    if int(n_components) != n_components or n_components < 1:
        raise InvalidConfigError(f"n_components must be a positive integer, got {n_components}")
    n_modes, n_components = int(n_modes), int(n_components)
    m = 2 * n_modes if collocation_size is None else int(collocation_size)
    if m < n_modes:
        raise InvalidConfigError("collocation size must be at least n_modes")
    idx = np.arange(1, n_modes + 1)
    eig = (idx * np.pi / length) ** 2
    grid = np.arange(1, m + 1) * length / (m + 1)
    basis = np.sqrt(2.0 / length) * np.sin(np.outer(idx, grid) * np.pi / length)
    for arr in (eig, grid, basis):
        arr.setflags(write=False)
    return SpectralSpace(float(length), n_modes, n_components, m, eig, grid, basis)


@dataclass(frozen=True)
class Field:
    """An r-component field given by its sine coefficients, shape (r, N)."""

    space: SpectralSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != self.space.shape:
            raise ValueError(f"coefficient shape {c.shape} != {self.space.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("field coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.space, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "Field":
        return Field(self.space, a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.space, -self.coeffs)

    def norm(self, delta: float = 0.0) -> float:
        return sobolev_norm(self, delta)

    def inner(self, other: "Field", delta: float = 0.0) -> float:
        return float(self.space.inner(self.coeffs, other.coeffs, delta))

    def laplacian(self) -> "Field":
        return Field(self.space, self.space.laplacian(self.coeffs))

    def values(self) -> np.ndarray:
        return to_collocation(self)


@dataclass(frozen=True)
class PhaseState:
    """Position/velocity pair (u, du/dt) for a given mass."""

    u: Field
    v: Field
    mass: float
    scaled: bool = False  # True when v holds sqrt(mass) * du/dt

    def __post_init__(self):
        if self.u.space is not self.v.space:
            raise ValueError("u and v must live on the same SpectralSpace")
        if not self.mass > 0:
            raise ValueError("mass must be positive")

    def energy_norm_sq(self, delta: float) -> float:
        """||(u, sqrt(mu) v)||^2 in H^delta x H^(delta-1)."""
        mu = 1.0 if self.scaled else self.mass
        return self.u.norm(delta) ** 2 + mu * self.v.norm(delta - 1) ** 2


def sobolev_norm(h: Field, delta: float) -> float:
    """(sum_{c,i} alpha_i^delta <h_c, e_i>^2)^(1/2)."""
    return float(h.space.norm(h.coeffs, delta))


def to_collocation(h: Field) -> np.ndarray:
    return h.space.to_values(h.coeffs)


def from_collocation(values: np.ndarray, space: SpectralSpace) -> Field:
    values = np.asarray(values, dtype=float)
    if values.shape != (space.n_components, space.collocation_size):
        raise ValueError(f"values shape {values.shape} != "
                         f"{(space.n_components, space.collocation_size)}")
    return Field(space, space.from_values(values))


def field_from_function(space: SpectralSpace, func, n_quad: int = 4096) -> Field:
    """Project a function x -> (r,) values onto the basis by dense midpoint-free
    Gauss-Legendre quadrature (independent of the collocation grid)."""
    x, w = np.polynomial.legendre.leggauss(n_quad)
    x = 0.5 * space.domain_length * (x + 1.0)
    w = 0.5 * space.domain_length * w
    vals = np.atleast_2d(np.asarray(func(x), dtype=float))
    idx = np.arange(1, space.n_modes + 1)
    e = np.sqrt(2.0 / space.domain_length) * np.sin(np.outer(idx, x) * np.pi / space.domain_length)
    return Field(space, np.einsum("cx,ix,x->ci", vals, e, w))
