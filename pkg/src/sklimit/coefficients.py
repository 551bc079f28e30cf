"""Friction, forcing and diffusion coefficients, plus their cutoff-truncated
versions.

The friction acts as ``[gamma(u) k](x) = g(u) k(x)`` with ``g`` an r x r matrix
depending nonlocally on the whole field ``u`` through H^1 pairings against
probe fields::

    g(u) = G0 + sum_k A_k tanh(<u, w_k>_{H^1})

All array routines accept coefficient arrays with leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .spectral import Field, InvalidConfigError, SpectralSpace


def _coeffs(u) -> np.ndarray:
    return u.coeffs if isinstance(u, Field) else np.asarray(u, dtype=float)


@dataclass(frozen=True)
class FrictionModel:
    space: SpectralSpace
    gamma0: float
    base: np.ndarray
    perturbations: np.ndarray = None  # (K, r, r)
    probes: np.ndarray = None  # (K, r, N)
    kind: str = "matrix_nonlocal"

    def __post_init__(self):
        r = self.space.n_components
        base = np.array(self.base, dtype=float).reshape(r, r)
        pert = (np.zeros((0, r, r)) if self.perturbations is None
                else np.array(self.perturbations, dtype=float).reshape(-1, r, r))
        probes = (np.zeros((0,) + self.space.shape) if self.probes is None
                  else np.array(self.probes, dtype=float).reshape((-1,) + self.space.shape))
        if len(pert) != len(probes):
            raise InvalidConfigError("need one probe field per perturbation matrix")
        if self.kind not in ("constant", "scalar_nonlocal", "matrix_nonlocal"):
            raise InvalidConfigError(f"unknown friction kind {self.kind!r}")
        if self.kind == "scalar_nonlocal" and r != 1:
            raise InvalidConfigError("scalar_nonlocal friction requires r = 1")
        if self.kind == "constant" and len(pert):
            raise InvalidConfigError("constant friction takes no perturbations")
        if not self.gamma0 > 0:
            raise InvalidConfigError("gamma0 must be positive")
        # tanh ranges over [-1, 1], so the worst case loses sum ||A_k||_2
        margin = np.linalg.eigvalsh(0.5 * (base + base.T)).min()
        margin -= sum(np.linalg.norm(a, 2) for a in pert)
        if margin < self.gamma0:
            raise InvalidConfigError(
                f"ellipticity violated: guaranteed lower bound {margin:.6g} < gamma0={self.gamma0}")
        for arr in (base, pert, probes):
            arr.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "perturbations", pert)
        object.__setattr__(self, "probes", probes)

    @property
    def r(self) -> int:
        return self.space.n_components

    @property
    def is_constant(self) -> bool:
        return len(self.perturbations) == 0 or not np.any(self.perturbations)

    def bound(self) -> float:
        """Uniform bound on ||g(u)||_2."""
        return float(np.linalg.norm(self.base, 2)
                     + sum(np.linalg.norm(a, 2) for a in self.perturbations))

    def derivative_bound(self) -> float:
        """Uniform bound on ||Dg(u)||_{L(H^1, R^{r x r})}."""
        return float(sum(np.linalg.norm(a, 2) * self.space.norm(w, 1.0)
                         for a, w in zip(self.perturbations, self.probes)))

    def pairings(self, u) -> np.ndarray:
        return np.einsum("...ci,kci,i->...k", _coeffs(u), self.probes, self.space.eigenvalues)

    def matrix(self, u) -> np.ndarray:
        c = _coeffs(u)
        s = self.pairings(c)
        return self.base + np.einsum("...k,kab->...ab", np.tanh(s), self.perturbations)

    def gradient(self, u) -> np.ndarray:
        """Tensor T with Dg(u)[k] = sum_{c,i} T[..., :, :, c, i] k[c, i]."""
        s = self.pairings(u)
        sech2 = 1.0 / np.cosh(s) ** 2
        weighted = self.probes * self.space.eigenvalues
        return np.einsum("...k,kab,kci->...abci", sech2, self.perturbations, weighted)

    def derivative(self, u, k) -> np.ndarray:
        s = self.pairings(u)
        sech2 = 1.0 / np.cosh(s) ** 2
        dk = self.pairings(k)
        return np.einsum("...k,kab->...ab", sech2 * dk, self.perturbations)

    def second_derivative(self, u, k1, k2) -> np.ndarray:
        s = self.pairings(u)
        t = np.tanh(s)
        d2 = -2.0 * t * (1.0 - t**2)
        return np.einsum("...k,kab->...ab", d2 * self.pairings(k1) * self.pairings(k2),
                         self.perturbations)


def constant_friction(space: SpectralSpace, matrix, gamma0: float | None = None) -> FrictionModel:
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    if gamma0 is None:
        gamma0 = float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
    return FrictionModel(space, gamma0, m, kind="constant")


def scalar_nonlocal_friction(space: SpectralSpace, g0: float = 2.0, amplitude: float = 1.0,
                             probe: Field | None = None, gamma0: float | None = None) -> FrictionModel:
    """r = 1 friction g(u) = g0 + amplitude * tanh(<u, w>_{H^1})."""
    w = space.mode(1).coeffs if probe is None else probe.coeffs
    if gamma0 is None:
        gamma0 = g0 - abs(amplitude)
    return FrictionModel(space, gamma0, [[g0]], [[[amplitude]]], [w], kind="scalar_nonlocal")


@dataclass(frozen=True)
class NemytskiiMap:
    """Pointwise map xi -> f(xi) on R^r; arrays carry the component axis at -2."""

    func: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    lipschitz: float = np.inf
    name: str = "custom"

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        return self.func(xi)


def _rational(xi):
    return xi / (1.0 + np.sum(xi**2, axis=-2, keepdims=True))


def _rational_jac(xi):
    q = 1.0 + np.sum(xi**2, axis=-2)
    r = xi.shape[-2]
    eye = np.eye(r)[..., None]
    outer = np.einsum("...ax,...bx->...abx", xi, xi)
    return eye / q[..., None, None, :] - 2.0 * outer / (q**2)[..., None, None, :]


def rational_forcing() -> NemytskiiMap:
    """f(xi) = xi / (1 + |xi|^2): bounded, Lipschitz 1, two bounded derivatives."""
    return NemytskiiMap(_rational, _rational_jac, 1.0, "rational")


def zero_forcing() -> NemytskiiMap:
    return NemytskiiMap(np.zeros_like, None, 0.0, "zero")


def identity_forcing() -> NemytskiiMap:
    return NemytskiiMap(lambda xi: np.array(xi, dtype=float), None, 1.0, "identity")


def nemytskii_apply(fmap: NemytskiiMap, u) -> Field | np.ndarray:
    if isinstance(u, Field):
        sp = u.space
        return Field(sp, sp.from_values(fmap(sp.to_values(u.coeffs))))
    raise TypeError("nemytskii_apply expects a Field; use Coefficients.forcing_coeffs for arrays")


@dataclass(frozen=True)
class DiffusionModel:
    """sigma(u) Q e_i (x) = lam(u(x)) theta_i e_i(x), one noise per (component, mode)."""

    space: SpectralSpace
    lam: Callable[[np.ndarray], np.ndarray]  # (..., r, M) -> (..., r, r, M)
    theta: np.ndarray
    bound: float = np.inf  # sup_xi ||lam(xi)||_2
    name: str = "custom"

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        if th.shape != (self.space.n_modes,):
            raise InvalidConfigError(f"need {self.space.n_modes} covariance weights")
        if np.any(th < 0) or not np.all(np.isfinite(th)):
            raise InvalidConfigError("covariance weights must be finite and nonnegative")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    def trace_sums(self) -> tuple[float, float]:
        """Partial sums of theta_i^2 and theta_i^2 alpha_i^(1 + 1/6)."""
        a = self.space.eigenvalues
        return float(np.sum(self.theta**2)), float(np.sum(self.theta**2 * a ** (7.0 / 6.0)))

    def operator(self, u) -> np.ndarray:
        """Matrix of sigma(u)Q in coefficient coordinates, mode-major, (..., n, n).

        Column (i, c) holds the coefficients of lam(u(.)) theta_i e_i(.) eps_c.
        """
        sp = self.space
        lam = self.lam(sp.to_values(_coeffs(u)))
        e = sp.basis_values
        # m[..., a, c, j, i] = h sum_x lam_ac(x) e_j(x) e_i(x), as batched matmuls
        m = (lam[..., None, :] * e) @ (e.T * (sp.quadrature_weight * self.theta))
        n = sp.dim
        op = np.moveaxis(m, (-4, -3, -2, -1), (-3, -1, -4, -2))  # -> [..., j, a, i, c]
        return op.reshape(op.shape[:-4] + (n, n))

    def apply(self, u, noise) -> np.ndarray:
        sp = self.space
        lam = self.lam(sp.to_values(_coeffs(u)))
        nv = sp.to_values(self.theta * _coeffs(noise))
        return sp.from_values(np.einsum("...abx,...bx->...ax", lam, nv))

    def hilbert_schmidt_sq(self, u) -> np.ndarray:
        return np.sum(self.operator(u) ** 2, axis=(-1, -2))


def power_law_theta(space: SpectralSpace, q: float = 2.0) -> np.ndarray:
    # sum theta_i^2 alpha_i^(1+1/6) < inf in d = 1 requires 2q - 7/3 > 1
    if q <= 5.0 / 3.0:
        raise InvalidConfigError(f"decay exponent q={q} too small for trace-class noise in H^(7/6)")
    return np.arange(1, space.n_modes + 1, dtype=float) ** (-q)


def tanh_diffusion(space: SpectralSpace, amplitude: float = 0.3, scale: float = 1.0,
                   q: float = 2.0) -> DiffusionModel:
    """lam(xi) = scale * (I + amplitude * diag(tanh xi_1, ..., tanh xi_r))."""
    r = space.n_components

    def lam(xi):
        out = np.zeros(xi.shape[:-2] + (r, r, xi.shape[-1]))
        idx = np.arange(r)
        out[..., idx, idx, :] = scale * (1.0 + amplitude * np.tanh(xi))
        return out

    return DiffusionModel(space, lam, power_law_theta(space, q), scale * (1 + abs(amplitude)),
                          "tanh")


def constant_diffusion(space: SpectralSpace, matrix=None, q: float = 2.0,
                       theta=None) -> DiffusionModel:
    r = space.n_components
    m = np.eye(r) if matrix is None else np.atleast_2d(np.asarray(matrix, dtype=float))

    def lam(xi):
        return np.broadcast_to(m[..., None], xi.shape[:-2] + (r, r, xi.shape[-1])).copy()

    th = power_law_theta(space, q) if theta is None else theta
    return DiffusionModel(space, lam, th, float(np.linalg.norm(m, 2)), "constant")


def sigma_apply(model: DiffusionModel, u: Field, noise) -> Field:
    return Field(model.space, model.apply(u, noise))


@dataclass(frozen=True)
class CutoffModel:
    """Smooth ramp Phi_R of the H^rbar norm (cubic smoothstep on [R, R+1])."""

    radius: float
    rbar: float = 0.95
    s_bar: float = 0.5
    kappa_bar: float = 1.75
    varrho: float = 0.9

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidConfigError("cutoff radius must be >= 1")
        lower = max(2 * self.s_bar / (1 + self.s_bar), 2 * self.kappa_bar - 3, self.varrho)
        if not (lower < self.rbar < 1):
            raise InvalidConfigError(
                f"rbar={self.rbar} must lie in ({lower:.4g}, 1) for s_bar={self.s_bar}, "
                f"kappa_bar={self.kappa_bar}, varrho={self.varrho}")

    def phi(self, t):
        tau = np.clip(np.asarray(t, dtype=float) - self.radius, 0.0, 1.0)
        return 1.0 - 3.0 * tau**2 + 2.0 * tau**3

    def dphi(self, t):
        tau = np.clip(np.asarray(t, dtype=float) - self.radius, 0.0, 1.0)
        return -6.0 * tau + 6.0 * tau**2


def truncate(cutoff: CutoffModel, u) -> float:
    c = _coeffs(u)
    sp = u.space if isinstance(u, Field) else None
    if sp is None:
        raise TypeError("truncate expects a Field")
    return float(cutoff.phi(sp.norm(c, cutoff.rbar)))


@dataclass(frozen=True)
class Coefficients:
    """The triple (gamma, f, sigma), optionally truncated by a cutoff.

    With a cutoff the friction matrix becomes
    ``g_R(u) = gamma0 I + Phi_R(||u||_rbar) (g(u) - gamma0 I)`` and f, sigma are
    multiplied by ``Phi_R(||u||_rbar)``.
    """

    friction: FrictionModel
    forcing: NemytskiiMap
    diffusion: DiffusionModel
    cutoff: CutoffModel | None = None
    name: str = field(default="custom", compare=False)

    @property
    def space(self) -> SpectralSpace:
        return self.friction.space

    def with_cutoff(self, cutoff: CutoffModel | None) -> "Coefficients":
        return replace(self, cutoff=cutoff)

    def _level(self, c):
        if self.cutoff is None:
            return None, None
        sp = self.space
        nrm = sp.norm(c, self.cutoff.rbar)
        return self.cutoff.phi(nrm), (nrm, self.cutoff.dphi(nrm))

    def level(self, u) -> np.ndarray:
        c = _coeffs(u)
        phi, _ = self._level(c)
        return np.ones(c.shape[:-2]) if phi is None else phi

    def friction_matrix(self, u) -> np.ndarray:
        c = _coeffs(u)
        g = self.friction.matrix(c)
        phi, _ = self._level(c)
        if phi is None:
            return g
        g0 = self.friction.gamma0 * np.eye(self.friction.r)
        return g0 + phi[..., None, None] * (g - g0)

    def friction_gradient(self, u) -> np.ndarray:
        c = _coeffs(u)
        t = self.friction.gradient(c)
        phi, extra = self._level(c)
        if phi is None:
            return t
        nrm, dphi = extra
        sp = self.space
        g0 = self.friction.gamma0 * np.eye(self.friction.r)
        safe = np.where(nrm > 0, nrm, 1.0)
        dnorm = c * sp.weights(self.cutoff.rbar) / safe[..., None, None]
        excess = self.friction.matrix(c) - g0
        return (phi[..., None, None, None, None] * t
                + dphi[..., None, None, None, None]
                * np.einsum("...ab,...ci->...abci", excess, dnorm))

    def friction_derivative(self, u, k) -> np.ndarray:
        return np.einsum("...abci,...ci->...ab", self.friction_gradient(u), _coeffs(k))

    def inverse_friction(self, u) -> np.ndarray:
        return np.linalg.inv(self.friction_matrix(u))

    def inverse_friction_gradient(self, u) -> np.ndarray:
        """Tensor K with Dg^{-1}(u)[k] = sum K[..., :, :, c, i] k[c, i]."""
        m = self.inverse_friction(u)
        t = self.friction_gradient(u)
        return -np.einsum("...ab,...bdci,...de->...aeci", m, t, m)

    def inverse_friction_derivative(self, u, k) -> np.ndarray:
        m = self.inverse_friction(u)
        d = self.friction_derivative(u, k)
        return -m @ d @ m

    def forcing_coeffs(self, u) -> np.ndarray:
        c = _coeffs(u)
        sp = self.space
        out = sp.from_values(self.forcing(sp.to_values(c)))
        phi, _ = self._level(c)
        return out if phi is None else phi[..., None, None] * out

    def sigma_operator(self, u) -> np.ndarray:
        c = _coeffs(u)
        op = self.diffusion.operator(c)
        phi, _ = self._level(c)
        return op if phi is None else phi[..., None, None] * op

    def sigma_apply(self, u, noise) -> np.ndarray:
        c = _coeffs(u)
        out = self.diffusion.apply(c, noise)
        phi, _ = self._level(c)
        return out if phi is None else phi[..., None, None] * out


# -- public wrappers with the operation names used throughout ------------------

def friction(model: FrictionModel | Coefficients, u) -> np.ndarray:
    return model.friction_matrix(u) if isinstance(model, Coefficients) else model.matrix(u)


def friction_derivative(model: FrictionModel | Coefficients, u, k) -> np.ndarray:
    return model.friction_derivative(u, k) if isinstance(model, Coefficients) \
        else model.derivative(u, k)


def inv_friction_derivative(model: FrictionModel | Coefficients, u, k) -> np.ndarray:
    if isinstance(model, Coefficients):
        return model.inverse_friction_derivative(u, k)
    m = np.linalg.inv(model.matrix(u))
    return -m @ model.derivative(u, k) @ m


# -- catalog ------------------------------------------------------------------

DEFAULT_BASE = np.array([[2.0, 0.5], [0.5, 3.0]])
DEFAULT_PERTURBATION = np.array([[0.4, 0.3], [0.3, -0.4]])  # symmetric, ||.||_2 = 0.5
DEFAULT_GAMMA0 = 1.25


def default_coefficients(space: SpectralSpace, *, friction_amplitude: float = 1.0,
                         noise_scale: float = 1.0, noise_amplitude: float = 0.3,
                         theta_decay: float = 2.0, cutoff: CutoffModel | None = None,
                         forcing: bool = True) -> Coefficients:
    """Two-component default model.

    g(u) = G0 + A tanh(<u, w>_{H^1}) with w = (e_1, e_1); f(xi) = xi/(1+|xi|^2);
    lam(xi) = I + 0.3 diag(tanh xi); theta_i = i^-2.
    """
    if space.n_components != 2:
        raise InvalidConfigError("the default model is two-component")
    probe = np.zeros(space.shape)
    probe[:, 0] = 1.0
    fr = FrictionModel(space, DEFAULT_GAMMA0, DEFAULT_BASE,
                       [friction_amplitude * DEFAULT_PERTURBATION], [probe],
                       kind="matrix_nonlocal")
    return Coefficients(fr, rational_forcing() if forcing else zero_forcing(),
                        tanh_diffusion(space, noise_amplitude, noise_scale, theta_decay),
                        cutoff, name="default")


def constant_coefficients(space: SpectralSpace, *, noise_scale: float = 1.0,
                          noise_amplitude: float = 0.3, theta_decay: float = 2.0,
                          forcing: bool = True, cutoff: CutoffModel | None = None) -> Coefficients:
    """Default model with the friction frozen at G0 (no noise-induced drift)."""
    fr = constant_friction(space, DEFAULT_BASE[: space.n_components, : space.n_components])
    return Coefficients(fr, rational_forcing() if forcing else zero_forcing(),
                        tanh_diffusion(space, noise_amplitude, noise_scale, theta_decay),
                        cutoff, name="constant")


CATALOG = {"default": default_coefficients, "constant": constant_coefficients}


def build_coefficients(name: str, space: SpectralSpace, **kwargs) -> Coefficients:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise InvalidConfigError(f"unknown model {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(space, **kwargs)
