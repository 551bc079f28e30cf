"""The frozen-coefficient OU cell problem dy = -g(u) y dt + sigma(u) dw^Q.

Coordinates: a field is flattened mode-major (index ``mode * r + component``),
so the drift operator is ``kron(I_N, G)`` and every (N r) x (N r) matrix splits
into N x N blocks of size r x r. Because G acts identically on each spatial
mode, the Lyapunov equation decouples into N^2 small Sylvester problems that
share one Kronecker operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coefficients import Coefficients, DiffusionModel
from .spectral import Field, SpectralSpace

PSD_TOL = 1e-10
COND_LIMIT = 1e12


class NumericalError(ArithmeticError):
    """A linear-algebra step failed (ill conditioning, indefinite covariance)."""


class UnsupportedFunctionalError(TypeError):
    """generator_apply only handles constant, linear and quadratic functionals."""


def to_blocks(mat: np.ndarray, n_modes: int, r: int) -> np.ndarray:
    """(..., N r, N r) mode-major matrix -> (..., N, N, r, r) blocks."""
    lead = mat.shape[:-2]
    return np.swapaxes(mat.reshape(lead + (n_modes, r, n_modes, r)), -3, -2)


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    lead = blocks.shape[:-4]
    n, _, r, _ = blocks.shape[-4:]
    return np.swapaxes(blocks, -3, -2).reshape(lead + (n * r, n * r))


def expm(a: np.ndarray) -> np.ndarray:
    return scipy.linalg.expm(a)


def block_apply(g: np.ndarray, vec: np.ndarray, r: int) -> np.ndarray:
    """kron(I_N, g) @ vec for mode-major vectors (batched over leading axes)."""
    lead = vec.shape[:-1]
    y = vec.reshape(lead + (-1, r))
    return np.einsum("...ab,...jb->...ja", g, y).reshape(lead + (-1,))


@dataclass(frozen=True)
class BlockCovariance:
    space: SpectralSpace
    matrix: np.ndarray  # (N r, N r), mode-major

    @property
    def blocks(self) -> np.ndarray:
        return to_blocks(self.matrix, self.space.n_modes, self.space.n_components)

    def block(self, i: int, j: int) -> np.ndarray:
        r = self.space.n_components
        return self.matrix[i * r:(i + 1) * r, j * r:(j + 1) * r]

    def trace(self, delta: float = 0.0) -> float:
        """Tr_{H^delta}: sum_j alpha_j^delta tr(block(j, j))."""
        return float(np.sum(np.diag(self.matrix) * self.space.vec_weights(delta)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T)).min())

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.T)))


def noise_gram(u, diffusion: DiffusionModel | Coefficients) -> np.ndarray:
    """B = [sigma(u)Q][sigma(u)Q]^* in coefficient coordinates, (..., N r, N r)."""
    c = u.coeffs if isinstance(u, Field) else u
    op = diffusion.sigma_operator(c) if isinstance(diffusion, Coefficients) \
        else diffusion.operator(c)
    return op @ np.swapaxes(op, -1, -2)


def kron_operator(g: np.ndarray) -> np.ndarray:
    """Matrix of X -> G X + X G^T acting on row-major vec(X)."""
    r = g.shape[-1]
    eye = np.eye(r)
    k = np.einsum("...ac,bd->...abcd", g, eye) + np.einsum("ac,...bd->...abcd", eye, g)
    return k.reshape(g.shape[:-2] + (r * r, r * r))


def lyapunov_matrix(g: np.ndarray, b: np.ndarray, *, check: bool = True) -> np.ndarray:
    """Solve G L_ij + L_ij G^T = B_ij for every r x r block; batched.

    ``g``: (..., r, r); ``b``: (..., N r, N r) mode-major. Returns (..., N r, N r).
    """
    r = g.shape[-1]
    n_modes = b.shape[-1] // r
    k = kron_operator(g)
    if check:
        cond = np.linalg.cond(k)
        if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
            raise NumericalError(f"Kronecker Sylvester operator ill-conditioned (cond={np.max(cond):.3g})")
    kinv = np.linalg.inv(k)
    lead = b.shape[:-2]
    # (..., i, a, j, b) -> (..., i, j, a, b) -> one (r*r)-vector per block
    rhs = b.reshape(lead + (n_modes, r, n_modes, r)).swapaxes(-3, -2)
    rhs = rhs.reshape(lead + (n_modes * n_modes, r * r))
    sol = rhs @ np.swapaxes(kinv, -1, -2)
    sol = sol.reshape(lead + (n_modes, n_modes, r, r)).swapaxes(-3, -2)
    out = sol.reshape(lead + (n_modes * r, n_modes * r))
    return 0.5 * (out + np.swapaxes(out, -1, -2)) if check else out


def lyapunov_residual(g: np.ndarray, lam: np.ndarray, b: np.ndarray) -> float:
    """max over blocks of ||G L_ij + L_ij G^T - B_ij||_F."""
    r = g.shape[-1]
    n_modes = b.shape[-1] // r
    lb = to_blocks(lam, n_modes, r)
    res = g @ lb + lb @ np.swapaxes(g, -1, -2) - to_blocks(b, n_modes, r)
    return float(np.max(np.sqrt(np.sum(res**2, axis=(-1, -2)))))


def lyapunov_solve(g: np.ndarray, b: np.ndarray, space: SpectralSpace) -> BlockCovariance:
    g = np.asarray(g, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.ndim == 4:
        b = from_blocks(b)
    lam = lyapunov_matrix(g, b)
    return BlockCovariance(space, lam)


@dataclass(frozen=True)
class OuKernel:
    space: SpectralSpace
    friction: np.ndarray  # G, (r, r)
    gram: np.ndarray  # B, (N r, N r)
    covariance: BlockCovariance  # Lambda

    @classmethod
    def build(cls, space: SpectralSpace, g: np.ndarray, b: np.ndarray) -> "OuKernel":
        g = np.asarray(g, dtype=float)
        sym_min = np.linalg.eigvalsh(0.5 * (g + g.T)).min()
        if sym_min <= 0:
            raise NumericalError(f"friction symmetric part not positive (min eig {sym_min:.3g})")
        return cls(space, g, np.asarray(b, dtype=float), lyapunov_solve(g, b, space))

    @classmethod
    def from_coefficients(cls, coeffs: Coefficients, u) -> "OuKernel":
        c = u.coeffs if isinstance(u, Field) else np.asarray(u)
        return cls.build(coeffs.space, coeffs.friction_matrix(c), noise_gram(c, coeffs))

    @property
    def Lambda(self) -> np.ndarray:
        return self.covariance.matrix

    def propagator(self, t: float) -> np.ndarray:
        return expm(-self.friction * t)

    def residual(self) -> float:
        return lyapunov_residual(self.friction, self.Lambda, self.gram)

    def factor(self) -> np.ndarray:
        """F with F F^T = Lambda; eigenvalues in [-PSD_TOL, 0) are clipped."""
        w, v = np.linalg.eigh(self.Lambda)
        if w.min() < -PSD_TOL * max(1.0, w.max()):
            raise NumericalError(f"invariant covariance not PSD (min eig {w.min():.3g})")
        return v * np.sqrt(np.clip(w, 0.0, None))

    def drift_operator(self) -> np.ndarray:
        return np.kron(np.eye(self.space.n_modes), self.friction)


def ou_transition(kernel: OuKernel, v, t: float) -> tuple[Field, BlockCovariance]:
    if t < 0:
        raise ValueError("t must be nonnegative")
    sp = kernel.space
    e = kernel.propagator(t)
    c = v.coeffs if isinstance(v, Field) else np.asarray(v, dtype=float)
    if c.ndim == 1:
        c = sp.from_vec(c)
    mean = np.einsum("ab,bi->ai", e, c)
    big_e = np.kron(np.eye(sp.n_modes), e)
    lam = kernel.Lambda
    cov = lam - big_e @ lam @ big_e.T
    return Field(sp, mean), BlockCovariance(sp, 0.5 * (cov + cov.T))


def invariant_sample(kernel: OuKernel, rng: np.random.Generator, size: int | None = None):
    """Draw from nu^u = N(0, Lambda_u). Returns a Field, or (size, r, N) array."""
    f = kernel.factor()
    sp = kernel.space
    if size is None:
        z = f @ rng.standard_normal(sp.dim)
        return Field(sp, sp.from_vec(z))
    z = rng.standard_normal((size, sp.dim)) @ f.T
    return sp.from_vec(z)


# -- functionals --------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticForm:
    """q(z) = z^T P z + g^T z + c on mode-major coefficient vectors (P symmetric)."""

    P: np.ndarray
    g: np.ndarray | None = None
    c: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.P, dtype=float)
        object.__setattr__(self, "P", 0.5 * (p + p.T))
        n = p.shape[0]
        object.__setattr__(self, "g", np.zeros(n) if self.g is None else np.asarray(self.g, float))

    def value(self, z: np.ndarray) -> np.ndarray:
        return np.einsum("...i,ij,...j->...", z, self.P, z) + z @ self.g + self.c

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return 2.0 * z @ self.P + self.g

    def hessian(self, z: np.ndarray | None = None) -> np.ndarray:
        return 2.0 * self.P


@dataclass(frozen=True)
class LinearFunctional:
    """l(z) = g^T z + c."""

    g: np.ndarray
    c: float = 0.0

    def value(self, z):
        return z @ self.g + self.c

    def gradient(self, z):
        return np.broadcast_to(self.g, np.shape(z)).copy()

    def hessian(self, z=None):
        return np.zeros((len(self.g), len(self.g)))


def _vec(space: SpectralSpace, v) -> np.ndarray:
    if isinstance(v, Field):
        return space.to_vec(v.coeffs)
    v = np.asarray(v, dtype=float)
    return space.to_vec(v) if v.shape[-2:] == space.shape else v


def semigroup_on_quadratic(kernel: OuKernel, q: QuadraticForm | LinearFunctional, v, t: float) -> float:
    """P_t q(v) = E q(y^{u,v}(t)) = q(mean_t) + tr(P C_t), exact."""
    sp = kernel.space
    mean, cov = ou_transition(kernel, v, t)
    m = sp.to_vec(mean.coeffs)
    val = float(q.value(m))
    if isinstance(q, QuadraticForm):
        val += float(np.sum(q.P * cov.matrix))
    return val


def generator_apply(kernel: OuKernel, phi, v) -> float:
    """M phi(v) = 1/2 sum_k D^2 phi(v)[b_k, b_k] - D phi(v)[G v].

    The trace runs over the noise columns b_k = sigma(u) Q e_k, so it equals
    tr(Hess phi . B) in coefficient coordinates whatever inner product is used
    to represent the gradient.
    """
    if not isinstance(phi, (QuadraticForm, LinearFunctional)) and not (
            hasattr(phi, "gradient") and hasattr(phi, "hessian")):
        raise UnsupportedFunctionalError(f"cannot apply generator to {type(phi).__name__}")
    sp = kernel.space
    z = _vec(sp, v)
    drift = block_apply(kernel.friction, z, sp.n_components)
    trace = 0.5 * float(np.sum(phi.hessian(z) * kernel.gram))
    return trace - float(phi.gradient(z) @ drift)
