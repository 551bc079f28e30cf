"""Noise-induced drift S(u) = E[(Dg^{-1}(u) z) z], z ~ N(0, Lambda_u).

Writing K for the inverse-friction gradient tensor (Dg^{-1}(u)[k] =
sum K[:, :, c, i] k[c, i]), the bilinear integrand is
``s[a, j] = sum_{b,c,i} K[a, b, c, i] z[c, i] z[b, j]``, so every route below
evaluates the same Gaussian expectation differently:

* ``spectral``: sum over eigenpairs (lam_m, phi_m) of Lambda of lam_m (K phi_m) phi_m,
* ``contract``: direct index contraction of K against Lambda (used for batched
  trajectories, same value to rounding),
* ``monte_carlo``: sample mean over draws from nu^u,
* ``stationary_process_oracle``: time average along an exact OU trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .coefficients import Coefficients
from .noise import NoisePath
from .ou import NumericalError, OuKernel, lyapunov_matrix, noise_gram
from .spectral import Field, SpectralSpace

EIG_DROP = 1e-14


@dataclass(frozen=True)
class DriftResult:
    value: Field
    method: str
    error_estimate: float = 0.0  # aggregate SE: sqrt(sum of per-coefficient SE^2)
    sample_count: int = 0
    stderr: np.ndarray | None = None  # per-coefficient SE, shape (r, N)

    def __post_init__(self):
        if not np.isfinite(self.error_estimate) or self.error_estimate < 0:
            raise ValueError("error_estimate must be finite and nonnegative")

    def agrees_with(self, other: "DriftResult", n_se: float = 3.0) -> bool:
        """Aggregate check ||a - b|| <= n_se * sqrt(SE_a^2 + SE_b^2)."""
        diff = np.linalg.norm(self.value.coeffs - other.value.coeffs)
        se = np.hypot(self.error_estimate, other.error_estimate)
        return bool(diff <= n_se * se) if se > 0 else bool(diff <= 1e-12 * (1 + np.abs(self.value.coeffs).max()))


def _c(u) -> np.ndarray:
    return u.coeffs if isinstance(u, Field) else np.asarray(u, dtype=float)


def _kernel(coeffs: Coefficients, u, kernel: OuKernel | None) -> OuKernel:
    return OuKernel.from_coefficients(coeffs, u) if kernel is None else kernel


def contract_bilinear(space: SpectralSpace, kten: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """S[a, j] = sum K[a, b, c, i] Lambda[(i, c), (j, b)], batched over leading axes."""
    n, r = space.n_modes, space.n_components
    l4 = lam.reshape(lam.shape[:-2] + (n, r, n, r))  # [i, c, j, b]
    return np.einsum("...abci,...icjb->...aj", kten, l4)


def drift_spectral(u, coeffs: Coefficients, kernel: OuKernel | None = None) -> DriftResult:
    sp = coeffs.space
    c = _c(u)
    ker = _kernel(coeffs, c, kernel)
    try:
        w, vecs = np.linalg.eigh(ker.Lambda)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of Lambda failed: {exc}") from exc
    keep = w > EIG_DROP * max(w.max(), 0.0)
    w, vecs = w[keep], vecs[:, keep]
    kten = coeffs.inverse_friction_gradient(c)
    phis = sp.from_vec(vecs.T)  # (m, r, N)
    mats = np.einsum("abci,mci->mab", kten, phis)
    s = np.einsum("m,mab,mbj->aj", w, mats, phis)
    return DriftResult(Field(sp, s), "spectral", 0.0, 0)


def drift_contract(u, coeffs: Coefficients, kernel: OuKernel | None = None) -> DriftResult:
    c = _c(u)
    ker = _kernel(coeffs, c, kernel)
    s = contract_bilinear(coeffs.space, coeffs.inverse_friction_gradient(c), ker.Lambda)
    return DriftResult(Field(coeffs.space, s), "contract", 0.0, 0)


def drift_batch(coeffs: Coefficients, u: np.ndarray, method: str = "spectral") -> np.ndarray:
    """S(u) for a batch of states u of shape (..., r, N); returns the same shape."""
    sp = coeffs.space
    u = np.asarray(u, dtype=float)
    if coeffs.friction.is_constant and coeffs.cutoff is None:
        return np.zeros_like(u)
    g = coeffs.friction_matrix(u)
    b = noise_gram(u, coeffs)
    lam = lyapunov_matrix(g, b, check=False)
    lam = 0.5 * (lam + np.swapaxes(lam, -1, -2))
    kten = coeffs.inverse_friction_gradient(u)
    if method == "contract":
        return contract_bilinear(sp, kten, lam)
    if method != "spectral":
        raise ValueError(f"unknown drift method {method!r}")
    w, vecs = np.linalg.eigh(lam)
    wmax = np.maximum(w.max(axis=-1, keepdims=True), 0.0)
    w = np.where(w > EIG_DROP * wmax, w, 0.0)
    phis = sp.from_vec(np.swapaxes(vecs, -1, -2))  # (..., m, r, N)
    mats = np.einsum("...abci,...mci->...mab", kten, phis)
    return np.einsum("...m,...mab,...mbj->...aj", w, mats, phis)


def _bilinear_samples(kten: np.ndarray, z: np.ndarray) -> np.ndarray:
    """(K z) z for samples z of shape (n, r, N)."""
    mats = np.einsum("abci,nci->nab", kten, z)
    return np.einsum("nab,nbj->naj", mats, z)


def drift_monte_carlo(u, coeffs: Coefficients, n_samples: int, rng: np.random.Generator,
                      kernel: OuKernel | None = None, chunk: int = 20000) -> DriftResult:
    if n_samples < 100:
        raise ValueError("drift_monte_carlo needs at least 100 samples")
    sp = coeffs.space
    c = _c(u)
    ker = _kernel(coeffs, c, kernel)
    f = ker.factor()
    kten = coeffs.inverse_friction_gradient(c)
    total = np.zeros(sp.shape)
    total_sq = np.zeros(sp.shape)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        z = sp.from_vec(rng.standard_normal((m, sp.dim)) @ f.T)
        s = _bilinear_samples(kten, z)
        total += s.sum(axis=0)
        total_sq += (s**2).sum(axis=0)
        done += m
    mean = total / n_samples
    var = np.maximum(total_sq / n_samples - mean**2, 0.0) * n_samples / (n_samples - 1)
    se = np.sqrt(var / n_samples)
    return DriftResult(Field(sp, mean), "monte_carlo", float(np.sqrt(np.sum(se**2))),
                       n_samples, se)


def stationary_process_oracle(u, coeffs: Coefficients, path: NoisePath, burn_in: float,
                              horizon: float, n_batches: int = 40,
                              kernel: OuKernel | None = None) -> DriftResult:
    """Ergodic average of (Dg^{-1}(u) y) y along y_{n+1} = e^{-G h} y_n + xi_n.

    h is ``path.base_dt``; the innovations xi_n ~ N(0, Lambda - E Lambda E^T) are
    exact, built from the path's standard normals, so there is no time-step bias.
    The standard error uses batch means over ``n_batches`` contiguous blocks.
    """
    sp = coeffs.space
    c = _c(u)
    ker = _kernel(coeffs, c, kernel)
    g0 = coeffs.friction.gamma0
    if burn_in < 10.0 / g0:
        raise ValueError(f"burn_in must be at least 10/gamma0 = {10.0 / g0:.4g}")
    h = path.base_dt
    n_burn = int(np.ceil(burn_in / h))
    n_keep = int(np.floor(horizon / h))
    if n_burn + n_keep > path.n_steps:
        raise ValueError("path horizon shorter than burn_in + horizon")
    n_keep -= n_keep % n_batches
    if n_keep < n_batches:
        raise ValueError("horizon too short for the requested batch count")

    a = scipy.linalg.expm(-ker.friction * h)
    big_a = np.kron(np.eye(sp.n_modes), a)
    lam = ker.Lambda
    cov = lam - big_a @ lam @ big_a.T
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-10 * max(1.0, w.max()):
        raise NumericalError("innovation covariance not PSD")
    fac = v * np.sqrt(np.clip(w, 0.0, None))

    total_steps = n_burn + n_keep
    zeta = sp.to_vec(path.normals(0, total_steps))  # (n, dim)
    xi = sp.from_vec(zeta @ fac.T)  # (n, r, N)

    # AR(1) with the r x r matrix a acting on every mode: diagonalize a and
    # filter each eigen-coordinate as a scalar recursion.
    ev, vec = np.linalg.eig(a)
    vinv = np.linalg.inv(vec)
    eta = np.einsum("pa,nai->npi", vinv, xi.astype(complex))
    y0 = np.zeros(sp.shape, dtype=complex)  # start at 0; burn-in removes the transient
    out = np.empty_like(eta)
    for p in range(len(ev)):
        # y_{n+1} = ev y_n + eta_n ; the filter output index n holds y_{n+1}
        out[:, p, :] = scipy.signal.lfilter([1.0], [1.0, -ev[p]], eta[:, p, :], axis=0,
                                            zi=(ev[p] * y0[p])[None, :])[0]
    y = np.einsum("ap,npi->nai", vec, out).real[n_burn:]

    kten = coeffs.inverse_friction_gradient(c)
    size = n_keep // n_batches
    means = np.stack([_bilinear_samples(kten, y[k * size:(k + 1) * size]).mean(axis=0)
                      for k in range(n_batches)])
    mean = means.mean(axis=0)
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return DriftResult(Field(sp, mean), "ergodic", float(np.sqrt(np.sum(se**2))), n_keep, se)


def drift_lipschitz_probe(u1, u2, coeffs: Coefficients) -> float:
    """||S(u1)-S(u2)||_{H^1} / [(1 + ||u1||^2_{H^2} + ||u2||^2_{H^2}) ||u1-u2||_{H^1}]."""
    sp = coeffs.space
    c1, c2 = _c(u1), _c(u2)
    dist = float(sp.norm(c1 - c2, 1.0))
    if dist == 0.0:
        raise ValueError("u1 == u2: the Lipschitz ratio is undefined")
    s1 = drift_spectral(c1, coeffs).value.coeffs
    s2 = drift_spectral(c2, coeffs).value.coeffs
    denom = (1.0 + sp.norm_sq(c1, 2.0) + sp.norm_sq(c2, 2.0)) * dist
    return float(sp.norm(s1 - s2, 1.0) / denom)


def drift(u, coeffs: Coefficients, method: str = "spectral", **kwargs) -> DriftResult:
    if method == "spectral":
        return drift_spectral(u, coeffs, kwargs.get("kernel"))
    if method == "contract":
        return drift_contract(u, coeffs, kwargs.get("kernel"))
    if method == "monte_carlo":
        return drift_monte_carlo(u, coeffs, kwargs["n_samples"], kwargs["rng"], kwargs.get("kernel"))
    raise ValueError(f"unknown drift method {method!r}")
