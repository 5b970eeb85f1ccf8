"""Squared-exponential ARD kernel and Cholesky-based GP machinery."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

# Jitter ladder, scaled by mean(diag K); tried smallest first.
_JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)

# Relative nugget added to every same-set Gram matrix. This amounts to
# using the kernel k + NUGGET * amplitude * delta(x, x'), which keeps
# conditioning on clustered support points well posed while perturbing
# function values only at the 1e-3 scale.
NUGGET = 1e-6


class CholeskyError(np.linalg.LinAlgError):
    """Cholesky failed at the maximum jitter of the ladder."""


@dataclass
class KernelParams:
    """Amplitude and per-dimension lengthscales, stored as logs."""

    log_amplitude: float
    log_lengthscales: np.ndarray

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=float)
        )

    @classmethod
    def create(cls, amplitude, lengthscales):
        amplitude = float(amplitude)
        lengthscales = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if amplitude <= 0 or np.any(lengthscales <= 0):
            raise ValueError("amplitude and lengthscales must be positive")
        return cls(np.log(amplitude), np.log(lengthscales))

    @property
    def amplitude(self):
        return float(np.exp(self.log_amplitude))

    @property
    def lengthscales(self):
        return np.exp(self.log_lengthscales)

    @property
    def dim(self):
        return self.log_lengthscales.size

    def as_vector(self):
        return np.concatenate([[self.log_amplitude], self.log_lengthscales])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), vec[1:].copy())


def kernel_matrix(x, y, params: KernelParams):
    """SE-ARD kernel matrix: amp * prod_i exp(-(x_i - y_i)^2 / (2 l_i^2))."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ValueError("dimension mismatch between point sets")
    if x.shape[1] != params.dim:
        raise ValueError("dimension mismatch between points and lengthscales")
    ls = params.lengthscales
    xs = x / ls
    ys = y / ls
    sq = (
        np.sum(xs**2, axis=1)[:, None]
        + np.sum(ys**2, axis=1)[None, :]
        - 2.0 * xs @ ys.T
    )
    np.maximum(sq, 0.0, out=sq)
    return params.amplitude * np.exp(-0.5 * sq)


def gram_matrix(x, params: KernelParams):
    """Same-set kernel matrix under k + NUGGET * amplitude * delta."""
    k = kernel_matrix(x, x, params)
    k[np.diag_indices_from(k)] += NUGGET * params.amplitude
    return k


@dataclass
class CholeskyFactor:
    """Lower factor L with K + jitter*I = L L^T."""

    lower: np.ndarray
    jitter: float

    def solve(self, b):
        return cho_solve((self.lower, True), b)

    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def chol_jitter(k) -> CholeskyFactor:
    """Cholesky with the smallest working jitter from the ladder."""
    k = np.asarray(k, dtype=float)
    scale = float(np.mean(np.diag(k)))
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    # floor keeps the ladder effective for numerically-zero conditional
    # covariances, where mean(diag) can fall below machine epsilon
    scale = max(scale, 1e-8)
    last_err = None
    for eps in _JITTER_LADDER:
        try:
            lower = cholesky(k + eps * scale * np.eye(k.shape[0]), lower=True)
            return CholeskyFactor(lower=lower, jitter=eps * scale)
        except np.linalg.LinAlgError as err:
            last_err = err
    cond = np.linalg.eigvalsh(k)
    raise CholeskyError(
        "Cholesky failed at maximum jitter "
        f"{_JITTER_LADDER[-1] * scale:g}; eigenvalue range "
        f"[{cond.min():g}, {cond.max():g}]"
    ) from last_err


def conditional_prior(g_known, x_known, x_query, params: KernelParams, mu0):
    """GP conditional prior mean and covariance at query points.

    mean = mu0 + K_qa K_aa^-1 (g_a - mu0), cov = K_qq - K_qa K_aa^-1 K_aq,
    computed through Cholesky solves.
    """
    g_known = np.asarray(g_known, dtype=float)
    x_known = np.atleast_2d(np.asarray(x_known, dtype=float))
    x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
    if x_known.shape[0] == 0:
        raise ValueError("conditioning set must be nonempty")
    kaa = gram_matrix(x_known, params)
    kqa = kernel_matrix(x_query, x_known, params)
    kqq = gram_matrix(x_query, params)
    fac = chol_jitter(kaa)
    alpha = fac.solve(g_known - mu0)
    mean = mu0 + kqa @ alpha
    v = solve_triangular(fac.lower, kqa.T, lower=True)
    cov = kqq - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def conditional_prior_diag(g_known, x_known, x_query, params: KernelParams, mu0):
    """Conditional prior mean and per-point (marginal) variance only."""
    g_known = np.asarray(g_known, dtype=float)
    x_known = np.atleast_2d(np.asarray(x_known, dtype=float))
    x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
    kaa = gram_matrix(x_known, params)
    kqa = kernel_matrix(x_query, x_known, params)
    fac = chol_jitter(kaa)
    mean = mu0 + kqa @ fac.solve(g_known - mu0)
    v = solve_triangular(fac.lower, kqa.T, lower=True)
    var = params.amplitude * (1.0 + NUGGET) - np.sum(v**2, axis=0)
    np.maximum(var, 0.0, out=var)
    return mean, var


def sample_mvn(mean, cov, rng, size=None):
    """Draw from N(mean, cov) through the jittered Cholesky factor.

    Conditional covariances can be indefinite at the level of rounding
    error in the ambient kernel scale; if the jitter ladder fails, the
    matrix is projected to the PSD cone by clipping eigenvalues.
    """
    try:
        root = chol_jitter(cov).lower
    except CholeskyError:
        evals, evecs = np.linalg.eigh(cov)
        root = evecs * np.sqrt(np.maximum(evals, 0.0))
    if size is None:
        return mean + root @ rng.standard_normal(mean.size)
    eps = rng.standard_normal((mean.size, size))
    return mean[None, :] + (root @ eps).T


def sparse_predictive_moments(inducing, mu2s, sigma2s, params: KernelParams,
                              mu0, x_query, ks_factor=None):
    """Predictive mean, variance and tilt under a sparse GP posterior.

    mean(x)  = mu0 + k_s(x)^T K_s^-1 (mu2s - mu0)
    var(x)   = k(x,x) - k_s(x)^T K_s^-1 k_s(x)
               + k_s(x)^T K_s^-1 Sigma2s K_s^-1 k_s(x)
    tilt(x)  = sqrt(mean^2 + var)

    Returns (mean, var, tilt) as arrays over the query points.
    """
    inducing = np.atleast_2d(np.asarray(inducing, dtype=float))
    x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
    if ks_factor is None:
        ks_factor = chol_jitter(gram_matrix(inducing, params))
    kqs = kernel_matrix(x_query, inducing, params)
    a = ks_factor.solve(kqs.T)  # K_s^-1 k_s(x), shape (L, Q)
    mean = mu0 + a.T @ (mu2s - mu0)
    v = solve_triangular(ks_factor.lower, kqs.T, lower=True)
    nystrom = np.sum(v**2, axis=0)
    post = np.sum(a * (sigma2s @ a), axis=0)
    var = params.amplitude * (1.0 + NUGGET) - nystrom + post
    np.maximum(var, 0.0, out=var)
    tilt = np.sqrt(mean**2 + var)
    return mean, var, tilt
