"""Structured mean-field variational solver with a sparse GP posterior.

Closed-form factor updates for the PG variables, the latent marked
process, the Gamma rate scaling and the inducing-point Gaussian, plus
importance-sampled space integrals, the full evidence lower bound, and
Adam hyperparameter ascent with finite-difference gradients.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import solve_triangular
from scipy.special import digamma, gammaln

from .base_measure import Dataset, DiagonalGaussian, StandardNormal
from .kernel_gp import (
    NUGGET,
    KernelParams,
    chol_jitter,
    gram_matrix,
    kernel_matrix,
    sparse_predictive_moments,
)
from .pg import pg_mean

_LN2 = np.log(2.0)


@dataclass
class VBConfig:
    n_inducing: int = 200
    n_integration: int = 5000
    tol: float = 1e-5
    max_iters: int = 200
    adam_lr: float = 0.02
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hyper_update_interval: int = 1
    update_hyper: bool = True
    fd_step: float = 1e-4

    def __post_init__(self):
        if min(self.n_inducing, self.n_integration, self.max_iters + 1) < 1:
            raise ValueError("counts must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class SparseVBState:
    inducing: np.ndarray
    mu2s: np.ndarray
    sigma2s: np.ndarray
    alpha2: float
    kernel: KernelParams
    mu0: float
    base: object
    integ_points: np.ndarray
    integ_noise: Optional[np.ndarray] = None  # frozen noise for theta_pi moves

    def ks_factor(self):
        return chol_jitter(gram_matrix(self.inducing, self.kernel))

    def predictive(self, x_query, ks_factor=None):
        return sparse_predictive_moments(
            self.inducing, self.mu2s, self.sigma2s, self.kernel,
            self.mu0, x_query, ks_factor=ks_factor,
        )


class DesignCache:
    """Hyperparameter-dependent pieces shared by all factor updates.

    Fixed for given (kernel, inducing, data, integration points): the
    inducing Gram and its factor, the cross kernel matrices, the solved
    projections a = K_s^-1 k_s(x) and the Nystrom variance deficits.
    """

    def __init__(self, state: "SparseVBState", data: Dataset):
        self.ks = gram_matrix(state.inducing, state.kernel)
        self.ksf = chol_jitter(self.ks)
        self.kns = kernel_matrix(data.points, state.inducing, state.kernel)
        self.krs = kernel_matrix(state.integ_points, state.inducing,
                                 state.kernel)
        self.a_n, self.nys_n = self._project(self.kns)
        self.a_r, self.nys_r = self._project(self.krs)
        self.prior_var = state.kernel.amplitude * (1.0 + NUGGET)

    def _project(self, kqs):
        a = self.ksf.solve(kqs.T)
        v = solve_triangular(self.ksf.lower, kqs.T, lower=True)
        return a, np.sum(v**2, axis=0)

    def moments(self, state: "SparseVBState", a, nystrom):
        """Predictive mean and variance at cached query points under the
        current q2."""
        mean = state.mu0 + a.T @ (state.mu2s - state.mu0)
        var = self.prior_var - nystrom + np.sum(a * (state.sigma2s @ a),
                                                axis=0)
        np.maximum(var, 0.0, out=var)
        return mean, var


@dataclass
class Q1Snapshot:
    """Fixed q1 quantities: tilts at observations, the rate-scaling
    surrogate lambda1 = exp(E[ln lambda]), and the per-integration-point
    tilt, mean and base-relative rate r(x) = Lambda1 omega-marginal / pi."""

    c_n: np.ndarray
    lambda1: float
    c_r: np.ndarray
    g1_r: np.ndarray
    rate_r: np.ndarray


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def _log_cosh_half(c):
    a = np.abs(np.asarray(c, dtype=float)) / 2.0
    return a + np.log1p(np.exp(-2.0 * a)) - _LN2


def update_q1(state: SparseVBState, data: Dataset,
              cache: Optional[DesignCache] = None) -> Q1Snapshot:
    """Optimal q1 factor given the current q2."""
    if cache is None:
        cache = DesignCache(state, data)
    mean_n, var_n = cache.moments(state, cache.a_n, cache.nys_n)
    c_n = np.sqrt(mean_n**2 + var_n)
    lambda1 = float(np.exp(digamma(state.alpha2)))
    g1_r, var_r = cache.moments(state, cache.a_r, cache.nys_r)
    c_r = np.sqrt(g1_r**2 + var_r)
    # omega-marginal rate of Lambda1 divided by pi(x); pi cancels against
    # the importance weight of integration points drawn from pi.
    rate_r = lambda1 * np.exp(_log_sigmoid(-c_r) + (c_r - g1_r) / 2.0)
    return Q1Snapshot(c_n=c_n, lambda1=lambda1, c_r=c_r, g1_r=g1_r,
                      rate_r=rate_r)


def update_lambda(state: SparseVBState, q1: Q1Snapshot, data: Dataset):
    """Gamma shape alpha2 = N + MC estimate of the latent-process mass."""
    bad = ~np.isfinite(q1.rate_r)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise FloatingPointError(
            f"nonfinite latent rate at integration point {idx}"
        )
    return float(data.n + q1.rate_r.mean())


def update_gp(state: SparseVBState, q1: Q1Snapshot, data: Dataset,
              cache: Optional[DesignCache] = None):
    """Closed-form update of the inducing-point Gaussian q2(g_s)."""
    if cache is None:
        cache = DesignCache(state, data)
    ks = cache.ks
    kns = cache.kns
    krs = cache.krs

    e_omega_n = np.asarray(pg_mean(1, q1.c_n))
    r = q1.rate_r.size
    w_a = q1.rate_r * np.asarray(pg_mean(1, q1.c_r)) / r  # A weights
    m_a = kns.T @ (e_omega_n[:, None] * kns) + krs.T @ (w_a[:, None] * krs)
    v_a = kns.T @ e_omega_n + krs.T @ w_a
    b_0 = 0.5 * kns.T.sum(axis=1) - 0.5 * krs.T @ (q1.rate_r / r)

    fac = chol_jitter(m_a + ks)
    sigma2s = ks @ fac.solve(ks)
    sigma2s = 0.5 * (sigma2s + sigma2s.T)
    mu2s = state.mu0 + ks @ fac.solve(b_0 - state.mu0 * v_a)
    return mu2s, sigma2s


def elbo(state: SparseVBState, q1: Q1Snapshot, data: Dataset,
         cache: Optional[DesignCache] = None):
    """Full variational lower bound for the given (q1, q2) pair."""
    if cache is None:
        cache = DesignCache(state, data)
    ks_factor = cache.ksf
    a2 = state.alpha2
    psi_a2 = float(digamma(a2))

    mean_n, var_n = cache.moments(state, cache.a_n, cache.nys_n)
    eg2_n = mean_n**2 + var_n
    e_omega_n = np.asarray(pg_mean(1, q1.c_n))
    term_obs = float(np.sum(
        psi_a2
        + state.base.log_density(data.points)
        + mean_n / 2.0 - eg2_n * e_omega_n / 2.0 - _LN2
        - _log_cosh_half(q1.c_n)
        + q1.c_n**2 * e_omega_n / 2.0
    ))

    g1_cur, var_cur = cache.moments(state, cache.a_r, cache.nys_r)
    eg2_cur = g1_cur**2 + var_cur
    e_omega_tilt = np.asarray(pg_mean(1, q1.c_r))
    bracket = (
        psi_a2
        - g1_cur / 2.0 - _LN2
        - np.log(q1.lambda1)
        - _log_sigmoid(-q1.c_r)
        - _log_cosh_half(q1.c_r)
        - (q1.c_r - q1.g1_r) / 2.0
        + 1.0
        + (q1.c_r**2 - eg2_cur) / 2.0 * e_omega_tilt
    )
    term_latent = float(np.mean(q1.rate_r * bracket))

    term_rate = float(-a2)
    term_rate_kl = float(-a2 * psi_a2 + a2 + gammaln(a2))

    resid = state.mu2s - state.mu0
    kinv_sigma = ks_factor.solve(state.sigma2s)
    try:
        # sigma2s is PSD by construction; jittered Cholesky handles the
        # near-singular case that defeats slogdet
        logdet_sigma = chol_jitter(state.sigma2s).log_det()
    except np.linalg.LinAlgError as err:
        raise FloatingPointError(
            "nonfinite term: q2(g_s) covariance logdet"
        ) from err
    term_gp_kl = -0.5 * float(
        np.trace(kinv_sigma)
        + resid @ ks_factor.solve(resid)
        - state.mu2s.size
        + ks_factor.log_det()
        - logdet_sigma
    )

    total = term_obs + term_latent + term_rate + term_rate_kl + term_gp_kl
    if not np.isfinite(total):
        for name, val in [("observations", term_obs),
                          ("latent process", term_latent),
                          ("rate mean", term_rate),
                          ("rate KL", term_rate_kl),
                          ("GP KL", term_gp_kl)]:
            if not np.isfinite(val):
                raise FloatingPointError(f"nonfinite term: {name}")
    return total


def _refresh_integ_points(base, noise, rng=None, count=None):
    """Integration points for a base measure, reusing frozen noise where
    the measure supports reparameterization."""
    if isinstance(base, StandardNormal):
        return noise.copy()
    if isinstance(base, DiagonalGaussian):
        return base.transform_noise(noise)
    if rng is None:
        raise ValueError("non-reparameterizable base needs an rng")
    return base.sample(rng, count if count is not None else noise.shape[0])


def _elbo_for_hyper(state: SparseVBState, data: Dataset, vec, n_k):
    """ELBO as a deterministic function of the hyperparameter vector.

    q2 is held fixed; q1 is re-derived from the candidate state, which
    by the envelope property leaves the gradient equal to the partial
    derivative of the bound."""
    kernel = KernelParams.from_vector(vec[:n_k])
    n_pi = state.base.get_params().size
    base = state.base.with_params(vec[n_k:n_k + n_pi])
    mu0 = float(vec[n_k + n_pi])
    cand = replace(state, kernel=kernel, base=base, mu0=mu0)
    if n_pi and state.integ_noise is not None:
        cand.integ_points = _refresh_integ_points(base, state.integ_noise)
    cache = DesignCache(cand, data)
    q1 = update_q1(cand, data, cache)
    return elbo(cand, q1, data, cache), cand


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def step(self, grad):
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def update_hyper(state: SparseVBState, data: Dataset, adam: AdamState,
                 fd_step=1e-4):
    """One Adam ascent step on (log theta_k, theta_pi, mu0).

    Gradients by central finite differences with integration noise held
    fixed. A step yielding a nonfinite ELBO is rejected and the learning
    rate halved. Returns the updated state."""
    n_k = state.kernel.as_vector().size
    vec = np.concatenate([
        state.kernel.as_vector(),
        state.base.get_params(),
        [state.mu0],
    ])
    if adam.lr == 0.0:
        return state
    grad = np.empty_like(vec)
    for i in range(vec.size):
        vp = vec.copy()
        vp[i] += fd_step
        up, _ = _elbo_for_hyper(state, data, vp, n_k)
        vm = vec.copy()
        vm[i] -= fd_step
        dn, _ = _elbo_for_hyper(state, data, vm, n_k)
        grad[i] = (up - dn) / (2.0 * fd_step)
    new_vec = vec + adam.step(grad)
    try:
        _, cand = _elbo_for_hyper(state, data, new_vec, n_k)
    except FloatingPointError:
        adam.lr *= 0.5
        return state
    return cand


def place_inducing(data: Dataset, base, n_inducing, rng):
    """Half base-measure draws, half k-means centroids of the data."""
    if n_inducing < 2:
        raise ValueError("need at least 2 inducing points")
    n_pi = n_inducing // 2
    k = n_inducing - n_pi
    from_pi = base.sample(rng, n_pi).reshape(n_pi, data.dim)
    if data.n < k:
        centroids = data.points.copy()
    else:
        seed = int(rng.integers(0, 2**31 - 1))
        centroids, _ = kmeans2(data.points, k, minit="++", seed=seed,
                               iter=50)
    centroids = np.unique(centroids, axis=0)
    short = k - centroids.shape[0]
    if short > 0:
        centroids = np.vstack([
            centroids, base.sample(rng, short).reshape(short, data.dim)
        ])
    return np.vstack([from_pi, centroids])


@dataclass
class VBResult:
    state: SparseVBState
    elbo_trace: list
    converged: bool
    iterations: int
    runtime_seconds: float


def run_vb(data: Dataset, config: VBConfig, kernel, mu0, base, rng,
           inducing=None) -> VBResult:
    """Coordinate-ascent VB loop (Alg.-style q1 -> lambda -> GP sweeps)."""
    if data.n < 1:
        raise ValueError("need at least one observation")
    t0 = time.perf_counter()
    if inducing is None:
        inducing = place_inducing(data, base, config.n_inducing, rng)
    noise = rng.standard_normal((config.n_integration, data.dim))
    integ = _refresh_integ_points(base, noise, rng=rng,
                                  count=config.n_integration)
    ks = gram_matrix(inducing, kernel)
    state = SparseVBState(
        inducing=inducing,
        mu2s=np.full(inducing.shape[0], float(mu0)),
        sigma2s=ks.copy(),
        alpha2=float(data.n + data.n / 2.0),
        kernel=kernel,
        mu0=float(mu0),
        base=base,
        integ_points=integ,
        integ_noise=noise,
    )
    adam = AdamState(lr=config.adam_lr, beta1=config.adam_beta1,
                     beta2=config.adam_beta2, eps=config.adam_eps)
    trace = []
    converged = False
    it = 0
    cache = DesignCache(state, data)
    for it in range(1, config.max_iters + 1):
        q1 = update_q1(state, data, cache)
        state.alpha2 = update_lambda(state, q1, data)
        state.mu2s, state.sigma2s = update_gp(state, q1, data, cache)
        if config.update_hyper and it % config.hyper_update_interval == 0:
            state = update_hyper(state, data, adam, fd_step=config.fd_step)
            cache = DesignCache(state, data)
        val = elbo(state, q1, data, cache)
        trace.append(val)
        if len(trace) > 1:
            denom = max(abs(trace[-2]), 1.0)
            if abs(trace[-1] - trace[-2]) < config.tol * denom:
                converged = True
                break
    return VBResult(state=state, elbo_trace=trace, converged=converged,
                    iterations=it, runtime_seconds=time.perf_counter() - t0)
