"""Predictive density evaluation and the expected test likelihood.

A posterior sample of the model induces an unnormalized density
sigmoid(g_s(x)) pi(x); the normalizer Z_s is estimated by importance
sampling with points drawn from the base measure, with a 1% relative
standard error guard.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .base_measure import Dataset
from .gibbs import GibbsChain
from .kernel_gp import (
    NUGGET,
    KernelParams,
    chol_jitter,
    conditional_prior,
    conditional_prior_diag,
    gram_matrix,
    kernel_matrix,
)
from .pg import sigmoid
from .variational import SparseVBState

_REL_STD_LIMIT = 0.01


class FlaggedEstimateError(RuntimeError):
    """Normalizer Monte-Carlo error exceeded the 1% guard."""


@dataclass
class DensityEstimate:
    eval_points: np.ndarray
    log_unnorm: np.ndarray     # (S, Q) log of sigmoid(g_s) pi_s at eval points
    log_z: np.ndarray          # (S,) log normalizers
    z_rel_std: np.ndarray      # (S,) MC relative standard errors of Z_s
    log_jacobian: float = 0.0  # per-point log |det| of a whitening transform

    @property
    def n_samples(self):
        return self.log_z.size

    @property
    def flagged(self):
        return bool(np.any(self.z_rel_std > _REL_STD_LIMIT))

    def log_densities(self):
        """(S, Q) matrix of per-sample normalized log densities."""
        return self.log_unnorm - self.log_z[:, None] + self.log_jacobian

    def mean_density(self):
        """Posterior-mean density at the eval points."""
        return np.mean(np.exp(self.log_densities()), axis=0)


def _normalizer_stats(sig_w):
    """log Z and relative standard error from per-point sigma * weight."""
    r = sig_w.size
    z = float(sig_w.mean())
    if z <= 0:
        return -np.inf, np.inf
    se = float(sig_w.std(ddof=1)) / np.sqrt(r)
    return np.log(z), se / z


def _gibbs_density_samples(chain: GibbsChain, eval_points, n_samples,
                           n_normalizer, rng):
    data = chain.data
    base0 = chain.base
    x_norm = base0.sample(rng, n_normalizer)  # shared across samples
    log_pi0_norm = base0.log_density(x_norm)

    total = len(chain.snapshots)
    if n_samples is None or n_samples >= total:
        idx = np.arange(total)
    else:
        idx = np.unique(np.linspace(0, total - 1, n_samples).astype(int))
    s_count = idx.size
    q = eval_points.shape[0]
    log_unnorm = np.empty((s_count, q))
    log_z = np.empty(s_count)
    rel_std = np.empty(s_count)
    for j, i in enumerate(idx):
        snap = chain.snapshots[i]
        kernel = KernelParams.from_vector(snap.kernel_vector)
        base = base0.with_params(snap.base_params)
        pts = np.vstack([data.points, snap.latent_locations])
        # joint draw at the evaluation points
        mean, cov = conditional_prior(snap.g_vals, pts, eval_points,
                                      kernel, snap.mu0)
        fac = chol_jitter(cov)
        g_eval = mean + fac.lower @ rng.standard_normal(q)
        log_unnorm[j] = (np.log(sigmoid(g_eval))
                         + base.log_density(eval_points))
        # independent marginal draws at the normalizer points
        m_n, v_n = conditional_prior_diag(snap.g_vals, pts, x_norm,
                                          kernel, snap.mu0)
        g_norm = m_n + np.sqrt(v_n) * rng.standard_normal(n_normalizer)
        log_w = base.log_density(x_norm) - log_pi0_norm
        sig_w = sigmoid(g_norm) * np.exp(log_w)
        log_z[j], rel_std[j] = _normalizer_stats(sig_w)
    return log_unnorm, log_z, rel_std


def _vb_density_samples(state: SparseVBState, eval_points, n_samples,
                        n_normalizer, rng):
    base = state.base
    x_norm = base.sample(rng, n_normalizer)
    s_count = 100 if n_samples is None else n_samples
    q = eval_points.shape[0]

    ksf = state.ks_factor()
    mu_fac = chol_jitter(state.sigma2s)
    # conditional-prior pieces given inducing values (fixed across draws)
    kqs = kernel_matrix(eval_points, state.inducing, state.kernel)
    a_eval = ksf.solve(kqs.T)              # (L, Q)
    kqq = gram_matrix(eval_points, state.kernel)
    cov_eval = kqq - kqs @ a_eval
    cov_fac = chol_jitter(0.5 * (cov_eval + cov_eval.T))
    kns = kernel_matrix(x_norm, state.inducing, state.kernel)
    a_norm = ksf.solve(kns.T)              # (L, R)
    var_norm = state.kernel.amplitude * (1.0 + NUGGET) - np.sum(
        kns * a_norm.T, axis=1
    )
    np.maximum(var_norm, 0.0, out=var_norm)

    log_pi_eval = base.log_density(eval_points)
    log_unnorm = np.empty((s_count, q))
    log_z = np.empty(s_count)
    rel_std = np.empty(s_count)
    for s in range(s_count):
        gs = state.mu2s + mu_fac.lower @ rng.standard_normal(state.mu2s.size)
        resid = gs - state.mu0
        g_eval = (state.mu0 + a_eval.T @ resid
                  + cov_fac.lower @ rng.standard_normal(q))
        log_unnorm[s] = np.log(sigmoid(g_eval)) + log_pi_eval
        m_n = state.mu0 + a_norm.T @ resid
        g_norm = m_n + np.sqrt(var_norm) * rng.standard_normal(n_normalizer)
        log_z[s], rel_std[s] = _normalizer_stats(sigmoid(g_norm))
    return log_unnorm, log_z, rel_std


def posterior_density_samples(model, eval_points, rng, n_samples=None,
                              n_normalizer=5000,
                              log_jacobian=0.0) -> DensityEstimate:
    """Per-posterior-sample unnormalized densities and normalizers.

    ``model`` is either a GibbsChain (snapshots extended to the query
    points through the GP conditional prior) or a SparseVBState
    (function draws from the sparse posterior). Normalizer points are
    shared across samples.
    """
    eval_points = np.atleast_2d(np.asarray(eval_points, dtype=float))
    if n_normalizer < 1:
        raise ValueError("need at least one normalizer point")
    if isinstance(model, GibbsChain):
        log_unnorm, log_z, rel_std = _gibbs_density_samples(
            model, eval_points, n_samples, n_normalizer, rng
        )
    elif isinstance(model, SparseVBState):
        log_unnorm, log_z, rel_std = _vb_density_samples(
            model, eval_points, n_samples, n_normalizer, rng
        )
    else:
        raise TypeError(f"unsupported model type: {type(model)!r}")
    return DensityEstimate(
        eval_points=eval_points, log_unnorm=log_unnorm, log_z=log_z,
        z_rel_std=rel_std, log_jacobian=log_jacobian,
    )


def per_sample_log_likelihoods(est: DensityEstimate):
    """(S,) vector of sum_n ln rho_s(x_n) over the eval points."""
    return est.log_densities().sum(axis=1)


def log_expected_test_likelihood(est: DensityEstimate):
    """ln E[prod_n rho(x_n)] over posterior samples (logsumexp form)."""
    if est.flagged:
        worst = float(est.z_rel_std.max())
        raise FlaggedEstimateError(
            f"normalizer relative std {worst:.2%} exceeds the 1% guard"
        )
    per = per_sample_log_likelihoods(est)
    return float(logsumexp(per) - np.log(est.n_samples))
