"""Exact Gibbs sampler for the augmented GP density model.

Block updates: PG variables at observations, latent marked process,
Gamma rate scaling, joint GP values, and Metropolis-Hastings moves on
kernel / base-measure hyperparameters with an exact draw of the prior
mean. Also contains the forward / successive-conditional simulators
used for sampler validation.
"""

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base_measure import Dataset
from .kernel_gp import (
    CholeskyError,
    KernelParams,
    chol_jitter,
    conditional_prior,
    gram_matrix,
    sample_mvn,
)
from .pg import sample_pg1, sigmoid
from .point_process import MarkedEventSet, sample_conditional_process
from .synthgen import LazyGP, generate_dataset


@dataclass
class GibbsConfig:
    n_samples: int = 5000
    burn_in: int = 2000
    hyper_interval: int = 10
    mh_step: float = 0.1
    sample_hyper: bool = True
    memory_cap: int = 5000

    def __post_init__(self):
        if self.n_samples < 0 or self.burn_in < 0:
            raise ValueError("n_samples and burn_in must be nonnegative")
        if self.hyper_interval < 1:
            raise ValueError("hyper_interval must be >= 1")


@dataclass
class GibbsState:
    g_vals: np.ndarray          # g at observations then latent events
    omega_n: np.ndarray
    latent: MarkedEventSet
    lam: float
    kernel: KernelParams
    mu0: float
    base: object

    def support_points(self, data: Dataset):
        return np.vstack([data.points, self.latent.locations])


@dataclass
class GibbsSnapshot:
    """Everything needed to evaluate the predictive density later."""

    latent_locations: np.ndarray
    g_vals: np.ndarray
    lam: float
    kernel_vector: np.ndarray
    mu0: float
    base_params: np.ndarray


@dataclass
class GibbsChain:
    data: Dataset
    base: object
    snapshots: list
    config: GibbsConfig
    mh_accept_rate: float
    runtime_seconds: float
    final_mh_step: float = 0.0

    @property
    def n_samples(self):
        return len(self.snapshots)


def step_omega(state: GibbsState, data: Dataset, rng):
    """omega_n ~ PG(1, g(x_n)) independently per observation."""
    n = data.n
    if n == 0:
        return np.empty(0)
    return np.atleast_1d(sample_pg1(state.g_vals[:n], rng))


def step_latent(state: GibbsState, data: Dataset, rng):
    """Draw the latent marked process by thinning; g at candidate points
    is one joint draw from the GP conditional prior given current g."""
    n = data.n
    pts = state.support_points(data)

    def g_eval(candidates):
        mean, cov = conditional_prior(
            state.g_vals, pts, candidates, state.kernel, state.mu0
        )
        return sample_mvn(mean, cov, rng)

    latent, g_latent = sample_conditional_process(
        g_eval, state.lam, state.base, rng, return_g=True
    )
    g_vals = np.concatenate([state.g_vals[:n], g_latent])
    return latent, g_vals


def step_lambda(state: GibbsState, data: Dataset, rng):
    """lambda ~ Gamma(M + N, 1)."""
    shape = state.latent.size + data.n
    if shape == 0:
        raise ValueError("lambda conditional undefined for N + M = 0")
    return float(rng.gamma(shape, 1.0))


def step_gp(state: GibbsState, data: Dataset, rng):
    """Joint redraw of g at observations and latent events.

    Uses the symmetric form Sigma = K - K sqrt(D) B^-1 sqrt(D) K with
    B = I + sqrt(D) K sqrt(D), avoiding any inverse of D.
    """
    n = data.n
    pts = state.support_points(data)
    k = gram_matrix(pts, state.kernel)
    d = np.concatenate([state.omega_n, state.latent.marks])
    s = np.sqrt(d)
    u = np.concatenate([np.full(n, 0.5), np.full(state.latent.size, -0.5)])

    b = s[:, None] * k * s[None, :]
    b[np.diag_indices_from(b)] += 1.0
    bf = chol_jitter(b)
    ks = k * s[None, :]
    sigma = k - ks @ bf.solve(s[:, None] * k)
    sigma = 0.5 * (sigma + sigma.T)
    mean = sigma @ u + state.mu0 * (np.ones(len(pts)) - ks @ bf.solve(s))
    return sample_mvn(mean, sigma, rng)


def _hyper_log_target(g_vals, pts, kernel, mu0, base):
    """Conditional log-density of the hyperparameters (flat log priors)."""
    k = gram_matrix(pts, kernel)
    fac = chol_jitter(k)
    resid = g_vals - mu0
    quad = float(resid @ fac.solve(resid))
    gp_term = -0.5 * (quad + fac.log_det() + len(pts) * np.log(2.0 * np.pi))
    pi_term = float(np.sum(base.log_density(pts)))
    return gp_term + pi_term


def step_hyper(state: GibbsState, data: Dataset, rng, mh_step):
    """MH move on (log theta_k, theta_pi) and an exact mu0 draw.

    Returns (kernel, base, mu0, accepted_flag).
    """
    pts = state.support_points(data)
    theta_k = state.kernel.as_vector()
    theta_pi = state.base.get_params()
    vec = np.concatenate([theta_k, theta_pi])

    accepted = False
    kern_prop, base_prop = state.kernel, state.base
    if mh_step > 0:
        prop = vec + mh_step * rng.standard_normal(vec.size)
        kern_prop = KernelParams.from_vector(prop[: theta_k.size])
        base_prop = state.base.with_params(prop[theta_k.size:])
        logu = np.log(rng.random())
        try:
            cur = _hyper_log_target(state.g_vals, pts, state.kernel,
                                    state.mu0, state.base)
            new = _hyper_log_target(state.g_vals, pts, kern_prop,
                                    state.mu0, base_prop)
            if np.isfinite(new) and logu < new - cur:
                accepted = True
        except CholeskyError:
            accepted = False  # non-PD proposal auto-rejected
    kernel = kern_prop if accepted else state.kernel
    base = base_prop if accepted else state.base

    # mu0 from its Gaussian conditional under a flat prior
    k = gram_matrix(pts, kernel)
    fac = chol_jitter(k)
    ones = np.ones(len(pts))
    kinv1 = fac.solve(ones)
    denom = float(ones @ kinv1)
    mean = float(state.g_vals @ kinv1) / denom
    mu0 = mean + rng.standard_normal() / np.sqrt(denom)
    return kernel, base, mu0, accepted


def initial_state(data: Dataset, kernel, mu0, base, rng) -> GibbsState:
    """Neutral start: g = 0, lambda = N, prior latent process, PG(1,0)
    variables at the observations."""
    from .point_process import sample_prior_process

    lam = float(data.n)
    latent = sample_prior_process(lam, base, rng)
    g_vals = np.zeros(data.n + latent.size)
    omega_n = (np.atleast_1d(sample_pg1(0.0, rng, size=data.n))
               if data.n else np.empty(0))
    return GibbsState(g_vals=g_vals, omega_n=omega_n, latent=latent,
                      lam=lam, kernel=kernel, mu0=mu0, base=base)


def sweep(state: GibbsState, data: Dataset, rng):
    """One full Gibbs sweep (omega -> latent -> lambda -> g), in place."""
    state.omega_n = step_omega(state, data, rng)
    state.latent, state.g_vals = step_latent(state, data, rng)
    state.lam = step_lambda(state, data, rng)
    state.g_vals = step_gp(state, data, rng)
    return state


def run_chain(data: Dataset, config: GibbsConfig, kernel, mu0, base, rng,
              init: Optional[GibbsState] = None) -> GibbsChain:
    """Run the Gibbs sampler and collect post-burn-in snapshots."""
    if data.n < 1:
        raise ValueError("need at least one observation")
    t0 = time.perf_counter()
    state = init if init is not None else initial_state(
        data, kernel, mu0, base, rng
    )
    total = config.burn_in + config.n_samples
    mh_step = config.mh_step
    hyper_tries = 0
    hyper_accepts = 0
    snapshots = []
    keep_every = max(1, int(np.ceil(config.n_samples / config.memory_cap))) \
        if config.memory_cap else 1
    for it in range(total):
        sweep(state, data, rng)
        if config.sample_hyper and (it + 1) % config.hyper_interval == 0:
            kernel_new, base_new, mu0_new, acc = step_hyper(
                state, data, rng, mh_step
            )
            state.kernel, state.base, state.mu0 = kernel_new, base_new, mu0_new
            hyper_tries += 1
            hyper_accepts += int(acc)
            if it < config.burn_in:
                # step-size adaptation restricted to burn-in
                mh_step *= 1.05 if acc else 0.975
        if it >= config.burn_in and (it - config.burn_in) % keep_every == 0:
            snapshots.append(GibbsSnapshot(
                latent_locations=state.latent.locations.copy(),
                g_vals=state.g_vals.copy(),
                lam=state.lam,
                kernel_vector=state.kernel.as_vector(),
                mu0=state.mu0,
                base_params=np.asarray(state.base.get_params(), float).copy(),
            ))
    rate = hyper_accepts / hyper_tries if hyper_tries else 0.0
    return GibbsChain(
        data=data, base=state.base, snapshots=snapshots, config=config,
        mh_accept_rate=rate, runtime_seconds=time.perf_counter() - t0,
        final_mh_step=mh_step,
    )


# ---------------------------------------------------------------------------
# Sampler validation: forward vs successive-conditional simulation
# ---------------------------------------------------------------------------

def forward_joint_sample(kernel, mu0, base, n, rng):
    """One exact draw of (data, g, latent process, lambda, omega_N).

    Uses the fact that the rejected proposals of the exact generative
    rejection sampler are distributed as the latent event locations, so
    the joint over all augmented variables can be sampled directly.
    Returns (state, data).
    """
    data, gp, rej_x, rej_g = generate_dataset(
        kernel, mu0, base, n, rng, collect_rejects=True
    )
    g_obs = gp.eval_batch(data.points, rng)  # stored values, no new draws
    marks = (np.atleast_1d(sample_pg1(rej_g, rng))
             if rej_g.size else np.empty(0))
    latent = (MarkedEventSet(rej_x, marks) if rej_x.size
              else MarkedEventSet.empty(base.dim))
    lam = float(rng.gamma(n + latent.size, 1.0))
    omega_n = np.atleast_1d(sample_pg1(g_obs, rng))
    g_vals = np.concatenate([g_obs, rej_g])
    state = GibbsState(g_vals=g_vals, omega_n=omega_n, latent=latent,
                       lam=lam, kernel=kernel, mu0=mu0, base=base)
    return state, data


def _redraw_data(state: GibbsState, data: Dataset, rng, max_proposals=200000):
    """Re-draw the observations from rho(.|g) given the current state."""
    n = data.n
    pts = state.support_points(data)
    gp = LazyGP(state.kernel, state.mu0, x0=pts, g0=state.g_vals)
    new_x = []
    new_g = []
    proposals = 0
    while len(new_x) < n:
        chunk = min(max(32, 2 * (n - len(new_x))), max_proposals - proposals)
        if chunk <= 0:
            raise RuntimeError("data redraw stalled")
        cand = state.base.sample(rng, chunk)
        g = gp.eval_batch(cand, rng)
        u = rng.random(chunk)
        proposals += chunk
        for i in range(chunk):
            if u[i] < sigmoid(g[i]):
                new_x.append(cand[i])
                new_g.append(g[i])
                if len(new_x) == n:
                    break
    new_data = Dataset(points=np.asarray(new_x))
    g_obs = np.asarray(new_g)
    state.g_vals = np.concatenate([g_obs, state.g_vals[n:]])
    state.omega_n = np.atleast_1d(sample_pg1(g_obs, rng))
    return new_data


def successive_conditional_stats(kernel, mu0, base, n, rounds, rng):
    """Geweke-style successive-conditional chain with fixed hypers.

    Each round applies the full Gibbs transition to the latents given
    the data and then re-draws the data given the latents. Returns an
    array of (mean g at observations, lambda, M) per round.
    """
    state, data = forward_joint_sample(kernel, mu0, base, n, rng)
    stats = np.empty((rounds, 3))
    for r in range(rounds):
        sweep(state, data, rng)
        data = _redraw_data(state, data, rng)
        stats[r] = (state.g_vals[:n].mean(), state.lam, state.latent.size)
    return stats


def forward_stats(kernel, mu0, base, n, rounds, rng):
    """Independent forward draws of the same summary statistics."""
    stats = np.empty((rounds, 3))
    for r in range(rounds):
        state, data = forward_joint_sample(kernel, mu0, base, n, rng)
        stats[r] = (state.g_vals[:n].mean(), state.lam, state.latent.size)
    return stats
