"""Latent marked Poisson process: prior simulation and thinning."""

from dataclasses import dataclass

import numpy as np

from .pg import sample_pg1, sigmoid


@dataclass
class MarkedEventSet:
    """Event locations (M x d) with positive Polya-Gamma marks (M)."""

    locations: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.marks = np.asarray(self.marks, dtype=float)
        if self.locations.ndim != 2:
            raise ValueError("locations must be an M x d matrix")
        if self.marks.shape != (self.locations.shape[0],):
            raise ValueError("marks must align with locations")
        if np.any(self.marks <= 0):
            raise ValueError("marks must be positive")

    @property
    def size(self):
        return self.locations.shape[0]

    @classmethod
    def empty(cls, dim):
        return cls(np.empty((0, dim)), np.empty(0))


def sample_prior_process(lam, base, rng) -> MarkedEventSet:
    """Marked Poisson process with rate lam * pi(x) and PG(1, 0) marks."""
    if lam < 0:
        raise ValueError("rate must be nonnegative")
    m = rng.poisson(lam)
    if m == 0:
        return MarkedEventSet.empty(base.dim)
    locations = base.sample(rng, m)
    marks = sample_pg1(0.0, rng, size=m)
    return MarkedEventSet(locations, marks)


def sample_conditional_process(g_eval, lam, base, rng, return_g=False):
    """Exact draw from the conditional latent process by thinning.

    Candidates come from a Poisson(lam) count of base-measure draws;
    each is kept with probability sigmoid(-g) and receives a PG(1, g)
    mark. ``g_eval`` maps an (m, d) array of candidate locations to the
    m values of g, and is called exactly once with the full batch.

    With ``return_g`` the g values at the kept events are returned too.
    """
    if lam < 0:
        raise ValueError("rate must be nonnegative")
    m_max = rng.poisson(lam)
    if m_max == 0:
        events = MarkedEventSet.empty(base.dim)
        return (events, np.empty(0)) if return_g else events
    candidates = base.sample(rng, m_max)
    g = np.asarray(g_eval(candidates), dtype=float)
    keep = rng.random(m_max) < sigmoid(-g)
    if not np.any(keep):
        events = MarkedEventSet.empty(base.dim)
        return (events, np.empty(0)) if return_g else events
    kept = candidates[keep]
    marks = np.atleast_1d(sample_pg1(g[keep], rng))
    events = MarkedEventSet(kept, marks)
    return (events, g[keep]) if return_g else events
