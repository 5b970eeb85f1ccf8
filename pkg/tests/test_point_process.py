"""Marked Poisson process simulation tests."""

import numpy as np
import pytest
from scipy import stats

from gpdense.base_measure import StandardNormal
from gpdense.pg import pg_mean, pg_var, sigmoid
from gpdense.point_process import (
    MarkedEventSet,
    sample_conditional_process,
    sample_prior_process,
)


def test_marked_event_set_validation():
    with pytest.raises(ValueError):
        MarkedEventSet(np.zeros((2, 1)), np.zeros(3))
    with pytest.raises(ValueError):
        MarkedEventSet(np.zeros((1, 1)), np.array([-1.0]))
    e = MarkedEventSet.empty(3)
    assert e.size == 0 and e.locations.shape == (0, 3)


def test_prior_process_count_and_marks():
    base = StandardNormal(1)
    rng = np.random.default_rng(10)
    lam = 30.0
    counts = []
    marks = []
    for _ in range(400):
        ev = sample_prior_process(lam, base, rng)
        counts.append(ev.size)
        marks.append(ev.marks)
    counts = np.asarray(counts, float)
    marks = np.concatenate(marks)
    assert abs(counts.mean() - lam) < 4 * np.sqrt(lam / 400)
    # PG(1, 0) marks have mean 1/4
    assert abs(marks.mean() - 0.25) < 4 * np.sqrt(pg_var(1, 0) / marks.size)


def test_prior_process_zero_rate():
    ev = sample_prior_process(0.0, StandardNormal(2),
                              np.random.default_rng(0))
    assert ev.size == 0
    with pytest.raises(ValueError):
        sample_prior_process(-1.0, StandardNormal(1),
                             np.random.default_rng(0))


@pytest.mark.parametrize("g0", [-1.0, 0.0, 1.0])
def test_conditional_process_thinning_and_marks(g0):
    """Kept count ~ Poisson(lam sigmoid(-g0)), marks ~ PG(1, g0)."""
    base = StandardNormal(1)
    rng = np.random.default_rng(11)
    lam = 50.0
    reps = 600
    counts = np.empty(reps)
    all_marks = []
    for r in range(reps):
        ev = sample_conditional_process(lambda x: np.full(len(x), g0),
                                        lam, base, rng)
        counts[r] = ev.size
        all_marks.append(ev.marks)
    marks = np.concatenate(all_marks)
    target = lam * sigmoid(-g0)
    assert abs(counts.mean() - target) < 4 * np.sqrt(target / reps)
    se = np.sqrt(pg_var(1, g0) / marks.size)
    assert abs(marks.mean() - pg_mean(1, g0)) < 4 * se


def test_conditional_process_location_thinning():
    """With g(x) = 4x the kept locations tilt left; KS against the
    analytic thinned density via its cdf computed by quadrature."""
    base = StandardNormal(1)
    rng = np.random.default_rng(12)
    kept = []
    for _ in range(300):
        ev = sample_conditional_process(lambda x: 4.0 * x[:, 0],
                                        40.0, base, rng)
        kept.append(ev.locations[:, 0])
    kept = np.concatenate(kept)
    grid = np.linspace(-8, 8, 4001)
    dens = sigmoid(-4.0 * grid) * stats.norm.pdf(grid)
    cdf_grid = np.cumsum(dens)
    cdf_grid /= cdf_grid[-1]
    ks = stats.kstest(kept, lambda q: np.interp(q, grid, cdf_grid))
    assert ks.pvalue > 1e-3


def test_conditional_process_return_g():
    base = StandardNormal(1)
    rng = np.random.default_rng(13)
    ev, g = sample_conditional_process(lambda x: x[:, 0], 20.0, base, rng,
                                       return_g=True)
    np.testing.assert_allclose(g, ev.locations[:, 0])


def test_conditional_process_single_batch_eval():
    calls = []

    def g_eval(x):
        calls.append(len(x))
        return np.zeros(len(x))

    sample_conditional_process(g_eval, 30.0, StandardNormal(1),
                               np.random.default_rng(14))
    assert len(calls) == 1
