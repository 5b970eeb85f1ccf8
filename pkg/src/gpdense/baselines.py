"""KDE and GMM reference density estimators with cross-validation."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .base_measure import Dataset, GaussianMixtureMeasure, fit_gmm

_LOG2PI = np.log(2.0 * np.pi)


@dataclass
class KDEModel:
    """Gaussian product-kernel density estimate with a shared bandwidth."""

    bandwidth: float
    training_points: np.ndarray

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    def logpdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        train = self.training_points
        if x.shape[1] != train.shape[1]:
            raise ValueError("dimension mismatch")
        n, d = train.shape
        h = self.bandwidth
        sq = (
            np.sum(x**2, axis=1)[:, None]
            + np.sum(train**2, axis=1)[None, :]
            - 2.0 * x @ train.T
        )
        np.maximum(sq, 0.0, out=sq)
        log_k = -0.5 * sq / h**2 - d * np.log(h) - 0.5 * d * _LOG2PI
        return logsumexp(log_k, axis=1) - np.log(n)


@dataclass
class GMMModel:
    measure: GaussianMixtureMeasure
    n_components: int

    def logpdf(self, x):
        return np.atleast_1d(self.measure.log_density(x))


def default_bandwidth_grid(data: Dataset, size=20):
    """Log-spaced bandwidths in [0.05, 2] times the average data std."""
    scale = float(np.std(data.points, axis=0, ddof=1).mean())
    return np.geomspace(0.05 * scale, 2.0 * scale, size)


def _fold_indices(n, folds, rng):
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def fit_kde_cv(data: Dataset, bandwidth_grid=None, folds=10, rng=None):
    """Bandwidth by k-fold CV on held-out log likelihood."""
    if rng is None:
        rng = np.random.default_rng()
    if bandwidth_grid is None:
        bandwidth_grid = default_bandwidth_grid(data)
    bandwidth_grid = np.asarray(bandwidth_grid, dtype=float)
    if bandwidth_grid.size == 0:
        raise ValueError("empty bandwidth grid")
    if data.n < folds:
        raise ValueError("need at least as many points as folds")
    fold_idx = _fold_indices(data.n, folds, rng)
    scores = np.zeros(bandwidth_grid.size)
    for held in fold_idx:
        mask = np.ones(data.n, dtype=bool)
        mask[held] = False
        train = data.points[mask]
        test = data.points[held]
        for j, h in enumerate(bandwidth_grid):
            model = KDEModel(bandwidth=h, training_points=train)
            scores[j] += float(np.sum(model.logpdf(test)))
    best = int(np.argmax(scores))
    return KDEModel(bandwidth=float(bandwidth_grid[best]),
                    training_points=data.points.copy())


def fit_gmm_cv(data: Dataset, k_grid=None, folds=10, restarts=10, rng=None):
    """Component count by k-fold CV; final fit is best-of-restarts EM."""
    if rng is None:
        rng = np.random.default_rng()
    if k_grid is None:
        k_grid = range(1, 11)
    k_grid = [int(k) for k in k_grid]
    if data.n < folds:
        raise ValueError("need at least as many points as folds")
    fold_idx = _fold_indices(data.n, folds, rng)
    scores = {}
    for k in k_grid:
        total = 0.0
        ok = True
        for held in fold_idx:
            mask = np.ones(data.n, dtype=bool)
            mask[held] = False
            train = Dataset(points=data.points[mask])
            if train.n <= k:
                ok = False
                break
            gmm, _ = fit_gmm(train, k, restarts=max(1, restarts // 2),
                             rng=rng)
            total += float(np.sum(gmm.log_density(data.points[held])))
        if ok and np.isfinite(total):
            scores[k] = total
    if not scores:
        raise RuntimeError("all component counts degenerate under CV")
    best_k = max(scores, key=scores.get)
    gmm, _ = fit_gmm(data, best_k, restarts=restarts, rng=rng)
    return GMMModel(measure=gmm, n_components=best_k)
