"""Base probability measures pi(x) and dataset handling.

A base measure must be evaluatable (log density) and samplable. Three
variants are provided: standard normal, diagonal Gaussian with free
location/scale parameters, and a full-covariance Gaussian mixture that
can be EM-fitted to data and then frozen.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

_LOG2PI = np.log(2.0 * np.pi)


class DimensionMismatchError(ValueError):
    pass


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != dim:
        raise DimensionMismatchError(
            f"expected points of dimension {dim}, got {x.shape[1]}"
        )
    return x, single


class StandardNormal:
    """Standard normal base measure on R^d. No free parameters."""

    def __init__(self, dim):
        self.dim = int(dim)

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        out = -0.5 * np.sum(x**2, axis=1) - 0.5 * self.dim * _LOG2PI
        return float(out[0]) if single else out

    def sample(self, rng, n=None):
        m = 1 if n is None else n
        draws = rng.standard_normal((m, self.dim))
        return draws[0] if n is None else draws

    # No free parameters: theta_pi is empty.
    def get_params(self):
        return np.empty(0)

    def with_params(self, params):
        if len(params) != 0:
            raise ValueError("StandardNormal has no free parameters")
        return self


class DiagonalGaussian:
    """Diagonal Gaussian with parameters theta_pi = (mean, log-scales)."""

    def __init__(self, mean, scales):
        self.mean = np.asarray(mean, dtype=float)
        self.scales = np.asarray(scales, dtype=float)
        if self.mean.shape != self.scales.shape or self.mean.ndim != 1:
            raise ValueError("mean and scales must be 1-d arrays of equal length")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        self.dim = self.mean.size

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        z = (x - self.mean) / self.scales
        out = (
            -0.5 * np.sum(z**2, axis=1)
            - np.sum(np.log(self.scales))
            - 0.5 * self.dim * _LOG2PI
        )
        return float(out[0]) if single else out

    def sample(self, rng, n=None):
        m = 1 if n is None else n
        draws = self.mean + self.scales * rng.standard_normal((m, self.dim))
        return draws[0] if n is None else draws

    def transform_noise(self, xi):
        """Reparameterized draw from frozen standard-normal noise xi."""
        return self.mean + self.scales * xi

    def get_params(self):
        return np.concatenate([self.mean, np.log(self.scales)])

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        d = self.dim
        if params.size != 2 * d:
            raise ValueError("parameter vector has wrong length")
        return DiagonalGaussian(params[:d], np.exp(params[d:]))


class GaussianMixtureMeasure:
    """Full-covariance Gaussian mixture. Frozen during GP inference."""

    def __init__(self, weights, means, covariances):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covariances = np.asarray(covariances, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        self.n_components = self.weights.size
        self.dim = self.means.shape[1]
        self._chols = np.linalg.cholesky(self.covariances)
        self._logdets = 2.0 * np.sum(
            np.log(np.diagonal(self._chols, axis1=1, axis2=2)), axis=1
        )

    def _component_logpdf(self, x):
        # x: (n, d); returns (n, K)
        n = x.shape[0]
        out = np.empty((n, self.n_components))
        for k in range(self.n_components):
            diff = (x - self.means[k]).T
            z = solve_triangular(self._chols[k], diff, lower=True)
            out[:, k] = -0.5 * np.sum(z**2, axis=0) - 0.5 * (
                self._logdets[k] + self.dim * _LOG2PI
            )
        return out

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        comp = self._component_logpdf(x)
        with np.errstate(divide="ignore"):
            out = logsumexp(comp + np.log(self.weights)[None, :], axis=1)
        return float(out[0]) if single else out

    def sample(self, rng, n=None):
        m = 1 if n is None else n
        ks = rng.choice(self.n_components, size=m, p=self.weights)
        eps = rng.standard_normal((m, self.dim))
        draws = self.means[ks] + np.einsum("nij,nj->ni", self._chols[ks], eps)
        return draws[0] if n is None else draws

    def get_params(self):
        return np.empty(0)  # frozen during inference

    def with_params(self, params):
        if len(params) != 0:
            raise ValueError("GaussianMixtureMeasure parameters are frozen")
        return self


@dataclass
class Whitening:
    """Affine transform x -> transform @ (x - mean) and its inverse."""

    mean: np.ndarray
    transform: np.ndarray
    inverse: np.ndarray

    @property
    def log_det(self):
        sign, ld = np.linalg.slogdet(self.transform)
        return float(ld)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        return (x - self.mean) @ self.transform.T

    def invert(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.inverse.T + self.mean


@dataclass
class Dataset:
    """N points in R^d plus optional whitening metadata."""

    points: np.ndarray
    whitening: Optional[Whitening] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be an N x d matrix")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain NaN or Inf")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def whiten(data: Dataset) -> Dataset:
    """Zero-mean, identity-sample-covariance transform of the data.

    Uses the symmetric inverse square root of the (ddof=1) sample
    covariance. Raises on singular covariance, naming the offending
    dimension.
    """
    x = data.points
    if x.shape[0] < 2:
        raise ValueError("whitening needs at least 2 points")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(data.dim, data.dim)
    evals, evecs = np.linalg.eigh(cov)
    floor = 1e-12 * max(evals.max(), 1.0)
    if np.any(evals <= floor):
        bad = int(np.argmax(np.abs(evecs[:, np.argmin(evals)])))
        raise ValueError(
            f"sample covariance is singular (dimension {bad} is degenerate)"
        )
    transform = evecs @ np.diag(evals**-0.5) @ evecs.T
    inverse = evecs @ np.diag(evals**0.5) @ evecs.T
    w = Whitening(mean=mean, transform=transform, inverse=inverse)
    return Dataset(points=w.apply(x), whitening=w)


@dataclass
class GMMFitDiagnostics:
    log_likelihoods: list = field(default_factory=list)  # best restart trace
    regularized: bool = False
    best_restart: int = 0


def _em_once(x, k, rng, max_iters, tol, cov_floor):
    n, d = x.shape
    # k-means++-style seeding of means from data points
    idx = rng.choice(n, size=k, replace=False)
    means = x[idx].copy()
    covs = np.tile(np.cov(x, rowvar=False, ddof=1).reshape(d, d), (k, 1, 1))
    covs += cov_floor * np.eye(d)
    weights = np.full(k, 1.0 / k)
    gmm = GaussianMixtureMeasure(weights, means, covs)
    trace = []
    regularized = False
    prev = -np.inf
    for _ in range(max_iters):
        comp = gmm._component_logpdf(x) + np.log(gmm.weights)[None, :]
        norm = logsumexp(comp, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        resp = np.exp(comp - norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        covs = np.empty((k, d, d))
        for j in range(k):
            diff = x - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
            ev = np.linalg.eigvalsh(covs[j])
            if ev.min() < cov_floor:
                covs[j] += (cov_floor - min(ev.min(), 0.0)) * np.eye(d)
                regularized = True
        weights = weights / weights.sum()
        gmm = GaussianMixtureMeasure(weights, means, covs)
        if ll - prev < tol * max(abs(ll), 1.0) and len(trace) > 1:
            break
        prev = ll
    return gmm, trace, regularized


def fit_gmm(data: Dataset, components, restarts=10, rng=None,
            max_iters=200, tol=1e-8):
    """EM fit of a full-covariance GMM; best log-likelihood over restarts.

    Returns (GaussianMixtureMeasure, GMMFitDiagnostics). The per-step
    log-likelihood trace of the winning restart is nondecreasing.
    """
    if rng is None:
        rng = np.random.default_rng()
    x = data.points
    k = int(components)
    if k < 1:
        raise ValueError("components must be >= 1")
    if data.n <= k:
        raise ValueError("need more points than components")
    cov_floor = 1e-6 * float(np.var(x, axis=0).mean())
    cov_floor = max(cov_floor, 1e-12)
    best = None
    diag = GMMFitDiagnostics()
    for r in range(max(1, restarts)):
        gmm, trace, reg = _em_once(x, k, rng, max_iters, tol, cov_floor)
        if best is None or trace[-1] > best[1][-1]:
            best = (gmm, trace, reg)
            diag.best_restart = r
    gmm, trace, reg = best
    diag.log_likelihoods = trace
    diag.regularized = reg
    return gmm, diag


def make_base_measure(kind, dim, mean=None, scales=None, **kwargs):
    """Factory used by the CLI config layer."""
    if kind == "standard_normal":
        return StandardNormal(dim)
    if kind == "diagonal_gaussian":
        mean = np.zeros(dim) if mean is None else np.asarray(mean, float)
        scales = np.ones(dim) if scales is None else np.asarray(scales, float)
        return DiagonalGaussian(mean, scales)
    raise ValueError(f"unknown base measure kind: {kind}")
