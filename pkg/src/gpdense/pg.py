"""Polya-Gamma PG(1, c) sampling and moments.

Exact draws from the (tilted) Polya-Gamma distribution with shape 1,
using an alternating-series rejection sampler. Also provides the
closed-form mean and the Gaussian-mixture representation of the
logistic sigmoid.
"""

import numpy as np
from scipy.special import ndtr

# Threshold splitting the proposal into a truncated inverse-Gaussian
# piece (x <= _TRUNC) and a truncated exponential piece (x > _TRUNC).
_TRUNC = 0.64


def pg_mean(b, c):
    """Mean of PG(b, c): b * tanh(c/2) / (2c), with the limit b/4 at c = 0.

    Parameters
    ----------
    b : int
        Shape parameter, b >= 1.
    c : float or ndarray
        Tilt parameter.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    c = np.asarray(c, dtype=float)
    small = np.abs(c) < 1e-8
    # Taylor expansion around c = 0 avoids 0/0.
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = b * np.tanh(c / 2.0) / (2.0 * c)
    taylor = b / 4.0 - b * c**2 / 48.0
    out = np.where(small, taylor, exact)
    if out.ndim == 0:
        return float(out)
    return out


def pg_var(b, c):
    """Variance of PG(b, c); closed form from the series representation."""
    c = np.asarray(c, dtype=float)
    small = np.abs(c) < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1.0 / np.cosh(c / 2.0) ** 2
        exact = b / (4.0 * c**3) * (np.sinh(c) - c) * s
    # Limit c -> 0 is b/24.
    out = np.where(small, b / 24.0, exact)
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid(z):
    """Numerically stable logistic function 1 / (1 + exp(-z))."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_mixture_integrand(omega, z):
    """exp(f(omega, z)) with f = z/2 - z^2 omega / 2 - ln 2.

    Averaging this over omega ~ PG(1, 0) recovers sigmoid(z).
    """
    omega = np.asarray(omega, dtype=float)
    return np.exp(z / 2.0 - z**2 * omega / 2.0 - np.log(2.0))


def _coef(n, x):
    """Alternating-series coefficient a_n(x), piecewise in x."""
    out = np.empty_like(x)
    small = x <= _TRUNC
    xs = x[small]
    out[small] = (
        np.pi * (n + 0.5) * (2.0 / (np.pi * xs)) ** 1.5
        * np.exp(-2.0 * (n + 0.5) ** 2 / xs)
    )
    xl = x[~small]
    out[~small] = np.pi * (n + 0.5) * np.exp(-((n + 0.5) ** 2) * np.pi**2 * xl / 2.0)
    return out


def _mass_texpon(z):
    """Probability of proposing from the exponential (x > _TRUNC) branch."""
    t = _TRUNC
    fz = np.pi**2 / 8.0 + z**2 / 2.0
    b = np.sqrt(1.0 / t) * (t * z - 1.0)
    a = -np.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    with np.errstate(divide="ignore", over="ignore"):
        xb = x0 - z + np.log(ndtr(b))
        xa = x0 + z + np.log(ndtr(a))
        qdivp = 4.0 / np.pi * (np.exp(xb) + np.exp(xa))
    return 1.0 / (1.0 + qdivp)


def _rtigauss(z, rng):
    """Inverse-Gaussian IG(1/z, 1) truncated to (0, _TRUNC], vectorized."""
    t = _TRUNC
    x = np.empty_like(z)
    small = z < 1.0 / t  # mean 1/z lies right of the truncation point

    pending = np.where(small)[0]
    while pending.size:
        m = pending.size
        zp = z[pending]
        e1 = rng.standard_exponential(m)
        e2 = rng.standard_exponential(m)
        ok = e1 * e1 <= 2.0 * e2 / t
        xi = t / (1.0 + t * e1) ** 2
        alpha = np.exp(-0.5 * zp * zp * xi)
        acc = ok & (rng.random(m) <= alpha)
        x[pending[acc]] = xi[acc]
        pending = pending[~acc]

    pending = np.where(~small)[0]
    while pending.size:
        m = pending.size
        mu = 1.0 / z[pending]
        y = rng.standard_normal(m) ** 2
        muy = mu * y
        xi = mu + 0.5 * mu * muy - 0.5 * mu * np.sqrt(4.0 * muy + muy * muy)
        flip = rng.random(m) > mu / (mu + xi)
        xi[flip] = mu[flip] ** 2 / xi[flip]
        acc = xi <= t
        x[pending[acc]] = xi[acc]
        pending = pending[~acc]
    return x


def _jstar_round(z, rng):
    """One proposal + alternating-series decision per lane.

    Returns the proposal values with NaN in rejected lanes. The series
    is truncated by the alternating-bound criterion, never a fixed count.
    """
    m = z.size
    k = np.pi**2 / 8.0 + z**2 / 2.0
    p_ratio = _mass_texpon(z)
    u = rng.random(m)
    x_exp = _TRUNC + rng.standard_exponential(m) / k
    x_ig = _rtigauss(z, rng)
    x = np.where(u < p_ratio, x_exp, x_ig)

    s = _coef(0, x)
    y = rng.random(m) * s
    accepted = np.zeros(m, dtype=bool)
    undecided = np.arange(m)
    n = 0
    while undecided.size:
        n += 1
        xu = x[undecided]
        an = _coef(n, xu)
        if n % 2 == 1:
            s[undecided] -= an
            done = y[undecided] <= s[undecided]
            accepted[undecided[done]] = True
        else:
            s[undecided] += an
            done = y[undecided] > s[undecided]
        undecided = undecided[~done]
    x[~accepted] = np.nan
    return x


def sample_pg1(c, rng, size=None):
    """Exact draw(s) from PG(1, c).

    Parameters
    ----------
    c : float or ndarray
        Tilt parameter(s); c and -c give the same distribution.
    rng : numpy.random.Generator
        Source of randomness; results are deterministic given its state.
    size : int, optional
        Number of draws when c is scalar. With array c, one draw per entry.

    Returns
    -------
    float or ndarray of positive reals.
    """
    c_arr = np.asarray(c, dtype=float)
    scalar = c_arr.ndim == 0 and size is None
    if size is not None:
        if c_arr.ndim != 0:
            raise ValueError("size only valid with scalar c")
        c_arr = np.full(size, float(c_arr))
    c_flat = np.atleast_1d(c_arr).ravel()
    if not np.all(np.isfinite(c_flat)):
        raise ValueError("c must be finite")
    z = np.abs(c_flat) / 2.0

    out = np.empty(z.size)
    pending = np.arange(z.size)
    while pending.size:
        x = _jstar_round(z[pending], rng)
        got = ~np.isnan(x)
        out[pending[got]] = x[got]
        pending = pending[~got]
    out *= 0.25  # PG(1, c) = J*(1, c/2) / 4
    if scalar:
        return float(out[0])
    return out.reshape(c_arr.shape)
