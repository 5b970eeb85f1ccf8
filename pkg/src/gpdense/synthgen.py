"""Exact sampling from the generative density model via lazy GP rejection."""

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .base_measure import Dataset
from .kernel_gp import NUGGET, KernelParams, chol_jitter, kernel_matrix
from .pg import sigmoid


class AcceptanceStallError(RuntimeError):
    """Rejection sampling exceeded the proposal budget."""


class LazyGP:
    """A GP prior realization evaluated lazily, one batch at a time.

    Values at queried locations are drawn from the conditional prior
    given everything drawn so far; repeated queries at an already
    visited location return the stored value. The Cholesky factor of
    the visited-set kernel matrix grows incrementally.
    """

    def __init__(self, kernel: KernelParams, mu0, x0=None, g0=None):
        self.kernel = kernel
        self.mu0 = float(mu0)
        self._jitter = NUGGET * kernel.amplitude
        dim = kernel.dim
        if x0 is None:
            self.x = np.empty((0, dim))
            self.g = np.empty(0)
            self._lower = np.empty((0, 0))
        else:
            self.x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
            self.g = np.asarray(g0, dtype=float).copy()
            k0 = kernel_matrix(self.x, self.x, kernel)
            k0[np.diag_indices_from(k0)] += self._jitter
            self._lower = chol_jitter(k0).lower

    @property
    def size(self):
        return self.x.shape[0]

    def _extend_chol(self, x_new):
        """Grow the lower factor by the rows for x_new; returns the
        conditional covariance factor block of the new points."""
        k_nn = kernel_matrix(x_new, x_new, self.kernel)
        k_nn[np.diag_indices_from(k_nn)] += self._jitter
        if self.size == 0:
            l22 = cholesky(k_nn, lower=True)
            self._lower = l22
            return np.zeros((x_new.shape[0], 0)), l22
        k_no = kernel_matrix(x_new, self.x, self.kernel)
        l21 = solve_triangular(self._lower, k_no.T, lower=True).T
        schur = k_nn - l21 @ l21.T
        schur = 0.5 * (schur + schur.T)
        try:
            l22 = cholesky(schur, lower=True)
        except np.linalg.LinAlgError:
            # the Schur complement can go indefinite at rounding-error
            # level; bump by the measured deficit to stay triangular
            deficit = max(0.0, -float(np.linalg.eigvalsh(schur).min()))
            bump = deficit + 1e-10 * max(1.0, self.kernel.amplitude)
            l22 = cholesky(schur + bump * np.eye(schur.shape[0]),
                           lower=True)
        m, n = l21.shape
        lower = np.zeros((n + m, n + m))
        lower[:n, :n] = self._lower
        lower[n:, :n] = l21
        lower[n:, n:] = l22
        self._lower = lower
        return l21, l22

    def eval_batch(self, x_query, rng):
        """Jointly draw g at the query locations, extending the state.

        Exact duplicates of visited locations reuse their stored values.
        """
        x_query = np.atleast_2d(np.asarray(x_query, dtype=float))
        out = np.empty(x_query.shape[0])
        fresh = []
        fresh_pos = []
        for i, row in enumerate(x_query):
            hit = -1
            if self.size:
                match = np.all(self.x == row, axis=1)
                if match.any():
                    hit = int(np.argmax(match))
            if hit >= 0:
                out[i] = self.g[hit]
            else:
                # duplicates within the batch also resolve to one draw
                dup = -1
                for j, prev in enumerate(fresh):
                    if np.array_equal(prev, row):
                        dup = j
                        break
                if dup >= 0:
                    fresh_pos[dup].append(i)
                else:
                    fresh.append(row)
                    fresh_pos.append([i])
        if fresh:
            x_new = np.asarray(fresh)
            n_old = self.size
            l21, l22 = self._extend_chol(x_new)
            if n_old:
                z_old = solve_triangular(
                    self._lower[:n_old, :n_old], self.g - self.mu0, lower=True
                )
                mean = self.mu0 + l21 @ z_old
            else:
                mean = np.full(x_new.shape[0], self.mu0)
            draw = mean + l22 @ rng.standard_normal(x_new.shape[0])
            self.x = np.vstack([self.x, x_new])
            self.g = np.concatenate([self.g, draw])
            for val, pos in zip(draw, fresh_pos):
                for i in pos:
                    out[i] = val
        return out

    def lazy_eval(self, x, rng):
        """Scalar convenience wrapper around :meth:`eval_batch`."""
        return float(self.eval_batch(np.atleast_2d(x), rng)[0])


def generate_dataset(kernel, mu0, base, n, rng, max_proposals=1_000_000,
                     collect_rejects=False):
    """Exact dataset draw from the GP density model by lazy rejection.

    Proposes x ~ pi and accepts with probability sigmoid(g(x)), where g
    is realized lazily from its GP prior. Returns (Dataset, LazyGP) or,
    with ``collect_rejects``, additionally the rejected proposals (with
    their g values) that occurred before the n-th acceptance.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    gp = LazyGP(kernel, mu0)
    accepted = []
    rej_x = []
    rej_g = []
    proposals = 0
    while len(accepted) < n:
        chunk = max(64, 2 * (n - len(accepted)))
        chunk = min(chunk, max_proposals - proposals)
        if chunk <= 0:
            raise AcceptanceStallError(
                f"no acceptance after {max_proposals} proposals; "
                "consider a larger GP mean"
            )
        cand = base.sample(rng, chunk)
        g = gp.eval_batch(cand, rng)
        u = rng.random(chunk)
        proposals += chunk
        for i in range(chunk):
            if u[i] < sigmoid(g[i]):
                accepted.append(cand[i])
                if len(accepted) == n:
                    break
            elif collect_rejects:
                rej_x.append(cand[i])
                rej_g.append(g[i])
    data = Dataset(points=np.asarray(accepted))
    if collect_rejects:
        rx = np.asarray(rej_x).reshape(len(rej_x), base.dim)
        return data, gp, rx, np.asarray(rej_g)
    return data, gp
