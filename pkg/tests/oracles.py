"""Independent numerical oracles shared by the unit and acceptance tests.

Nothing here calls the compiled kernels: densities come from the dense
posterior kernel in ``gmcb.model`` or from closed forms, normalised by
quadrature.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats
from scipy.spatial.distance import cdist

from gmcb.model import log_posterior_kernel


def energy_pvalue(x, y, rng, n_perm=199):
    """Permutation p-value of the two-sample energy distance."""
    x = np.asarray(x, float).reshape(len(x), -1)
    y = np.asarray(y, float).reshape(len(y), -1)
    z = np.vstack([x, y])
    D = cdist(z, z)
    n = len(x)

    def stat(idx):
        a, b = idx[:n], idx[n:]
        return (2.0 * D[np.ix_(a, b)].mean() - D[np.ix_(a, a)].mean()
                - D[np.ix_(b, b)].mean())

    idx = np.arange(len(z))
    obs = stat(idx)
    hits = sum(stat(rng.permutation(idx)) >= obs for _ in range(n_perm))
    return (hits + 1) / (n_perm + 1)


class GridDensity:
    """Density known up to a constant, tabulated on a grid and normalised by
    quadrature; offers cdf, mean and inverse-cdf draws."""

    def __init__(self, logk, lo, hi, n=20001, log_spacing=False, points=None):
        if log_spacing:
            x = np.exp(np.linspace(math.log(lo), math.log(hi), n))
        else:
            x = np.linspace(lo, hi, n)
        if points is not None:
            x = np.unique(np.concatenate([x, np.asarray(points, float)]))
        lv = np.array([logk(v) for v in x])
        self.shift = np.max(lv[np.isfinite(lv)])
        f = np.exp(lv - self.shift)
        self.x = x
        c = integrate.cumulative_trapezoid(f, x, initial=0.0)
        self.norm = c[-1]
        self.F = c / c[-1]
        self.f = f / c[-1]
        self._logk = logk
        self.lo, self.hi = lo, hi

    def cdf(self, v):
        return np.interp(v, self.x, self.F, left=0.0, right=1.0)

    def mean(self):
        """Mean by adaptive quadrature (not the grid)."""
        f = (lambda v: math.exp(self._logk(v) - self.shift))
        pts = self.x[np.argsort(self.f)[-1:]]
        opts = dict(limit=500, epsabs=0.0, epsrel=1e-10, points=pts)
        z = integrate.quad(f, self.lo, self.hi, **opts)[0]
        m = integrate.quad(lambda v: v * f(v), self.lo, self.hi, **opts)[0]
        return m / z

    def rvs(self, size, rng):
        return np.interp(rng.random(size), self.F, self.x)

    def ks(self, sample):
        return stats.kstest(np.asarray(sample, float), self.cdf).pvalue


def coordinate_logk(state, data, hp, setter):
    """One-coordinate slice of the full posterior kernel."""
    def f(v):
        s = state.copy()
        setter(s, v)
        return log_posterior_kernel(s, data, hp)
    return f


def batch_se(x, n_batches=50):
    """Batch-means standard error of a scalar chain's mean."""
    x = np.asarray(x, float)
    b = len(x) // n_batches
    m = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(np.std(m, ddof=1) / math.sqrt(n_batches))


def ep_logdensity_ref(x, lam, alpha, g):
    """Exponential power log density written out independently."""
    return (math.log(alpha) + math.log(lam) / alpha - (1.0 / alpha + 1.0) * math.log(2.0)
            - math.log(g) / alpha - math.lgamma(1.0 / alpha) - lam / (2.0 * g) * abs(x) ** alpha)
