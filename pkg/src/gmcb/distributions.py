"""Random variate generators and densities shared by both samplers.

The exponentially tilted positive stable generator follows Devroye's
double-rejection construction (ACM TOMACS 19(4), 2009) for tilts with
``tilt**stability >= 1``; smaller tilts are drawn by rejection from the
untilted law (Kanter's representation), whose expected number of trials is
``exp(tilt**stability) < e``.  Both routes are exact.

Throughout, the positive stable law with index ``a`` is normalised so that
``E exp(-t W) = exp(-t**a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from scipy.special import gammaln

from . import _kernels as _k
from .errors import (
    NotPositiveDefiniteError,
    ParameterDomainError,
    SamplerError,
    SingularSystemError,
)

__all__ = [
    "TiltedStableParams",
    "GaussianByPrecision",
    "StructuredGaussianSpec",
    "sample_tilted_stable",
    "tilted_stable_rvs",
    "sample_gaussian_by_precision",
    "draw_by_precision",
    "sample_gaussian_structured",
    "cholesky_lower",
    "exp_power_logdensity",
    "exp_power_rvs",
    "sample_two_component_gamma",
    "two_gamma_log_weights",
]

MAX_REJECTION_ROUNDS = _k.MAX_ROUNDS
SYMMETRY_RTOL = 1e-10



# ---------------------------------------------------------------------------
# exponentially tilted positive stable
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltedStableParams:
    """Index ``stability`` in (0, 1) and exponential tilting rate ``tilt``."""

    stability: float
    tilt: float

    def __post_init__(self):
        if not (0.0 < self.stability < 1.0):
            raise ParameterDomainError(
                f"stability must lie in (0, 1), got {self.stability!r}")
        if not (self.tilt >= 0.0 and math.isfinite(self.tilt)):
            raise ParameterDomainError(
                f"tilt must be finite and nonnegative, got {self.tilt!r}")


def sample_tilted_stable(params: TiltedStableParams, rng: np.random.Generator,
                         size=None):
    """Draw from the density proportional to ``exp(-tilt*w) p_stability(w)``."""
    shape = () if size is None else size
    a = np.full(shape, params.stability, dtype=float)
    lam = np.full(shape, params.tilt, dtype=float)
    out = tilted_stable_rvs(a, lam, rng)
    return float(out) if size is None else out


def tilted_stable_rvs(stability, tilt, rng: np.random.Generator) -> np.ndarray:
    """Vectorised tilted positive stable draws.

    ``stability`` and ``tilt`` broadcast against each other; one independent
    draw is returned per element.
    """
    a, lam = np.broadcast_arrays(np.asarray(stability, dtype=float),
                                 np.asarray(tilt, dtype=float))
    shape = a.shape
    a = np.ascontiguousarray(a.ravel())
    lam = np.ascontiguousarray(lam.ravel())
    if a.size and (np.any(a <= 0.0) or np.any(a >= 1.0)):
        raise ParameterDomainError("stability must lie in (0, 1)")
    if lam.size and (np.any(lam < 0.0) or not np.all(np.isfinite(lam))):
        raise ParameterDomainError("tilt must be finite and nonnegative")
    out = np.empty(a.size)
    _k.ts_fill(a, lam, out, rng)
    if np.any(out < 0.0):
        raise SamplerError("tilted stable rejection exceeded iteration cap")
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# multivariate normal draws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianByPrecision:
    """Target with density kernel ``exp(-x'Qx/2 + h'x)``."""

    shift: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.shift, dtype=float).reshape(-1)
        Q = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if Q.shape != (h.size, h.size):
            raise ParameterDomainError(
                f"precision shape {Q.shape} does not match shift length {h.size}")
        scale = max(np.max(np.abs(Q)), np.finfo(float).tiny) if Q.size else 1.0
        if Q.size and np.max(np.abs(Q - Q.T)) > SYMMETRY_RTOL * scale:
            raise ParameterDomainError("precision matrix is not symmetric")
        object.__setattr__(self, "shift", h)
        object.__setattr__(self, "precision", 0.5 * (Q + Q.T))


def cholesky_lower(Q: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefiniteError`."""
    c, info = lapack.dpotrf(Q, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (leading minor {info})", pivot=int(info))
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def draw_by_precision(Q: np.ndarray, h: np.ndarray, rng: np.random.Generator,
                      z: np.ndarray | None = None) -> np.ndarray:
    """x ~ N(Q^{-1}h, Q^{-1}) for an already-symmetric Q (no validation)."""
    L = cholesky_lower(Q)
    mean, info = lapack.dpotrs(L, h, lower=1)
    if z is None:
        z = rng.standard_normal(h.shape[0])
    dev, info = lapack.dtrtrs(L, z, lower=1, trans=1)
    return mean + dev


def sample_gaussian_by_precision(spec: GaussianByPrecision,
                                 rng: np.random.Generator) -> np.ndarray:
    """One draw using a single Cholesky factorisation of the precision."""
    if spec.shift.size == 0:
        return np.empty(0)
    return draw_by_precision(spec.precision, spec.shift, rng)


@dataclass(frozen=True)
class StructuredGaussianSpec:
    """Target ``N(Q^{-1} Phi' alpha, Q^{-1})`` with ``Q = Phi'Phi + A^{-1}``.

    ``rhs`` is the length-N vector ``alpha``.  The prior covariance ``A`` is
    given either as a diagonal (``prior_cov_diag``) or through a square
    factor ``prior_cov_factor`` with ``A = K K'``.  The (N, m) data
    component is given either as ``design`` (``Phi``) or, when the product
    has a cheaper closed form, directly as ``design_factor = Phi K``.
    """

    rhs: np.ndarray
    design: np.ndarray | None = None
    prior_cov_diag: np.ndarray | None = None
    prior_cov_factor: np.ndarray | None = None
    design_factor: np.ndarray | None = None

    def __post_init__(self):
        alpha = np.asarray(self.rhs, dtype=float).reshape(-1)
        if (self.prior_cov_diag is None) == (self.prior_cov_factor is None):
            raise ParameterDomainError(
                "give exactly one of prior_cov_diag or prior_cov_factor")
        if (self.design is None) == (self.design_factor is None):
            raise ParameterDomainError("give exactly one of design or design_factor")
        if self.prior_cov_diag is not None:
            d = np.asarray(self.prior_cov_diag, dtype=float).reshape(-1)
            if np.any(~(d > 0.0)) or not np.all(np.isfinite(d)):
                raise ParameterDomainError("prior covariance diagonal must be positive")
            object.__setattr__(self, "prior_cov_diag", d)
            m = d.size
        else:
            K = np.atleast_2d(np.asarray(self.prior_cov_factor, dtype=float))
            if K.shape[0] != K.shape[1]:
                raise ParameterDomainError("prior covariance factor must be square")
            object.__setattr__(self, "prior_cov_factor", K)
            m = K.shape[0]
        if self.design is not None:
            Phi = np.asarray(self.design, dtype=float)
            if Phi.size != alpha.size * m:
                raise ParameterDomainError(f"design must be {alpha.size} x {m}")
            Phi = Phi.reshape(alpha.size, m)
            if self.prior_cov_diag is not None:
                PK = Phi * np.sqrt(self.prior_cov_diag)
            else:
                PK = Phi @ self.prior_cov_factor
            object.__setattr__(self, "design", Phi)
        else:
            PK = np.asarray(self.design_factor, dtype=float)
            if PK.size != alpha.size * m:
                raise ParameterDomainError("design_factor columns must match the prior dimension")
            PK = PK.reshape(alpha.size, m)
        object.__setattr__(self, "design_factor", PK)
        object.__setattr__(self, "rhs", alpha)

    @property
    def dim(self) -> int:
        return self.design_factor.shape[1]

    def factor_times(self, v: np.ndarray) -> np.ndarray:
        if self.prior_cov_diag is not None:
            return np.sqrt(self.prior_cov_diag) * v
        return self.prior_cov_factor @ v

    def prior_cov(self) -> np.ndarray:
        if self.prior_cov_diag is not None:
            return np.diag(self.prior_cov_diag)
        return self.prior_cov_factor @ self.prior_cov_factor.T


def sample_gaussian_structured(spec: StructuredGaussianSpec,
                               rng: np.random.Generator) -> np.ndarray:
    """Draw without forming the m x m precision; cost O(N^2 m + N^3).

    1. u ~ N(0, A), e ~ N(0, I_N)
    2. v = Phi u + e
    3. solve (Phi A Phi' + I) w = alpha - v
    4. return u + A Phi' w
    """
    PK, alpha = spec.design_factor, spec.rhs
    N, m = PK.shape
    z = rng.standard_normal(m)
    u = spec.factor_times(z)
    if N == 0:
        return u
    e = rng.standard_normal(N)
    v = PK @ z + e
    M = PK @ PK.T
    M[np.diag_indices(N)] += 1.0
    M = 0.5 * (M + M.T)
    c, info = lapack.dpotrf(M, lower=1, clean=1)
    if info != 0:
        raise SingularSystemError(f"structured Gaussian solve failed (info={info})")
    w, info = lapack.dpotrs(c, alpha - v, lower=1)
    if info != 0 or not np.all(np.isfinite(w)):
        raise SingularSystemError("structured Gaussian solve produced non-finite values")
    return u + spec.factor_times(PK.T @ w)


# ---------------------------------------------------------------------------
# exponential power and gamma mixtures
# ---------------------------------------------------------------------------


def exp_power_logdensity(x, scale, shape, noise):
    """Log density ``a s^(1/a) / (2^(1/a+1) g^(1/a) Gamma(1/a)) exp(-s|x|^a/(2g))``.

    ``scale`` is the regularisation ``s`` (lambda), ``shape`` the penalty
    exponent ``a``, ``noise`` the variance-like ``g`` (gamma).
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(scale, dtype=float)
    a = np.asarray(shape, dtype=float)
    g = np.asarray(noise, dtype=float)
    if np.any(lam <= 0) or np.any(a <= 0) or np.any(g <= 0):
        raise ParameterDomainError("scale, shape and noise must be positive")
    inv = 1.0 / a
    out = (np.log(a) + inv * np.log(lam) - (inv + 1.0) * math.log(2.0)
           - inv * np.log(g) - gammaln(inv) - lam / (2.0 * g) * np.abs(x) ** a)
    return out[()] if out.ndim == 0 else out


def exp_power_rvs(scale, shape, noise, rng: np.random.Generator, size=None):
    """Exact draws from the exponential power law of :func:`exp_power_logdensity`.

    Uses ``|x|^a ~ Gamma(1/a, rate=s/(2g))`` with an independent random sign.
    """
    lam, a, g = np.broadcast_arrays(np.asarray(scale, float), np.asarray(shape, float),
                                    np.asarray(noise, float))
    if size is None:
        size = lam.shape
    G = rng.gamma(1.0 / a, 1.0, size=size)
    mag = (G * 2.0 * g / lam) ** (1.0 / a)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def two_gamma_log_weights(shape1, rate1, shape2, rate2, extra_shape, load):
    """Log mixture weights of the regularisation-parameter conditionals.

    For prior components ``Gamma(shape_c, rate_c)`` combined with a
    likelihood factor ``x^extra_shape exp(-x*load)`` the posterior is a
    two-component gamma mixture with these (unnormalised) log weights.
    """
    out = []
    for e, f in ((shape1, rate1), (shape2, rate2)):
        e = np.asarray(e, float)
        f = np.asarray(f, float)
        post_shape = e + extra_shape
        out.append(e * np.log(f) - gammaln(e) + gammaln(post_shape)
                   - post_shape * np.log(f + load))
    return out[0], out[1]


def sample_two_component_gamma(logw1, shape1, rate1, logw2, shape2, rate2,
                               rng: np.random.Generator):
    """Mixture of ``Gamma(shape1, rate1)`` and ``Gamma(shape2, rate2)``.

    Component 1 is chosen with probability ``w1/(w1+w2)`` computed from the
    log weights by log-sum-exp; all arguments broadcast.
    """
    logw1, shape1, rate1, logw2, shape2, rate2 = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (logw1, shape1, rate1, logw2, shape2, rate2)))
    with np.errstate(invalid="ignore"):
        p1 = np.exp(logw1 - np.logaddexp(logw1, logw2))
    p1 = np.where(np.isnan(p1), np.where(logw1 >= logw2, 1.0, 0.0), p1)
    pick1 = rng.random(p1.shape) < p1
    shape = np.where(pick1, shape1, shape2)
    rate = np.where(pick1, rate1, rate2)
    out = rng.gamma(shape) / rate
    return out[()] if out.ndim == 0 else out
