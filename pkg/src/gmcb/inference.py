"""Posterior summaries: point estimators, losses, intervals, ESS, MLE."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import EstimatorSingularityError, ParameterDomainError, RankError
from .model import Dataset

__all__ = [
    "ChainOutput",
    "EstimateBundle",
    "LossValues",
    "MultivariateESS",
    "bayes_estimates",
    "losses",
    "credible_intervals",
    "interval_hits",
    "multivariate_ess",
    "batch_means_se",
    "mle",
    "omega_batch",
    "covariance_batch",
]


# ---------------------------------------------------------------------------
# chain container
# ---------------------------------------------------------------------------


def _unpack_delta(packed: np.ndarray, q: int) -> np.ndarray:
    S = packed.shape[0]
    out = np.zeros((S, q, q))
    il = np.tril_indices(q, -1)
    out[:, il[0], il[1]] = packed
    return out


def omega_batch(delta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``T' D^{-1} T`` for a stack of (q, q) lower-triangular delta matrices."""
    q = gamma.shape[-1]
    T = np.eye(q) - np.tril(delta, -1)
    Om = np.einsum("sji,sj,sjk->sik", T, 1.0 / gamma, T, optimize=True)
    return 0.5 * (Om + np.swapaxes(Om, 1, 2))


def covariance_batch(delta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``T^{-1} D T^{-T}`` using forward substitution ``L = I + delta L``."""
    S, q = gamma.shape
    L = np.zeros((S, q, q))
    for i in range(q):
        L[:, i, i] = 1.0
        if i:
            L[:, i, :] += np.einsum("sk,skm->sm", delta[:, i, :i], L[:, :i, :])
    Sig = np.einsum("sik,sk,sjk->sij", L, gamma, L, optimize=True)
    return 0.5 * (Sig + np.swapaxes(Sig, 1, 2))


@dataclass
class ChainOutput:
    """Post-burn-in, thinned draws of one chain.

    ``delta`` (and ``tau`` when stored) are packed in ``np.tril_indices(q, -1)``
    order: ``delta_2`` first, then ``delta_3``, and so on.
    """

    B: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    alpha_b: np.ndarray
    alpha_d: np.ndarray
    algorithm: str = ""
    iters: int = 0
    burn_in: int = 0
    thin: int = 1
    seed: int | None = None
    acceptance: dict = field(default_factory=dict)
    step_sizes: dict = field(default_factory=dict)
    Lambda: np.ndarray | None = None
    tau: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        S = self.B.shape[0]
        if S < 2:
            raise ParameterDomainError(f"a chain needs at least 2 stored draws, got {S}")
        for name in ("delta", "gamma", "alpha_b", "alpha_d"):
            if getattr(self, name).shape[0] != S:
                raise ParameterDomainError(f"{name} has a different number of samples")

    @property
    def S(self) -> int:
        return self.B.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.B.shape[2]

    def delta_matrices(self, sl=slice(None)) -> np.ndarray:
        return _unpack_delta(self.delta[sl], self.q)

    def omega_samples(self, sl=slice(None)) -> np.ndarray:
        return omega_batch(self.delta_matrices(sl), self.gamma[sl])

    def covariance_samples(self, sl=slice(None)) -> np.ndarray:
        return covariance_batch(self.delta_matrices(sl), self.gamma[sl])

    def chunks(self, size: int = 4096):
        for start in range(0, self.S, size):
            yield slice(start, min(start + size, self.S))

    def flat_summary(self, select: str = "B+Omega") -> np.ndarray:
        """(S, d) matrix of selected scalar summaries (B entries, distinct Omega entries)."""
        iu = np.triu_indices(self.q)
        parts = []
        if "B" in select:
            parts.append(self.B.reshape(self.S, -1))
        if "Omega" in select:
            parts.append(np.concatenate([self.omega_samples(sl)[:, iu[0], iu[1]]
                                         for sl in self.chunks()]))
        return np.hstack(parts)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateBundle:
    B_F: np.ndarray
    Omega_F: np.ndarray
    B_Q: np.ndarray
    Omega_S: np.ndarray
    ci_B: tuple | None = None
    ci_Omega: tuple | None = None
    level: float | None = None


def _checked_inverse(M: np.ndarray, what: str, max_cond: float = 1e12) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > max_cond:
        raise EstimatorSingularityError(f"{what} is numerically singular (cond={cond:.3g})", cond)
    c = cho_factor(M, lower=True)
    return cho_solve(c, np.eye(M.shape[0]))


def bayes_estimates(chain: ChainOutput, level: float | None = 0.95) -> EstimateBundle:
    """Posterior means under Frobenius loss and the (L_Q, L_S) optimal pair.

    ``B_Q = E[B Omega] E[Omega]^{-1}`` and ``Omega_S = E[Omega^{-1}]^{-1}``;
    per-sample covariances come from the triangular factors.
    """
    p, q = chain.p, chain.q
    B_sum = np.zeros((p, q))
    Om_sum = np.zeros((q, q))
    BOm_sum = np.zeros((p, q))
    Sig_sum = np.zeros((q, q))
    for sl in chain.chunks():
        Om = chain.omega_samples(sl)
        B = chain.B[sl]
        B_sum += B.sum(axis=0)
        Om_sum += Om.sum(axis=0)
        BOm_sum += np.einsum("spq,sqr->pr", B, Om)
        Sig_sum += chain.covariance_samples(sl).sum(axis=0)
    S = chain.S
    B_F = B_sum / S
    Om_F = Om_sum / S
    B_Q = (BOm_sum / S) @ _checked_inverse(Om_F, "posterior mean of Omega")
    Om_S = _checked_inverse(Sig_sum / S, "posterior mean of Omega^{-1}")
    Om_S = 0.5 * (Om_S + Om_S.T)
    ci_B = ci_Om = None
    if level is not None:
        ci = credible_intervals(chain, level)
        ci_B, ci_Om = ci["B"], ci["Omega"]
    return EstimateBundle(B_F, Om_F, B_Q, Om_S, ci_B, ci_Om, level)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


class LossValues(NamedTuple):
    frob_B: float
    frob_Omega: float
    L_Q: float
    L_S: float


def _logdet_pd(M, what):
    try:
        c, low = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ParameterDomainError(f"{what} is not positive definite") from exc
    return 2.0 * np.sum(np.log(np.diag(c))), (c, low)


def _pair_losses(B_est, Om_est, B_true, Om_true) -> LossValues:
    B_est, Om_est = np.asarray(B_est, float), np.asarray(Om_est, float)
    B_true, Om_true = np.asarray(B_true, float), np.asarray(Om_true, float)
    if B_est.shape != B_true.shape or Om_est.shape != Om_true.shape:
        raise ParameterDomainError("estimate and truth shapes differ")
    q = Om_true.shape[0]
    ld_true, ct = _logdet_pd(Om_true, "true Omega")
    ld_est, _ = _logdet_pd(Om_est, "estimated Omega")
    dB = B_est - B_true
    LQ = float(np.trace(dB @ Om_true @ dB.T))
    tr = float(np.trace(cho_solve(ct, Om_est)))
    LS = tr - (ld_est - ld_true) - q
    return LossValues(float(np.sum(dB ** 2)), float(np.sum((Om_est - Om_true) ** 2)), LQ, max(LS, 0.0))


def losses(est, truth):
    """Squared Frobenius losses, ``L_Q`` and ``L_S``.

    ``est`` is either a ``(B, Omega)`` pair, giving one :class:`LossValues`,
    or an :class:`EstimateBundle`, giving ``{"F": ..., "QS": ...}`` for the
    pairs ``(B_F, Omega_F)`` and ``(B_Q, Omega_S)``.
    """
    B_true, Om_true = truth
    if isinstance(est, EstimateBundle):
        return {"F": _pair_losses(est.B_F, est.Omega_F, B_true, Om_true),
                "QS": _pair_losses(est.B_Q, est.Omega_S, B_true, Om_true)}
    B_est, Om_est = est
    return _pair_losses(B_est, Om_est, B_true, Om_true)


# ---------------------------------------------------------------------------
# intervals
# ---------------------------------------------------------------------------


def _eq_tail(x, level):
    lo, hi = np.quantile(x, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return lo, hi


def credible_intervals(chain: ChainOutput, level: float = 0.95) -> dict:
    """Equal-tailed elementwise intervals for ``B`` and ``Omega``."""
    if not (0.0 < level < 1.0):
        raise ParameterDomainError("level must lie in (0, 1)")
    Om = np.concatenate([chain.omega_samples(sl) for sl in chain.chunks()])
    return {"B": _eq_tail(chain.B, level), "Omega": _eq_tail(Om, level)}


def interval_hits(interval: tuple, truth: np.ndarray) -> np.ndarray:
    lo, hi = interval
    return (lo <= truth) & (truth <= hi)


# ---------------------------------------------------------------------------
# effective sample size
# ---------------------------------------------------------------------------


class MultivariateESS(NamedTuple):
    ess: float
    batch_size: int
    repaired: bool


def _batch_means(x: np.ndarray, b: int):
    S = x.shape[0]
    a = S // b
    xb = x[: a * b].reshape(a, b, -1).mean(axis=1)
    return xb, a


def batch_means_se(x: np.ndarray, batch_size: int | None = None) -> np.ndarray:
    """Monte Carlo standard error of the mean of each column by batch means."""
    x = np.asarray(x, dtype=float)
    x2 = x.reshape(x.shape[0], -1)
    S = x2.shape[0]
    b = batch_size or max(1, int(math.isqrt(S)))
    xb, a = _batch_means(x2, b)
    var = b * np.var(xb, axis=0, ddof=1)
    return np.sqrt(var / S).reshape(x.shape[1:])


def multivariate_ess(chain, select: str = "B+Omega") -> MultivariateESS:
    """``S (det Lambda / det Sigma)^(1/d)`` with batch-means ``Sigma``.

    ``chain`` is a :class:`ChainOutput` (summaries chosen by ``select``) or an
    (S, d) array.
    """
    x = chain.flat_summary(select) if isinstance(chain, ChainOutput) else np.asarray(chain, float)
    if x.ndim == 1:
        x = x[:, None]
    S, d = x.shape
    if S < 100 * d:
        warnings.warn(f"only {S} samples for {d} dimensions; ESS estimate is unreliable",
                      RuntimeWarning, stacklevel=2)
    b = max(1, int(math.isqrt(S)))
    xb, a = _batch_means(x, b)
    mu = x.mean(axis=0)
    dev = xb - mu
    Sigma = b * dev.T @ dev / (a - 1)
    Lam = np.cov(x, rowvar=False).reshape(d, d)
    ld_L = _safe_logdet(Lam)
    ld_S, repaired = _logdet_repair(Sigma)
    if repaired:
        warnings.warn("batch-means covariance not positive definite; jitter added",
                      RuntimeWarning, stacklevel=2)
    return MultivariateESS(float(S * math.exp((ld_L - ld_S) / d)), b, repaired)


def _safe_logdet(M):
    sign, ld = np.linalg.slogdet(M)
    if sign <= 0:
        raise ParameterDomainError("sample covariance of the selected summaries is singular")
    return ld


def _logdet_repair(M):
    try:
        c, _ = cho_factor(M, lower=True)
        return 2.0 * np.sum(np.log(np.diag(c))), False
    except np.linalg.LinAlgError:
        pass
    scale = max(np.trace(M) / M.shape[0], 1e-300)
    jitter = 1e-10 * scale
    while True:
        try:
            c, _ = cho_factor(M + jitter * np.eye(M.shape[0]), lower=True)
            return 2.0 * np.sum(np.log(np.diag(c))), True
        except np.linalg.LinAlgError:
            jitter *= 10.0


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------


def mle(data: Dataset):
    """Least-squares ``B`` and inverse residual covariance (divisor ``n``)."""
    X, Y = data.X, data.Y
    n, p = X.shape
    if n <= p:
        raise RankError(f"need n > p for the MLE (n={n}, p={p})")
    XtX = X.T @ X
    ev = np.linalg.eigvalsh(XtX)
    if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
        raise RankError("X'X is singular")
    B = np.linalg.solve(XtX, X.T @ Y)
    R = Y - X @ B
    Sig = R.T @ R / n
    ev = np.linalg.eigvalsh(Sig)
    scale = max(np.max(np.abs(Y)) ** 2 / n, np.finfo(float).tiny)
    if ev[0] <= 1e-10 * max(ev[-1], scale):
        raise RankError("residual covariance is singular")
    Om = np.linalg.inv(Sig)
    return B, 0.5 * (Om + Om.T)
