"""Data containers, parameter state and the posterior kernel.

The response precision is parametrised through its modified Cholesky
factors ``Omega = T' D^{-1} T``: ``T`` is unit lower-triangular with
``T[j, k] = -delta[j, k]`` and ``D = diag(gamma)``.  Equivalently, column
``j`` of the regression residual ``R = Y - XB`` is an autoregression on the
earlier residual columns with coefficients ``delta[j, :j]`` and innovation
variance ``gamma[j]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from . import _kernels as _k
from .errors import ConfigError, DataError, ParameterDomainError

__all__ = [
    "Dataset",
    "Preprocessing",
    "Hyperparams",
    "ParamState",
    "CholeskyView",
    "SvdCache",
    "SufficientStats",
    "preprocess",
    "build_cholesky_view",
    "modified_cholesky",
    "sequential_loglik",
    "log_posterior_kernel",
    "method_of_moments_gamma_prior",
    "simulate_prior",
    "simulate_response",
    "initial_state",
]

_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Responses ``Y`` (n, q) and covariates ``X`` (n, p)."""

    Y: np.ndarray
    X: np.ndarray
    centered: bool = False
    standardized: bool = False

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim != 2 or X.ndim != 2:
            raise DataError("Y and X must be matrices")
        if Y.shape[0] != X.shape[0]:
            raise DataError(f"Y has {Y.shape[0]} rows but X has {X.shape[0]}")
        n = Y.shape[0]
        if n < 2 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DataError(f"need n >= 2, p >= 1, q >= 1; got Y {Y.shape}, X {X.shape}")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise DataError("data contain non-finite entries")
        if self.standardized:
            mu = X.mean(axis=0)
            sd = X.std(axis=0)
            if np.max(np.abs(mu)) > 1e-8 or np.max(np.abs(sd - 1.0)) > 1e-8:
                raise DataError("X flagged standardized but columns are not mean 0, sd 1")
        if self.centered and np.max(np.abs(Y.mean(axis=0))) > 1e-8 * max(1.0, np.abs(Y).max()):
            raise DataError("Y flagged centered but column means are not zero")
        object.__setattr__(self, "Y", np.ascontiguousarray(Y))
        object.__setattr__(self, "X", np.ascontiguousarray(X))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class Preprocessing:
    """Record of the centring/scaling applied by :func:`preprocess`."""

    y_mean: np.ndarray | None
    x_mean: np.ndarray | None
    x_scale: np.ndarray | None

    def coef_to_original(self, B: np.ndarray) -> np.ndarray:
        """Map coefficients fitted on standardized X back to the raw X scale."""
        B = np.asarray(B, dtype=float)
        if self.x_scale is None:
            return B.copy()
        return B / self.x_scale.reshape((-1,) + (1,) * (B.ndim - 1))

    def to_dict(self) -> dict:
        f = (lambda v: None if v is None else np.asarray(v).tolist())
        return {"y_mean": f(self.y_mean), "x_mean": f(self.x_mean), "x_scale": f(self.x_scale)}


def preprocess(Y, X=None, *, center: bool = True, standardize: bool = True):
    """Centre ``Y`` and standardize ``X`` (population sd).

    With ``X=None`` the model is intercept-only: ``X`` is a column of ones and
    no transform is applied to either matrix.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.ndim != 2:
        raise DataError("Y must be a matrix")
    if X is None:
        ds = Dataset(Y, np.ones((Y.shape[0], 1)))
        return ds, Preprocessing(None, None, None)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y_mean = x_mean = x_scale = None
    if center:
        y_mean = Y.mean(axis=0)
        Y = Y - y_mean
    if standardize:
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        bad = np.flatnonzero(x_scale <= 1e-12 * np.maximum(1.0, np.abs(x_mean)))
        if bad.size:
            raise DataError(f"cannot standardize constant covariate column(s) {bad.tolist()}")
        X = (X - x_mean) / x_scale
    ds = Dataset(Y, X, centered=center, standardized=standardize)
    return ds, Preprocessing(y_mean, x_mean, x_scale)


@dataclass(frozen=True)
class SufficientStats:
    """Cross-products that make a sweep independent of ``n`` when p < n."""

    n: int
    XtX: np.ndarray
    XtY: np.ndarray
    YtY: np.ndarray

    @classmethod
    def from_dataset(cls, data: Dataset) -> "SufficientStats":
        X, Y = data.X, data.Y
        return cls(data.n, X.T @ X, X.T @ Y, Y.T @ Y)

    def residual_gram(self, B: np.ndarray) -> np.ndarray:
        """G = (Y - XB)'(Y - XB)."""
        XtXB = self.XtX @ B
        C = B.T @ self.XtY
        G = self.YtY - C - C.T + B.T @ XtXB
        return 0.5 * (G + G.T)

    def score(self, B: np.ndarray) -> np.ndarray:
        """S = X'(Y - XB)."""
        return self.XtY - self.XtX @ B


@dataclass(frozen=True)
class SvdCache:
    """Full SVD ``X = U C V'``; ``psi`` holds the ``r`` positive singular values."""

    U: np.ndarray
    V: np.ndarray
    C: np.ndarray
    psi: np.ndarray
    r: int

    @classmethod
    def from_matrix(cls, X: np.ndarray, rtol: float = 1e-12) -> "SvdCache":
        n, p = X.shape
        U, s, Vt = np.linalg.svd(X, full_matrices=True)
        r = int(np.sum(s > rtol * max(s.max(initial=0.0), 1e-300)))
        C = np.zeros((n, p))
        C[np.arange(r), np.arange(r)] = s[:r]
        return cls(U, Vt.T, C, s[:r].copy(), r)


# ---------------------------------------------------------------------------
# prior constants
# ---------------------------------------------------------------------------


def _positive_tuple(name, values, length):
    vals = tuple(float(v) for v in values)
    if len(vals) != length:
        raise ConfigError(f"{name} needs {length} values, got {len(vals)}")
    if not all(v > 0.0 and math.isfinite(v) for v in vals):
        raise ConfigError(f"{name} entries must be positive and finite: {vals}")
    return vals


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants shared by every element.

    ``lambda_mix = (e1, f1, e2, f2)`` and ``tau_mix = (s1, t1, s2, t2)`` are
    equal-weight mixtures of ``Gamma(shape, rate)``; ``gamma_prior = (a, b)``
    is inverse-gamma; both penalty exponents are ``Uniform(k1, k2)``.
    """

    k1: float = 0.5
    k2: float = 2.0
    lambda_mix: tuple = (1.0, 1.0, 1.0, 1.0)
    tau_mix: tuple = (1.0, 1.0, 1.0, 1.0)
    gamma_prior: tuple = (3.0, 2.0)

    def __post_init__(self):
        k1, k2 = float(self.k1), float(self.k2)
        if not (0.0 < k1 <= 1.0):
            raise ConfigError(f"k1 must lie in (0, 1], got {k1}")
        if not (k2 >= 2.0 and math.isfinite(k2)):
            raise ConfigError(f"k2 must be finite and >= 2, got {k2}")
        object.__setattr__(self, "k1", k1)
        object.__setattr__(self, "k2", k2)
        object.__setattr__(self, "lambda_mix", _positive_tuple("lambda_mix", self.lambda_mix, 4))
        object.__setattr__(self, "tau_mix", _positive_tuple("tau_mix", self.tau_mix, 4))
        object.__setattr__(self, "gamma_prior", _positive_tuple("gamma_prior", self.gamma_prior, 2))

    def replace(self, **kw) -> "Hyperparams":
        d = self.to_dict()
        d.update(kw)
        return Hyperparams(**d)

    def to_dict(self) -> dict:
        return {"k1": self.k1, "k2": self.k2, "lambda_mix": list(self.lambda_mix),
                "tau_mix": list(self.tau_mix), "gamma_prior": list(self.gamma_prior)}


def hp_vector(hp: Hyperparams) -> np.ndarray:
    """Flat layout used by the compiled sweeps."""
    return np.array([hp.k1, hp.k2, *hp.lambda_mix, *hp.tau_mix, *hp.gamma_prior], dtype=float)


# ---------------------------------------------------------------------------
# parameter state
# ---------------------------------------------------------------------------


@dataclass
class ParamState:
    """One Markov chain state.

    ``delta`` and ``tau`` are stored as (q, q) arrays whose strictly lower
    triangle holds the ragged rows ``delta_2, ..., delta_q``; the remaining
    entries are zero.  :meth:`delta_rows` gives the ragged view.
    """

    B: np.ndarray
    Lambda: np.ndarray
    alpha_b: float
    delta: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    alpha_d: float

    def __post_init__(self):
        self.B = np.array(self.B, dtype=float, order="C", ndmin=2)
        p, q = self.B.shape
        self.Lambda = np.array(self.Lambda, dtype=float, order="C").reshape(p, q)
        self.gamma = np.array(self.gamma, dtype=float).reshape(q)
        self.delta = _as_lower(self.delta, q, "delta")
        self.tau = _as_lower(self.tau, q, "tau", fill=1.0)
        self.alpha_b = float(self.alpha_b)
        self.alpha_d = float(self.alpha_d)

    @property
    def p(self) -> int:
        return self.B.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    def copy(self) -> "ParamState":
        return ParamState(self.B.copy(), self.Lambda.copy(), self.alpha_b, self.delta.copy(),
                          self.tau.copy(), self.gamma.copy(), self.alpha_d)

    def delta_rows(self) -> list:
        return [self.delta[j, :j].copy() for j in range(1, self.q)]

    def tau_rows(self) -> list:
        return [self.tau[j, :j].copy() for j in range(1, self.q)]

    def packed_delta(self) -> np.ndarray:
        return self.delta[np.tril_indices(self.q, -1)]

    def packed_tau(self) -> np.ndarray:
        return self.tau[np.tril_indices(self.q, -1)]

    def validate(self, hp: Hyperparams | None = None) -> None:
        if np.any(self.Lambda <= 0) or np.any(self.gamma <= 0):
            raise ParameterDomainError("Lambda and gamma must be positive")
        if np.any(self.packed_tau() <= 0):
            raise ParameterDomainError("tau must be positive")
        finite = [self.B, self.Lambda, self.delta, self.tau, self.gamma]
        if not all(np.all(np.isfinite(a)) for a in finite):
            raise ParameterDomainError("state has non-finite entries")
        if hp is not None and not (hp.k1 <= self.alpha_b <= hp.k2 and hp.k1 <= self.alpha_d <= hp.k2):
            raise ParameterDomainError("penalty exponents outside [k1, k2]")


def _as_lower(values, q, name, fill=0.0):
    """Accept a (q, q) matrix or a ragged list of rows of length 1..q-1."""
    out = np.zeros((q, q))
    if isinstance(values, np.ndarray) and values.ndim == 2:
        if values.shape != (q, q):
            raise ParameterDomainError(f"{name} must be {q}x{q}")
        il = np.tril_indices(q, -1)
        out[il] = values[il]
        return out
    rows = list(values) if values is not None else []
    if q == 1 and len(rows) == 0:
        return out
    if len(rows) != q - 1:
        raise ParameterDomainError(f"{name} needs {q - 1} rows, got {len(rows)}")
    for j, row in enumerate(rows, start=1):
        row = np.asarray(row, dtype=float).reshape(-1)
        if row.size != j:
            raise ParameterDomainError(f"{name} row {j + 1} must have length {j}, got {row.size}")
        out[j, :j] = row
    return out


# ---------------------------------------------------------------------------
# modified Cholesky algebra
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CholeskyView:
    T: np.ndarray
    Dinv: np.ndarray
    Omega: np.ndarray

    def covariance(self) -> np.ndarray:
        """Omega^{-1} = T^{-1} D T^{-T}, via a triangular solve."""
        Tinv = solve_triangular(self.T, np.eye(self.T.shape[0]), lower=True, unit_diagonal=True)
        S = (Tinv / self.Dinv) @ Tinv.T
        return 0.5 * (S + S.T)


def build_cholesky_view(delta, gamma) -> CholeskyView:
    """Assemble ``T``, ``D^{-1}`` and ``Omega = T' D^{-1} T``."""
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if np.any(~(gamma > 0)) or not np.all(np.isfinite(gamma)):
        raise ParameterDomainError("gamma entries must be positive and finite")
    q = gamma.size
    T = np.eye(q) - _as_lower(delta, q, "delta")
    Dinv = 1.0 / gamma
    Omega = (T.T * Dinv) @ T
    Omega = 0.5 * (Omega + Omega.T)
    return CholeskyView(T, Dinv, Omega)


def modified_cholesky(Sigma) -> tuple:
    """``(delta, gamma)`` with ``Sigma^{-1} = T' D^{-1} T``.

    Row ``j`` of ``delta`` holds the population regression coefficients of
    coordinate ``j`` on coordinates ``0..j-1``; ``gamma[j]`` is the residual
    variance.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    q = Sigma.shape[0]
    if Sigma.shape != (q, q) or not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12):
        raise ParameterDomainError("Sigma must be a symmetric square matrix")
    delta = np.zeros((q, q))
    gamma = np.empty(q)
    gamma[0] = Sigma[0, 0]
    for j in range(1, q):
        coef = np.linalg.solve(Sigma[:j, :j], Sigma[:j, j])
        delta[j, :j] = coef
        gamma[j] = Sigma[j, j] - Sigma[j, :j] @ coef
    if np.any(~(gamma > 0)):
        raise ParameterDomainError("Sigma is not positive definite")
    return delta, gamma


def omega_from(delta_mat: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Fast path of :func:`build_cholesky_view` for trusted (q, q) inputs."""
    T = np.eye(gamma.size) - np.tril(delta_mat, -1)
    Om = (T.T / gamma) @ T
    return 0.5 * (Om + Om.T)


# ---------------------------------------------------------------------------
# likelihood and posterior kernel
# ---------------------------------------------------------------------------


def _resnorms(state: ParamState, data) -> np.ndarray:
    stats = data if isinstance(data, SufficientStats) else SufficientStats.from_dataset(data)
    G = stats.residual_gram(state.B)
    return _k.seq_resnorm(G, state.delta), stats.n


def sequential_loglik(state: ParamState, data: Dataset) -> float:
    """Sum over columns of Gaussian autoregression log-likelihoods (with 2*pi)."""
    R = data.Y - data.X @ state.B
    n, q = R.shape
    resid = R - R @ np.tril(state.delta, -1).T
    rss = np.einsum("ij,ij->j", resid, resid)
    return float(-0.5 * n * q * _LOG2PI - 0.5 * n * np.sum(np.log(state.gamma))
                 - 0.5 * np.sum(rss / state.gamma))


def _ep_terms(x, lam, alpha, g):
    # exponential power log density without its -log 2 constant
    inv = 1.0 / alpha
    return (math.log(alpha) - inv * math.log(2.0) - math.lgamma(inv)
            + inv * np.log(lam / g) - 0.5 * lam / g * np.abs(x) ** alpha)


def _mix_gamma_logpdf(x, mix):
    e1, f1, e2, f2 = mix
    l1 = e1 * math.log(f1) - gammaln(e1) + (e1 - 1.0) * np.log(x) - f1 * x
    l2 = e2 * math.log(f2) - gammaln(e2) + (e2 - 1.0) * np.log(x) - f2 * x
    return np.logaddexp(l1, l2) - math.log(2.0)


def log_posterior_kernel(state: ParamState, data, hp: Hyperparams) -> float:
    """Log joint density of parameters and data, constants in the data dropped.

    Terms free of every parameter (powers of 2*pi, the uniform prior
    densities, the inverse-gamma normaliser, ``-log 2`` per exponential power
    element) are omitted.  Returns ``-inf`` outside the support.
    """
    ab, ad = state.alpha_b, state.alpha_d
    if not (hp.k1 <= ab <= hp.k2 and hp.k1 <= ad <= hp.k2):
        return -math.inf
    q = state.q
    il = np.tril_indices(q, -1)
    lam, tau, g = state.Lambda, state.tau[il], state.gamma
    if np.any(~(lam > 0)) or np.any(~(tau > 0)) or np.any(~(g > 0)):
        return -math.inf
    rss, n = _resnorms(state, data)
    val = -0.5 * n * np.sum(np.log(g)) - 0.5 * np.sum(rss / g)
    val += np.sum(_ep_terms(state.B, lam, ab, g[None, :]))
    val += np.sum(_mix_gamma_logpdf(lam, hp.lambda_mix))
    if q > 1:
        val += np.sum(_ep_terms(state.delta[il], tau, ad, g[il[0]]))
        val += np.sum(_mix_gamma_logpdf(tau, hp.tau_mix))
    a, b = hp.gamma_prior
    val += np.sum(-(a + 1.0) * np.log(g) - b / g)
    return float(val)


# ---------------------------------------------------------------------------
# prior and data simulation
# ---------------------------------------------------------------------------


def _mix_gamma_rvs(mix, size, rng):
    e1, f1, e2, f2 = mix
    pick = rng.random(size) < 0.5
    return np.where(pick, rng.gamma(e1, 1.0, size) / f1, rng.gamma(e2, 1.0, size) / f2)


def simulate_prior(hp: Hyperparams, p: int, q: int, rng: np.random.Generator,
                   alpha_upper: float | None = None) -> ParamState:
    """Exact draw of every parameter from the prior."""
    from .distributions import exp_power_rvs

    hi = hp.k2 if alpha_upper is None else min(hp.k2, alpha_upper)
    a, b = hp.gamma_prior
    alpha_b = rng.uniform(hp.k1, hi)
    alpha_d = rng.uniform(hp.k1, hi)
    gamma = b / rng.gamma(a, 1.0, q)
    Lam = _mix_gamma_rvs(hp.lambda_mix, (p, q), rng)
    B = exp_power_rvs(Lam, alpha_b, gamma[None, :], rng)
    tau = np.zeros((q, q))
    delta = np.zeros((q, q))
    il = np.tril_indices(q, -1)
    if q > 1:
        t = _mix_gamma_rvs(hp.tau_mix, il[0].size, rng)
        tau[il] = t
        delta[il] = exp_power_rvs(t, alpha_d, gamma[il[0]], rng)
    return ParamState(B, Lam, alpha_b, delta, tau, gamma, alpha_d)


def simulate_response(state: ParamState, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Y`` given the parameters by running the column autoregressions."""
    n = X.shape[0]
    mean = X @ state.B
    q = state.q
    R = np.empty((n, q))
    z = rng.standard_normal((n, q))
    for j in range(q):
        R[:, j] = R[:, :j] @ state.delta[j, :j] + math.sqrt(state.gamma[j]) * z[:, j]
    return mean + R


# ---------------------------------------------------------------------------
# inverse-gamma prior by moments; initial values
# ---------------------------------------------------------------------------


def _fit_residuals(Z, y):
    """Least-squares fit of ``y`` on ``Z`` returning (coef, residual, dof).

    Falls back to a unit ridge penalty (and dof ``n``) when ``Z`` leaves
    fewer than two residual degrees of freedom.
    """
    n, m = Z.shape
    if m == 0:
        return np.empty(0), y.copy(), n
    if m < n - 1:
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return coef, y - Z @ coef, n - m
    coef = np.linalg.solve(Z.T @ Z + np.eye(m), Z.T @ y)
    return coef, y - Z @ coef, n


def sequential_residual_variances(data: Dataset) -> np.ndarray:
    """Residual variance of each ``Y^j`` regressed on ``X`` and ``Y^{1:j-1}``."""
    X, Y = data.X, data.Y
    v = np.empty(data.q)
    for j in range(data.q):
        Z = np.hstack([X, Y[:, :j]])
        _, r, dof = _fit_residuals(Z, Y[:, j])
        v[j] = r @ r / dof
    return v


def method_of_moments_gamma_prior(data: Dataset) -> tuple:
    """Inverse-gamma ``(a, b)`` matching the mean and variance of the
    sequential residual variances; ``a`` is kept above 2.01.

    With only one response, or identical variances, falls back to
    ``(3, 2 * mean)`` and emits a ``RuntimeWarning``.
    """
    v = sequential_residual_variances(data)
    m = float(np.mean(v))
    if m <= 0.0:
        raise DataError("responses are exactly fitted; residual variances are zero")
    var = float(np.var(v, ddof=1)) if v.size > 1 else 0.0
    if not var > 1e-14 * m * m:
        warnings.warn("residual variances have zero spread; using a=3, b=2*mean",
                      RuntimeWarning, stacklevel=2)
        return 3.0, 2.0 * m
    a = max(2.0 + m * m / var, 2.01)
    return a, (a - 1.0) * m


def initial_state(data: Dataset, hp: Hyperparams, alpha_upper: float | None = None) -> ParamState:
    """Deterministic starting point: ridge B, sequential fit of delta, residual
    variances for gamma, mid-range exponents.  ``Lambda`` and ``tau`` are set
    to one and are expected to be overwritten by the first sweep.
    """
    X, Y = data.X, data.Y
    n, p = X.shape
    q = Y.shape[1]
    B = np.linalg.solve(X.T @ X + np.eye(p), X.T @ Y)
    R = Y - X @ B
    delta = np.zeros((q, q))
    gamma = np.empty(q)
    for j in range(q):
        coef, r, _ = _fit_residuals(R[:, :j], R[:, j])
        delta[j, :j] = coef
        gamma[j] = max(r @ r / n, 1e-6)
    hi = hp.k2 if alpha_upper is None else min(hp.k2, alpha_upper)
    mid = 0.5 * (hp.k1 + hi)
    tau = np.ones((q, q))
    return ParamState(B, np.ones((p, q)), mid, delta, tau, gamma, mid)
