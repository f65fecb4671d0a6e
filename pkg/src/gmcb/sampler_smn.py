"""Data-augmentation sampler for penalty exponents up to 2.

Each exponential power prior is written as a scale mixture of normals with
a tilted positive stable mixing law.  Given the latent scales, ``vec(B)``
and every ``delta_j`` are Gaussian and are drawn as blocks.

Sweep order: omega, B, Lambda, alpha_b, epsilon, delta, tau, gamma, alpha_d.
The latent scales are redrawn every sweep and never stored.

Block regimes:

* ``B`` with p < n: precision ``Omega (x) X'X + Delta`` factorised directly
  (dimension pq, built from cross-products only).
* ``B`` with p >= n: the rotated coefficients ``eta = V' B T'`` are drawn
  with the structured sampler, using only the r nonzero singular values.
* ``delta_j`` with j coefficients: direct when j < n, structured otherwise.
"""

from __future__ import annotations

import math
import zlib

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels as _k
from ._base import BaseSampler
from .conditionals import (
    SMN_ALPHA_UPPER,
    MhControl,
    gibbs_gamma,
    gibbs_lambda,
    gibbs_tau,
    mh_alpha_b,
    mh_alpha_d,
)
from .distributions import StructuredGaussianSpec, draw_by_precision, sample_gaussian_structured
from .errors import ConfigError, NotPositiveDefiniteError, ParameterDomainError, SamplerError
from .inference import ChainOutput
from .model import (
    Dataset,
    Hyperparams,
    ParamState,
    SufficientStats,
    SvdCache,
    hp_vector,
    omega_from,
)

__all__ = [
    "LatentScales",
    "BDrawWorkspace",
    "SMNSampler",
    "gibbs_omega",
    "gibbs_epsilon",
    "gibbs_B_block",
    "gibbs_delta_block",
    "run_gmcb_smn",
]

SWEEP_ORDER = ("omega", "B", "Lambda", "alpha_b", "epsilon", "delta", "tau", "gamma", "alpha_d")


class LatentScales:
    """Per-sweep latent precision multipliers (not part of the chain output)."""

    def __init__(self, omega: np.ndarray, epsilon: np.ndarray):
        self.omega = omega
        self.epsilon = epsilon

    def epsilon_rows(self) -> list:
        q = self.epsilon.shape[0]
        return [self.epsilon[j, :j].copy() for j in range(1, q)]


def _check_alpha(alpha):
    if not (0.0 < alpha < 2.0):
        raise ParameterDomainError(f"scale-mixture latents need an exponent in (0, 2), got {alpha}")


def gibbs_omega(state: ParamState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Latent scales for ``B``: ``omega = 2 W`` with ``W`` tilted stable of index
    ``alpha_b / 2`` and tilt ``B^2 (Lambda / (2 gamma))^(2 / alpha_b)``.

    Given ``omega``, ``B[k, j]`` has prior precision
    ``omega (Lambda / (2 gamma_j))^(2 / alpha_b)``.
    """
    _check_alpha(state.alpha_b)
    out = np.empty_like(state.B)
    if not _k.k_omega(state.B, state.Lambda, state.gamma, state.alpha_b, out, rng):
        raise SamplerError("tilted stable draw for omega exceeded its iteration cap")
    return out


def gibbs_epsilon(state: ParamState, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Latent scales for ``delta``; (q, q) with the strictly lower triangle filled."""
    _check_alpha(state.alpha_d)
    q = state.q
    out = np.ones((q, q))
    if not _k.k_epsilon(state.delta, state.tau, state.gamma, state.alpha_d, out, rng):
        raise SamplerError("tilted stable draw for epsilon exceeded its iteration cap")
    return out


class BDrawWorkspace:
    """Dataset-dependent caches for the ``B`` block and the current ``Delta``."""

    def __init__(self, data: Dataset, stats: SufficientStats | None = None,
                 force_regime: str | None = None):
        n, p = data.n, data.p
        if force_regime not in (None, "direct", "structured"):
            raise ConfigError(f"unknown regime {force_regime!r}")
        self.regime = force_regime or ("direct" if p < n else "structured")
        self.stats = stats if stats is not None else SufficientStats.from_dataset(data)
        self.x_checksum = zlib.crc32(np.ascontiguousarray(data.X).tobytes())
        self.p, self.q = p, data.q
        self.Delta = None
        self.max_factor_dim = 0
        if self.regime == "structured":
            svd = SvdCache.from_matrix(data.X)
            r = svd.r
            self.svd = svd
            self.UtY = svd.U[:, :r].T @ data.Y
            self.CVt = svd.psi[:, None] * svd.V[:, :r].T
        else:
            self.svd = None

    def refresh_response(self, data: Dataset, stats: SufficientStats) -> None:
        self.stats = stats
        if self.regime == "structured":
            self.UtY = self.svd.U[:, : self.svd.r].T @ data.Y

    def assemble_delta(self, state: ParamState, omega: np.ndarray) -> np.ndarray:
        """Prior precisions of ``vec(B)`` (column-major) given the latent scales."""
        scale = (state.Lambda * (0.5 / state.gamma)[None, :]) ** (2.0 / state.alpha_b)
        D = np.clip(omega, _k.TINY, _k.HUGE) * scale
        self.Delta = np.clip(D, _k.TINY, _k.HUGE).ravel(order="F")
        return self.Delta

    def note_factor(self, dim: int) -> None:
        if dim > self.max_factor_dim:
            self.max_factor_dim = dim


def _draw_precision_checked(Q, h, rng):
    try:
        return draw_by_precision(Q, h, rng)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            f"block precision not positive definite at pivot {exc.pivot}; "
            "check for degenerate gamma or latent scales", pivot=exc.pivot) from None


def gibbs_B_block(state: ParamState, workspace: BDrawWorkspace, data, hp: Hyperparams,
                  rng: np.random.Generator) -> np.ndarray:
    """Exact draw of ``B`` given ``Delta`` (set by :meth:`BDrawWorkspace.assemble_delta`)."""
    if workspace.Delta is None:
        raise SamplerError("workspace has no assembled Delta")
    p, q = state.B.shape
    Om = omega_from(state.delta, state.gamma)
    if workspace.regime == "direct":
        st = workspace.stats
        Q = np.kron(Om, st.XtX)
        Q[np.diag_indices(p * q)] += workspace.Delta
        h = (st.XtY @ Om).ravel(order="F")
        workspace.note_factor(p * q)
        x = _draw_precision_checked(Q, h, rng)
        state.B[...] = x.reshape((p, q), order="F")
        return state.B

    svd = workspace.svd
    r = svd.r
    T = np.eye(q) - np.tril(state.delta, -1)
    dm = 1.0 / np.sqrt(state.gamma)
    inv_sd = 1.0 / np.sqrt(workspace.Delta)
    K = np.kron(T, svd.V.T) * inv_sd[None, :]
    PK = np.kron(dm[:, None] * T, workspace.CVt) * inv_sd[None, :]
    alpha = (workspace.UtY @ T.T * dm[None, :]).ravel(order="F")
    spec = StructuredGaussianSpec(rhs=alpha, prior_cov_factor=K, design_factor=PK)
    workspace.note_factor(r * q)
    eta = sample_gaussian_structured(spec, rng).reshape((p, q), order="F")
    # B = V eta T^{-T}  <=>  T B' = (V eta)'
    Bt = solve_triangular(T, (svd.V @ eta).T, lower=True, unit_diagonal=True)
    state.B[...] = Bt.T
    return state.B


def gibbs_delta_block(state: ParamState, data, hp: Hyperparams, j: int,
                      rng: np.random.Generator, epsilon: np.ndarray, *,
                      G: np.ndarray | None = None, R: np.ndarray | None = None,
                      force_regime: str | None = None, workspace: BDrawWorkspace | None = None):
    """Exact draw of row ``j`` (0-based; ``j`` coefficients) of ``delta``.

    ``G`` is the residual Gram matrix and ``R`` the residual matrix; either is
    computed from ``data`` when needed and not supplied.
    """
    if not (1 <= j < state.q):
        raise ParameterDomainError(f"row index must satisfy 1 <= j < q, got {j}")
    n = data.n
    regime = force_regime or ("direct" if j < n else "structured")
    g = state.gamma[j]
    psi = np.clip(epsilon[j, :j], _k.TINY, _k.HUGE) \
        * (state.tau[j, :j] * 0.5 / g) ** (2.0 / state.alpha_d)
    psi = np.clip(psi, _k.TINY, _k.HUGE)
    if regime == "direct":
        if G is None:
            stats = data if isinstance(data, SufficientStats) else SufficientStats.from_dataset(data)
            G = stats.residual_gram(state.B)
        Q = G[:j, :j] / g
        Q[np.diag_indices(j)] += psi
        h = G[:j, j] / g
        if workspace is not None:
            workspace.note_factor(j)
        x = _draw_precision_checked(Q, h, rng)
    else:
        if R is None:
            R = data.Y - data.X @ state.B
        sg = math.sqrt(g)
        spec = StructuredGaussianSpec(rhs=R[:, j] / sg, design=R[:, :j] / sg,
                                      prior_cov_diag=1.0 / psi)
        if workspace is not None:
            workspace.note_factor(R.shape[0])
        x = sample_gaussian_structured(spec, rng)
    state.delta[j, :j] = x
    return state.delta[j, :j]


class SMNSampler(BaseSampler):
    """Scale-mixture sampler; requires ``k2 == 2``."""

    algorithm = "smn"
    alpha_upper = SMN_ALPHA_UPPER

    def __init__(self, data: Dataset, hp: Hyperparams, ctl: MhControl | None = None,
                 rng=None, state: ParamState | None = None, seed=None,
                 force_regime: str | None = None):
        if hp.k2 != 2.0:
            raise ConfigError(
                f"the scale-mixture sampler (GMCB-SMN) needs k2 = 2, got k2 = {hp.k2}; "
                "use the element-wise sampler (GMCB-MH) for k2 > 2")
        self._force_regime = force_regime
        self.workspace = None
        self.fused = True
        self._hpv = hp_vector(hp)
        user_state = state is not None
        super().__init__(data, hp, ctl, rng, state, seed)
        if user_state:
            if not (self.state.alpha_b < SMN_ALPHA_UPPER and self.state.alpha_d < SMN_ALPHA_UPPER):
                raise ConfigError("initial exponents must lie below 2")
        else:
            # the first latent draw needs Lambda and tau
            gibbs_lambda(self.state, self.stats, hp, self.rng)
            gibbs_tau(self.state, self.stats, hp, self.rng)

    def _data_changed(self):
        if self.workspace is None:
            self.workspace = BDrawWorkspace(self.data, self.stats, self._force_regime)
        else:
            self.workspace.refresh_response(self.data, self.stats)

    @property
    def fused_ok(self) -> bool:
        """Whether every block uses its direct regime, so the compiled sweep applies."""
        return (self.fused and self.order_log is None and self.workspace.regime == "direct"
                and self.state.q - 1 < self.data.n)

    def sweep(self, adapt_rate: float = 0.0) -> None:
        if self.fused_ok:
            self._fused_sweep(adapt_rate)
        else:
            self._modular_sweep(adapt_rate)

    def _fused_sweep(self, rate):
        st, stats, ctl = self.state, self.stats, self.ctl
        alphas = np.array([st.alpha_b, st.alpha_d])
        astep = np.array([ctl.step_alpha_b, ctl.step_alpha_d])
        aacc = np.zeros(2, dtype=np.int64)
        code = _k.smn_sweep(st.B, st.Lambda, st.delta, st.tau, st.gamma, alphas,
                            stats.XtX, stats.XtY, stats.YtY, float(stats.n), self._hpv,
                            SMN_ALPHA_UPPER, astep, aacc, float(rate), ctl.target_accept, self.rng)
        if code == 1:
            raise SamplerError("tilted stable draw exceeded its iteration cap")
        if code == 2:
            raise NotPositiveDefiniteError("B block precision not positive definite")
        if code == 3:
            raise NotPositiveDefiniteError("delta block precision not positive definite")
        st.alpha_b, st.alpha_d = float(alphas[0]), float(alphas[1])
        ctl.step_alpha_b, ctl.step_alpha_d = float(astep[0]), float(astep[1])
        ctl.tally("alpha_b", aacc[0])
        ctl.tally("alpha_d", aacc[1])
        self.workspace.note_factor(st.p * st.q)
        self.workspace.note_factor(st.q - 1)

    def _modular_sweep(self, adapt_rate):
        st, hp, rng, stats, ws = self.state, self.hp, self.rng, self.stats, self.workspace
        data = self.data

        omega = gibbs_omega(st, hp, rng)
        self._log("omega")
        ws.assemble_delta(st, omega)
        gibbs_B_block(st, ws, data, hp, rng)
        self._log("B")

        gibbs_lambda(st, stats, hp, rng)
        self._log("Lambda")

        _, acc = mh_alpha_b(st, stats, hp, self.ctl, rng, upper=SMN_ALPHA_UPPER)
        self._adapt_alpha("alpha_b", acc, adapt_rate)
        self._log("alpha_b")

        eps = gibbs_epsilon(st, hp, rng)
        self._log("epsilon")

        G = stats.residual_gram(st.B)
        q, n = st.q, data.n
        R = data.Y - data.X @ st.B if q - 1 >= n else None
        for j in range(1, q):
            gibbs_delta_block(st, data, hp, j, rng, eps, G=G, R=R, workspace=ws)
        self._log("delta")

        gibbs_tau(st, stats, hp, rng)
        self._log("tau")

        gibbs_gamma(st, stats, hp, rng, G=G)
        self._log("gamma")

        _, acc = mh_alpha_d(st, stats, hp, self.ctl, rng, upper=SMN_ALPHA_UPPER)
        self._adapt_alpha("alpha_d", acc, adapt_rate)
        self._log("alpha_d")

    def diagnostics(self) -> dict:
        return {"max_factor_dim": int(self.workspace.max_factor_dim),
                "regime": self.workspace.regime,
                "x_checksum": int(self.workspace.x_checksum)}


def run_gmcb_smn(data: Dataset, hp: Hyperparams, ctl: MhControl | None, iters: int,
                 burn_in: int, thin: int = 1, seed=None, *, state: ParamState | None = None,
                 store_regularization: bool = False,
                 force_regime: str | None = None) -> ChainOutput:
    """Run the scale-mixture sampler from the deterministic initial state."""
    sampler = SMNSampler(data, hp, ctl, seed=seed, state=state, force_regime=force_regime)
    return sampler.run(iters, burn_in, thin, store_regularization=store_regularization)
