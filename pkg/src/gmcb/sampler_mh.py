"""Element-wise Metropolis-within-Gibbs sampler.

Each ``B[k, j]`` and ``delta[j, k]`` gets its own Gaussian random-walk
proposal.  Likelihood differences are computed from cross-products only:
``S = X'(Y - XB)`` for coefficient moves and the residual Gram matrix
``G = (Y - XB)'(Y - XB)`` for autoregression moves, so a sweep costs
O(pq(p + q) + q^3) and never touches the n rows.

Sweep order: Lambda, B (element-wise), alpha_b, tau, delta (element-wise),
gamma, alpha_d.
"""

from __future__ import annotations

import math

import numpy as np

from . import _kernels as _k
from ._base import BaseSampler
from .conditionals import MhControl, gibbs_gamma, gibbs_lambda, gibbs_tau, mh_alpha_b, mh_alpha_d
from .errors import ParameterDomainError
from .inference import ChainOutput
from .model import Dataset, Hyperparams, ParamState, SufficientStats, hp_vector, omega_from

__all__ = [
    "MhSweepPlan",
    "MHSampler",
    "mh_update_B_element",
    "mh_update_delta_element",
    "run_gmcb_mh",
]

SWEEP_ORDER = ("Lambda", "B", "alpha_b", "tau", "delta", "gamma", "alpha_d")


class MhSweepPlan:
    """Update order plus per-element random-walk scales."""

    order = SWEEP_ORDER

    def __init__(self, step_B: np.ndarray, step_delta: np.ndarray):
        step_B = np.ascontiguousarray(step_B, dtype=float)
        step_delta = np.ascontiguousarray(step_delta, dtype=float)
        q = step_delta.shape[0]
        if step_B.ndim != 2 or step_B.shape[1] != q or step_delta.shape != (q, q):
            raise ParameterDomainError("step arrays must be (p, q) and (q, q)")
        il = np.tril_indices(q, -1)
        if np.any(step_B <= 0) or np.any(step_delta[il] <= 0):
            raise ParameterDomainError("step sizes must be positive")
        self.step_B = step_B
        self.step_delta = step_delta


def _default_steps(state: ParamState, stats: SufficientStats):
    """Conditional likelihood standard deviations at the initial state."""
    Om = omega_from(state.delta, state.gamma)
    dXX = np.maximum(np.diag(stats.XtX), 1e-12)
    sB = 1.0 / np.sqrt(np.outer(dXX, np.diag(Om)))
    G = stats.residual_gram(state.B)
    dG = np.maximum(np.diag(G), 1e-12)
    sD = np.sqrt(state.gamma[:, None] / dG[None, :])
    sD = np.tril(sD, -1) + np.triu(np.ones_like(sD))
    return np.minimum(sB, 10.0), np.minimum(sD, 10.0)


def mh_update_B_element(state: ParamState, data, hp: Hyperparams, k: int, j: int,
                        step: float, rng: np.random.Generator):
    """One random-walk update of ``B[k, j]`` (0-based indices).

    Returns ``(new_value, accepted)``.
    """
    stats = data if isinstance(data, SufficientStats) else SufficientStats.from_dataset(data)
    Om = omega_from(state.delta, state.gamma)
    S = stats.score(state.B)
    d = step * rng.standard_normal()
    lr = _k.mh_B_logratio(k, j, d, state.B, state.Lambda, state.gamma, state.alpha_b,
                          Om, stats.XtX, S)
    acc = math.log(rng.random()) < lr
    if acc:
        state.B[k, j] += d
    return state.B[k, j], bool(acc)


def mh_update_delta_element(state: ParamState, data, hp: Hyperparams, j: int, k: int,
                            step: float, rng: np.random.Generator):
    """One random-walk update of ``delta[j, k]`` with ``0 <= k < j`` (0-based).

    Returns ``(new_value, accepted)``.
    """
    if not (0 <= k < j < state.q):
        raise ParameterDomainError(f"need 0 <= k < j < q, got j={j}, k={k}")
    stats = data if isinstance(data, SufficientStats) else SufficientStats.from_dataset(data)
    G = stats.residual_gram(state.B)
    g = _k.delta_score(j, state.delta, G)
    d = step * rng.standard_normal()
    lr = _k.mh_delta_logratio(j, k, d, state.delta, state.tau, state.gamma, state.alpha_d, G, g)
    acc = math.log(rng.random()) < lr
    if acc:
        state.delta[j, k] += d
    return state.delta[j, k], bool(acc)


class MHSampler(BaseSampler):
    """Element-wise random-walk sampler; valid for any ``k2 >= 2``."""

    algorithm = "mh"

    def _setup(self):
        st = self.state
        sB, sD = _default_steps(st, self.stats)
        if self.ctl.step_B is not None:
            sB = np.broadcast_to(self.ctl.step_B, sB.shape).copy()
        if self.ctl.step_delta is not None:
            sD = np.where(np.tri(st.q, k=-1, dtype=bool),
                          np.broadcast_to(self.ctl.step_delta, sD.shape), 1.0)
        self.plan = MhSweepPlan(sB, sD)
        self._logB = np.log(self.plan.step_B)
        self._logD = np.log(self.plan.step_delta)
        self.accB = np.zeros(sB.shape, dtype=np.int64)
        self.accD = np.zeros(sD.shape, dtype=np.int64)
        self.n_sweeps = 0
        self.fused = True
        self._hpv = hp_vector(self.hp)

    def sweep(self, adapt_rate: float = 0.0) -> None:
        if self.order_log is None and self.fused:
            self._fused_sweep(adapt_rate)
        else:
            self._modular_sweep(adapt_rate)
        self.n_sweeps += 1

    def _fused_sweep(self, rate):
        st, stats, plan, ctl = self.state, self.stats, self.plan, self.ctl
        alphas = np.array([st.alpha_b, st.alpha_d])
        astep = np.array([ctl.step_alpha_b, ctl.step_alpha_d])
        aacc = np.zeros(2, dtype=np.int64)
        _k.mh_sweep(st.B, st.Lambda, st.delta, st.tau, st.gamma, alphas,
                    stats.XtX, stats.XtY, stats.YtY, float(stats.n), self._hpv,
                    plan.step_B, self._logB, self.accB, plan.step_delta, self._logD, self.accD,
                    astep, aacc, float(rate), ctl.target_accept, self.rng)
        st.alpha_b, st.alpha_d = float(alphas[0]), float(alphas[1])
        ctl.step_alpha_b, ctl.step_alpha_d = float(astep[0]), float(astep[1])
        ctl.tally("alpha_b", aacc[0])
        ctl.tally("alpha_d", aacc[1])

    def _modular_sweep(self, rate):
        st, hp, rng, stats = self.state, self.hp, self.rng, self.stats
        plan = self.plan
        target = self.ctl.target_accept

        gibbs_lambda(st, stats, hp, rng)
        self._log("Lambda")

        Om = omega_from(st.delta, st.gamma)
        S = stats.score(st.B)
        _k.k_mh_B(st.B, st.Lambda, st.gamma, st.alpha_b, Om, stats.XtX, S,
                  plan.step_B, self._logB, self.accB, float(rate), target, rng)
        self._log("B")

        _, acc = mh_alpha_b(st, stats, hp, self.ctl, rng)
        self._adapt_alpha("alpha_b", acc, rate)
        self._log("alpha_b")

        gibbs_tau(st, stats, hp, rng)
        self._log("tau")

        G = stats.residual_gram(st.B)
        _k.k_mh_delta(st.delta, st.tau, st.gamma, st.alpha_d, G, plan.step_delta, self._logD,
                      self.accD, float(rate), target, rng)
        self._log("delta")

        gibbs_gamma(st, stats, hp, rng, G=G)
        self._log("gamma")

        _, acc = mh_alpha_d(st, stats, hp, self.ctl, rng)
        self._adapt_alpha("alpha_d", acc, rate)
        self._log("alpha_d")

    def acceptance_rates(self) -> dict:
        out = self.ctl.rates()
        n = max(self.n_sweeps, 1)
        q = self.state.q
        out["B"] = float(self.accB.sum() / (n * self.accB.size))
        if q > 1:
            il = np.tril_indices(q, -1)
            out["delta"] = float(self.accD[il].sum() / (n * il[0].size))
        return out

    def step_sizes(self) -> dict:
        d = super().step_sizes()
        d["B"] = self.plan.step_B.copy()
        d["delta"] = self.plan.step_delta[np.tril_indices(self.state.q, -1)].copy()
        return d


def run_gmcb_mh(data: Dataset, hp: Hyperparams, ctl: MhControl | None, iters: int,
                burn_in: int, thin: int = 1, seed=None, *, state: ParamState | None = None,
                store_regularization: bool = False) -> ChainOutput:
    """Run the element-wise sampler from the deterministic initial state."""
    sampler = MHSampler(data, hp, ctl if ctl is not None else MhControl(), seed=seed, state=state)
    return sampler.run(iters, burn_in, thin, store_regularization=store_regularization)
