"""Updates shared by both samplers.

Gibbs draws for the regularisation parameters ``Lambda`` and ``tau`` and the
noise variances ``gamma``, and random-walk Metropolis updates for the two
penalty exponents.  Each function mutates the state in place and returns
the updated block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .errors import ConfigError
from .model import Hyperparams, ParamState, SufficientStats

__all__ = [
    "MhControl",
    "gibbs_lambda",
    "gibbs_tau",
    "gibbs_gamma",
    "mh_alpha_b",
    "mh_alpha_d",
    "alpha_b_logkernel",
    "alpha_d_logkernel",
    "gamma_conditional_params",
    "SMN_ALPHA_UPPER",
]

# exponents at or above this make the latent stable index reach one
SMN_ALPHA_UPPER = 2.0 - 1e-9


@dataclass
class MhControl:
    """Proposal scales and adaptation settings.

    ``step_B`` / ``step_delta`` override the per-element random-walk scales
    of the element-wise sampler (shapes (p, q) and (q, q)); ``None`` lets the
    sampler pick them from the initial state.  ``accept_counts`` maps each
    block to ``[accepted, proposed]``.
    """

    step_alpha_b: float = 0.1
    step_alpha_d: float = 0.1
    adapt: bool = True
    target_accept: float = 0.44
    adapt_decay: float = 0.6
    step_B: np.ndarray | None = None
    step_delta: np.ndarray | None = None
    accept_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.step_alpha_b > 0 and self.step_alpha_d > 0):
            raise ConfigError("alpha proposal steps must be positive")
        if not (0.1 < self.target_accept < 0.6):
            raise ConfigError("target_accept must lie in (0.1, 0.6)")
        if not (0.5 < self.adapt_decay <= 1.0):
            raise ConfigError("adapt_decay must lie in (0.5, 1]")
        for name in ("step_B", "step_delta"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                if np.any(v[np.isfinite(v)] <= 0):
                    raise ConfigError(f"{name} entries must be positive")
                setattr(self, name, v)

    def tally(self, block: str, accepted: int, proposed: int = 1) -> None:
        c = self.accept_counts.setdefault(block, [0, 0])
        c[0] += int(accepted)
        c[1] += int(proposed)

    def rates(self) -> dict:
        return {k: (a / n if n else float("nan")) for k, (a, n) in self.accept_counts.items()}

    def adapt_rate(self, sweep: int, burn_in: int) -> float:
        """Robbins-Monro gain for log step sizes; zero after burn-in."""
        if not self.adapt or sweep >= burn_in:
            return 0.0
        return (sweep + 1.0) ** (-self.adapt_decay)


def _stats(data) -> SufficientStats:
    return data if isinstance(data, SufficientStats) else SufficientStats.from_dataset(data)


def gibbs_lambda(state: ParamState, data, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Draw every ``Lambda[k, j]`` from its two-component gamma conditional."""
    e1, f1, e2, f2 = hp.lambda_mix
    _k.k_lambda(state.B, state.Lambda, state.gamma, state.alpha_b, e1, f1, e2, f2, rng)
    return state.Lambda


def gibbs_tau(state: ParamState, data, hp: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Draw every ``tau[j, k]`` (k < j) from its two-component gamma conditional."""
    s1, t1, s2, t2 = hp.tau_mix
    _k.k_tau(state.delta, state.tau, state.gamma, state.alpha_d, s1, t1, s2, t2, rng)
    return state.tau


def gamma_conditional_params(state: ParamState, data, hp: Hyperparams, G=None):
    """Inverse-gamma (shape, rate) vectors of the ``gamma`` conditionals."""
    stats = _stats(data)
    if G is None:
        G = stats.residual_gram(state.B)
    q = state.q
    rss = _k.seq_resnorm(G, state.delta)
    penb = _k.pen_B(state.B, state.Lambda, state.alpha_b)
    pend = _k.pen_D(state.delta, state.tau, state.alpha_d)
    a, b = hp.gamma_prior
    j = np.arange(q)
    shape = 0.5 * stats.n + state.p / state.alpha_b + j / state.alpha_d + a
    rate = 0.5 * (rss + penb + pend) + b
    return shape, rate


def gibbs_gamma(state: ParamState, data, hp: Hyperparams, rng: np.random.Generator,
                *, G: np.ndarray | None = None) -> np.ndarray:
    """Draw each ``gamma[j]`` from its inverse-gamma conditional.

    ``G`` is the residual Gram matrix ``(Y - XB)'(Y - XB)``; it is recomputed
    from ``data`` when omitted.
    """
    stats = _stats(data)
    if G is None:
        G = stats.residual_gram(state.B)
    rss = _k.seq_resnorm(G, state.delta)
    penb = _k.pen_B(state.B, state.Lambda, state.alpha_b)
    pend = _k.pen_D(state.delta, state.tau, state.alpha_d)
    a, b = hp.gamma_prior
    _k.k_gamma(rss, penb, pend, float(stats.n), float(state.p), state.alpha_b, state.alpha_d,
               a, b, state.gamma, rng)
    return state.gamma


def alpha_b_logkernel(alpha: float, state: ParamState, hp: Hyperparams) -> float:
    """Log conditional kernel of ``alpha_b`` (``-inf`` outside [k1, k2])."""
    if not (hp.k1 <= alpha <= hp.k2):
        return -math.inf
    return float(_k.logk_alpha_b(alpha, state.B, state.Lambda, state.gamma))


def alpha_d_logkernel(alpha: float, state: ParamState, hp: Hyperparams) -> float:
    """Log conditional kernel of ``alpha_d`` (``-inf`` outside [k1, k2])."""
    if not (hp.k1 <= alpha <= hp.k2):
        return -math.inf
    return float(_k.logk_alpha_d(alpha, state.delta, state.tau, state.gamma))


def mh_alpha_b(state: ParamState, data, hp: Hyperparams, ctl: MhControl,
               rng: np.random.Generator, *, upper: float | None = None):
    """Random-walk update of ``alpha_b``; proposals outside the support are rejected.

    ``upper`` tightens the support's right end (used by the scale-mixture
    sampler).  Returns ``(alpha_b, accepted)``.
    """
    hi = hp.k2 if upper is None else min(hp.k2, upper)
    new, acc = _k.k_mh_alpha_b(state.alpha_b, ctl.step_alpha_b, hp.k1, hi,
                               state.B, state.Lambda, state.gamma, rng)
    state.alpha_b = float(new)
    ctl.tally("alpha_b", acc)
    return state.alpha_b, bool(acc)


def mh_alpha_d(state: ParamState, data, hp: Hyperparams, ctl: MhControl,
               rng: np.random.Generator, *, upper: float | None = None):
    """Random-walk update of ``alpha_d``; see :func:`mh_alpha_b`."""
    hi = hp.k2 if upper is None else min(hp.k2, upper)
    new, acc = _k.k_mh_alpha_d(state.alpha_d, ctl.step_alpha_d, hp.k1, hi,
                               state.delta, state.tau, state.gamma, rng)
    state.alpha_d = float(new)
    ctl.tally("alpha_d", acc)
    return state.alpha_d, bool(acc)
