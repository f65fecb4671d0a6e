"""Machinery shared by the two samplers: state set-up, storage, run loop."""

from __future__ import annotations

import copy

import numpy as np

from .conditionals import MhControl
from .errors import ConfigError, SamplerError
from .inference import ChainOutput
from .model import Dataset, Hyperparams, ParamState, SufficientStats, initial_state


def _check_run_args(iters, burn_in, thin):
    if not (isinstance(iters, (int, np.integer)) and iters > 0):
        raise ConfigError(f"iters must be a positive integer, got {iters!r}")
    if not (0 <= burn_in < iters):
        raise ConfigError(f"need 0 <= burn_in < iters, got burn_in={burn_in}, iters={iters}")
    if not (thin >= 1):
        raise ConfigError(f"thin must be >= 1, got {thin}")


def check_initial(state: ParamState) -> None:
    blocks = {"B": state.B, "Lambda": state.Lambda, "delta": state.delta, "tau": state.tau,
              "gamma": state.gamma,
              "alpha": np.array([state.alpha_b, state.alpha_d])}
    for name, arr in blocks.items():
        if not np.all(np.isfinite(arr)):
            raise SamplerError(f"initialization produced non-finite values in block {name}")
    if np.any(state.gamma <= 0):
        raise SamplerError("initialization produced non-positive gamma")


class BaseSampler:
    """One chain.  Subclasses implement :meth:`sweep`."""

    algorithm = ""
    alpha_upper: float | None = None

    def __init__(self, data: Dataset, hp: Hyperparams, ctl: MhControl | None = None,
                 rng: np.random.Generator | None = None, state: ParamState | None = None,
                 seed=None):
        self.hp = hp
        # private copy: adaptation and tallies mutate the control block
        self.ctl = copy.deepcopy(ctl) if ctl is not None else MhControl()
        self.ctl.accept_counts = {}
        self.seed = seed
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.order_log: list | None = None
        self.set_data(data)
        if state is None:
            state = initial_state(data, hp, self.alpha_upper)
        else:
            state = state.copy()
        check_initial(state)
        self.state = state
        self._setup()

    def set_data(self, data: Dataset) -> None:
        """Swap in a new dataset with the same dimensions (used by joint tests)."""
        self.data = data
        self.stats = SufficientStats.from_dataset(data)
        self._data_changed()

    def _data_changed(self) -> None:
        pass

    def _setup(self) -> None:
        pass

    def _log(self, name: str) -> None:
        if self.order_log is not None:
            self.order_log.append(name)

    def sweep(self, adapt_rate: float = 0.0) -> None:
        raise NotImplementedError

    def step_sizes(self) -> dict:
        return {"alpha_b": self.ctl.step_alpha_b, "alpha_d": self.ctl.step_alpha_d}

    def _adapt_alpha(self, name, accepted, rate):
        if rate:
            target = self.ctl.target_accept
            attr = "step_" + name
            v = getattr(self.ctl, attr) * np.exp(rate * (float(accepted) - target))
            setattr(self.ctl, attr, float(min(max(v, 1e-6), 10.0)))

    def run(self, iters: int, burn_in: int, thin: int = 1, *, store_regularization: bool = False,
            progress=None) -> ChainOutput:
        _check_run_args(iters, burn_in, thin)
        st = self.state
        p, q = st.p, st.q
        m = q * (q - 1) // 2
        il = np.tril_indices(q, -1)
        keep = range(burn_in, iters, thin)
        S = len(keep)
        Bs = np.empty((S, p, q))
        Ds = np.empty((S, m))
        Gs = np.empty((S, q))
        ab = np.empty(S)
        ad = np.empty(S)
        Ls = np.empty((S, p, q)) if store_regularization else None
        Ts = np.empty((S, m)) if store_regularization else None
        s = 0

        def output(k, done):
            return ChainOutput(Bs[:k], Ds[:k], Gs[:k], ab[:k], ad[:k], algorithm=self.algorithm,
                               iters=done, burn_in=burn_in, thin=thin, seed=self.seed,
                               acceptance=self.acceptance_rates(), step_sizes=self.step_sizes(),
                               Lambda=None if Ls is None else Ls[:k],
                               tau=None if Ts is None else Ts[:k], diagnostics=self.diagnostics())

        for t in range(iters):
            try:
                self.sweep(self.ctl.adapt_rate(t, burn_in))
            except SamplerError as exc:
                # keep what was stored so far for salvage by the caller
                exc.partial = output(s, t) if s >= 2 else None
                exc.sweep = t
                raise
            if t >= burn_in and (t - burn_in) % thin == 0:
                st = self.state
                Bs[s] = st.B
                Ds[s] = st.delta[il]
                Gs[s] = st.gamma
                ab[s] = st.alpha_b
                ad[s] = st.alpha_d
                if store_regularization:
                    Ls[s] = st.Lambda
                    Ts[s] = st.tau[il]
                s += 1
            if progress is not None:
                progress(t)
        return output(S, iters)

    def acceptance_rates(self) -> dict:
        return self.ctl.rates()

    def diagnostics(self) -> dict:
        return {}
