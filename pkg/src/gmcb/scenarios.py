"""Simulation designs with known truth and the replication harness.

Scenarios 1-3 are low dimensional (``n=100, p=q=5``) with covariates drawn
from ``N_p(0, Sigma_X)``, ``Sigma_X[i, j] = 0.7^|i-j|``.  Scenario 4 is a
high-dimensional regression (``n=40, p=30, q=50``) with a clique precision
matrix; scenario 5 is an intercept-only mean/covariance problem
(``n=40, p=1, q=50``).

Every replication draws a fresh dataset (design, coefficients and errors)
from its own child of ``SeedSequence(seed)``, so results do not depend on
the number of worker processes.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .conditionals import MhControl
from .errors import ConfigError, GMCBError, ParameterDomainError, SamplerError
from .inference import (ChainOutput, bayes_estimates, interval_hits, losses, mle)
from .model import (Dataset, Hyperparams, build_cholesky_view, method_of_moments_gamma_prior,
                    modified_cholesky, preprocess)

__all__ = [
    "ScenarioSpec",
    "GroundTruth",
    "RunSettings",
    "ExperimentResult",
    "generate",
    "default_settings",
    "scenario_hyperparams",
    "run_loss_experiment",
    "run_coverage_experiment",
    "paired_one_sided_test",
    "write_table_csv",
]

_DIMS = {1: (100, 5, 5), 2: (100, 5, 5), 3: (100, 5, 5), 4: (40, 30, 50), 5: (40, 1, 50)}

MIX_DENSE = (1.0, 1.0, 40.0, 0.5)
MIX_SPARSE = (0.1, 1.0, 2.0, 0.01)

LOSS_NAMES = ("frob_B", "frob_Omega", "L_Q", "L_S")
TABLE_COLUMNS = ("scenario", "method", "estimator", "loss", "mean", "stderr", "reps")
MAX_FAILURE_SHARE = 0.05
_S4_RETRIES = 20


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario id, dimensions (``None`` means the design default), seed, replications."""

    id: int
    n: int | None = None
    p: int | None = None
    q: int | None = None
    seed: int = 0
    reps: int = 1

    def __post_init__(self):
        if self.id not in _DIMS:
            raise ConfigError(f"scenario id must be one of 1..5, got {self.id!r}")
        n0, p0, q0 = _DIMS[self.id]
        for name, default in (("n", n0), ("p", p0), ("q", q0)):
            v = getattr(self, name)
            v = default if v is None else int(v)
            if v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        if self.reps <= 0:
            raise ConfigError(f"reps must be positive, got {self.reps}")
        if self.id in (1, 2, 3) and self.q != 5:
            raise ConfigError(f"scenario {self.id} has a fixed 5x5 precision; q must be 5")
        if self.id == 4 and self.q < 3:
            raise ConfigError("scenario 4 needs q >= 3")
        if self.id == 5 and self.p != 1:
            raise ConfigError("scenario 5 is intercept-only; p must be 1")

    def replication_seeds(self) -> list:
        return np.random.SeedSequence(self.seed).spawn(self.reps)


@dataclass(frozen=True)
class GroundTruth:
    """True parameters; invariants are checked on construction."""

    B: np.ndarray
    Omega: np.ndarray
    Sigma: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        q = self.gamma.size
        if np.max(np.abs(self.Omega @ self.Sigma - np.eye(q))) > 1e-8:
            raise ParameterDomainError("true Omega and Sigma are not inverse to each other")
        view = build_cholesky_view(self.delta, self.gamma)
        if np.max(np.abs(view.Omega - self.Omega)) > 1e-10 * max(1.0, np.max(np.abs(self.Omega))):
            raise ParameterDomainError("true Omega does not match its Cholesky factors")


def _ar1(dim, rho):
    idx = np.arange(dim)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _truth_from_factors(B, delta, gamma, notes=None):
    view = build_cholesky_view(delta, gamma)
    return GroundTruth(B, view.Omega, view.covariance(), delta, gamma, notes or {})


def _truth_from_sigma(B, Sigma, notes=None):
    delta, gamma = modified_cholesky(Sigma)
    view = build_cholesky_view(delta, gamma)
    return GroundTruth(B, view.Omega, Sigma, delta, gamma, notes or {})


def _clique_omega(q, rng):
    """Unit diagonal, 0.75 within disjoint random 3-cliques."""
    n_cliques = min(16, q // 3)
    for attempt in range(_S4_RETRIES):
        perm = rng.permutation(q)[: 3 * n_cliques].reshape(n_cliques, 3)
        Om = np.eye(q)
        for c in perm:
            for i in c:
                for j in c:
                    if i != j:
                        Om[i, j] = 0.75
        if np.linalg.eigvalsh(Om)[0] > 1e-8:
            return Om, {"cliques": np.sort(perm, axis=1).tolist(), "regenerations": attempt}
    raise SamplerError("could not assemble a positive definite clique precision")


def _fgn_cov(q, hurst_exp=1.4):
    d = np.abs(np.arange(q)[:, None] - np.arange(q)[None, :]).astype(float)
    return 0.5 * (np.abs(d + 1) ** hurst_exp - 2 * d ** hurst_exp + np.abs(d - 1) ** hurst_exp)


def _truth(spec: ScenarioSpec, rng: np.random.Generator) -> GroundTruth:
    p, q = spec.p, spec.q
    if spec.id == 1:
        B = rng.normal(2.0, 0.001, (p, q))
        Sigma = np.full((q, q), 0.7)
        np.fill_diagonal(Sigma, 1.0)
        return _truth_from_sigma(B, Sigma)
    if spec.id == 2:
        B = rng.normal(5.0, 1.0, (p, q))
        n_zero = min(12, B.size)
        B.flat[rng.choice(B.size, n_zero, replace=False)] = 0.0
        delta = np.zeros((q, q))
        delta[np.arange(1, q), np.arange(q - 1)] = 0.7
        gamma = np.array([1.0] + [0.51] * (q - 1))
        return _truth_from_factors(B, delta, gamma)
    if spec.id == 3:
        B = np.zeros((p, q))
        n_nz = min(3, B.size)
        B.flat[rng.choice(B.size, n_nz, replace=False)] = rng.normal(15.0, 3.0, n_nz)
        delta = np.zeros((q, q))
        for j in range(1, q):
            k = j - 1
            delta[j, k] = 0.75 + 0.02 * (k + 1)  # 1-based column index in the design
            for lag, v in ((2, 0.4), (3, 0.2), (4, 0.1)):
                if j - lag >= 0:
                    delta[j, j - lag] = v
        gamma = np.array([0.5, 0.7, 1.0, 3.0, 5.0])
        return _truth_from_factors(B, delta, gamma)
    if spec.id == 4:
        B = np.zeros((p, q))
        n_nz = int(round(0.05 * B.size))
        idx = rng.choice(B.size, n_nz, replace=False)
        B.flat[idx] = rng.uniform(0.5, 2.0, n_nz) * np.where(rng.random(n_nz) < 0.5, -1.0, 1.0)
        Om, notes = _clique_omega(q, rng)
        Sigma = np.linalg.inv(Om)
        Sigma = 0.5 * (Sigma + Sigma.T)
        return _truth_from_sigma(B, Sigma, notes)
    # scenario 5
    C = np.full((q, q), 0.5)
    np.fill_diagonal(C, 1.0)
    mu = np.sort(rng.multivariate_normal(np.zeros(q), C, method="cholesky"))
    return _truth_from_sigma(mu[None, :], _fgn_cov(q))


def generate(spec: ScenarioSpec, rng: np.random.Generator):
    """Draw one raw dataset and its truth.

    Returns ``(Dataset, GroundTruth)``; the dataset is untransformed.
    Scenario 5 uses a column of ones as ``X``.
    """
    truth = _truth(spec, rng)
    n, p, q = spec.n, spec.p, spec.q
    if spec.id == 5:
        X = np.ones((n, 1))
    else:
        LX = np.linalg.cholesky(_ar1(p, 0.7))
        X = rng.standard_normal((n, p)) @ LX.T
    LS = np.linalg.cholesky(truth.Sigma)
    E = rng.standard_normal((n, q)) @ LS.T
    Y = X @ truth.B + E
    return Dataset(Y, X), truth


# ---------------------------------------------------------------------------
# run settings
# ---------------------------------------------------------------------------


@dataclass
class RunSettings:
    """How each replication is fitted.

    ``gamma_prior`` is ``"mom"`` (method of moments on each preprocessed
    dataset) or an explicit ``(a, b)``.  ``burn_in=None`` discards the first
    10% of ``iters``.
    """

    algorithm: str = "smn"
    iters: int = 25_000
    burn_in: int | None = None
    thin: int = 1
    hp: Hyperparams = field(default_factory=Hyperparams)
    gamma_prior: object = "mom"
    ctl: MhControl | None = None
    level: float = 0.95

    def __post_init__(self):
        if not callable(self.algorithm) and self.algorithm not in ("mh", "smn"):
            raise ConfigError(f"algorithm must be 'mh' or 'smn', got {self.algorithm!r}")
        if self.algorithm == "smn" and self.hp.k2 != 2.0:
            raise ConfigError("the SMN sampler requires k2 = 2; use GMCB-MH for k2 > 2")
        if self.burn_in is None:
            self.burn_in = self.iters // 10

    @property
    def method(self) -> str:
        name = self.algorithm if isinstance(self.algorithm, str) else "custom"
        return {"mh": "GMCB-MH", "smn": "GMCB-SMN"}.get(name, name)


def scenario_hyperparams(scenario_id: int, algorithm: str) -> Hyperparams:
    """Standard prior settings per design: ``k1=0.5``; ``k2`` is 2 (SMN) or 4 (MH)."""
    if scenario_id not in _DIMS:
        raise ConfigError(f"unknown scenario {scenario_id}")
    k2 = 2.0 if algorithm == "smn" else 4.0
    lam, tau = {1: (MIX_DENSE, MIX_DENSE), 2: (MIX_SPARSE, MIX_SPARSE),
                3: (MIX_SPARSE, MIX_DENSE), 4: (MIX_SPARSE, MIX_SPARSE),
                5: (MIX_DENSE, MIX_SPARSE)}[scenario_id]
    return Hyperparams(k1=0.5, k2=k2, lambda_mix=lam, tau_mix=tau)


def default_settings(scenario_id: int, algorithm: str = "smn", **overrides) -> RunSettings:
    """Standard iteration counts for each scenario and sampler."""
    if algorithm == "mh":
        iters = 150_000
    else:
        iters = {1: 25_000, 2: 25_000, 3: 27_500}.get(scenario_id, 50_000)
    kw = dict(algorithm=algorithm, iters=iters, hp=scenario_hyperparams(scenario_id, algorithm))
    kw.update(overrides)
    return RunSettings(**kw)


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------


def _fit(data: Dataset, hp: Hyperparams, settings: RunSettings, seed: int) -> ChainOutput:
    alg = settings.algorithm
    if callable(alg):
        return alg(data, hp, seed)
    if alg == "mh":
        from .sampler_mh import run_gmcb_mh
        return run_gmcb_mh(data, hp, settings.ctl, settings.iters, settings.burn_in,
                           settings.thin, seed=seed)
    from .sampler_smn import run_gmcb_smn
    return run_gmcb_smn(data, hp, settings.ctl, settings.iters, settings.burn_in,
                        settings.thin, seed=seed)


def _replicate(spec: ScenarioSpec, settings: RunSettings, r: int, ss: np.random.SeedSequence,
               want_mle: bool, want_coverage: bool) -> dict:
    data_ss, chain_ss = ss.spawn(2)
    raw, truth = generate(spec, np.random.default_rng(data_ss))
    if spec.id == 5:
        data, prep = preprocess(raw.Y, None)
    else:
        data, prep = preprocess(raw.Y, raw.X)
    out = {"rep": r}
    if want_mle:
        try:
            B_m, Om_m = mle(data)
            out["mle"] = losses((prep.coef_to_original(B_m), Om_m), (truth.B, truth.Omega))
        except GMCBError as exc:
            out["mle_error"] = str(exc)
    hp = settings.hp
    if isinstance(settings.gamma_prior, str):
        hp = hp.replace(gamma_prior=method_of_moments_gamma_prior(data))
    else:
        hp = hp.replace(gamma_prior=tuple(settings.gamma_prior))
    seed = int(chain_ss.generate_state(1, np.uint64)[0])
    t0 = time.perf_counter()
    try:
        chain = _fit(data, hp, settings, seed)
        est = bayes_estimates(chain, settings.level if want_coverage else None)
    except GMCBError as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out["seconds"] = time.perf_counter() - t0
    B_F, B_Q = prep.coef_to_original(est.B_F), prep.coef_to_original(est.B_Q)
    pair_truth = (truth.B, truth.Omega)
    out["F"] = losses((B_F, est.Omega_F), pair_truth)
    out["QS"] = losses((B_Q, est.Omega_S), pair_truth)
    out["acceptance"] = chain.acceptance
    if want_coverage:
        lo, hi = est.ci_B
        ciB = (prep.coef_to_original(lo), prep.coef_to_original(hi))
        out["cover_B"] = float(np.mean(interval_hits(ciB, truth.B)))
        # intervals left on the standardized-X scale, as a convention check
        out["cover_B_unmapped"] = float(np.mean(interval_hits((lo, hi), truth.B)))
        out["cover_Omega"] = float(np.mean(interval_hits(est.ci_Omega, truth.Omega)))
    return out


def _replicate_star(args):
    return _replicate(*args)


def _run_all(spec, settings, want_mle, want_coverage, jobs, progress=None):
    seeds = spec.replication_seeds()
    tasks = [(spec, settings, r, ss, want_mle, want_coverage) for r, ss in enumerate(seeds)]
    if jobs is not None and jobs > 1 and not callable(settings.algorithm):
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_replicate_star, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_replicate(*t))
            if progress is not None:
                progress(len(results), len(tasks))
    failed = [r for r in results if "error" in r]
    if len(failed) > MAX_FAILURE_SHARE * len(results):
        raise SamplerError(f"{len(failed)} of {len(results)} replications failed; "
                           f"first error: {failed[0]['error']}")
    return results, failed


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    """Aggregated table rows plus the per-replication values behind them."""

    rows: list
    per_rep: dict
    failures: list
    seconds: list

    def value(self, method: str, estimator: str, loss: str) -> float:
        for row in self.rows:
            if (row["method"], row["estimator"], row["loss"]) == (method, estimator, loss):
                return row["mean"]
        raise KeyError((method, estimator, loss))


def _row(scenario, method, estimator, loss, values):
    v = np.asarray(values, dtype=float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")
    return {"scenario": scenario, "method": method, "estimator": estimator, "loss": loss,
            "mean": float(np.mean(v)), "stderr": se, "reps": int(v.size)}


def run_loss_experiment(spec: ScenarioSpec, settings: RunSettings, reps: int | None = None,
                        *, jobs: int | None = None, include_mle: bool = True,
                        progress=None) -> ExperimentResult:
    """Average losses over replications for both estimator pairs and the MLE.

    ``per_rep`` maps ``(method, estimator, loss)`` to the per-replication
    values of successful replications, in replication order.
    """
    if reps is not None:
        spec = ScenarioSpec(spec.id, spec.n, spec.p, spec.q, spec.seed, reps)
    results, failed = _run_all(spec, settings, include_mle, False, jobs, progress)
    ok = [r for r in results if "error" not in r]
    per_rep = {}
    for est in ("F", "QS"):
        for i, name in enumerate(LOSS_NAMES):
            per_rep[(settings.method, est, name)] = np.array([r[est][i] for r in ok])
    if include_mle:
        mle_ok = [r for r in results if "mle" in r]
        for i, name in enumerate(LOSS_NAMES):
            per_rep[("MLE", "MLE", name)] = np.array([r["mle"][i] for r in mle_ok])
    rows = [_row(spec.id, m, e, l, v) for (m, e, l), v in per_rep.items() if v.size]
    return ExperimentResult(rows, per_rep, failed, [r["seconds"] for r in ok])


def run_coverage_experiment(spec: ScenarioSpec, settings: RunSettings, reps: int | None = None,
                            level: float | None = None, *, jobs: int | None = None,
                            progress=None) -> ExperimentResult:
    """Frequentist coverage of equal-tailed credible intervals.

    Coverage is averaged over the entries of ``B`` and, separately, over all
    ``q*q`` entries of ``Omega``.  ``coverage_B_unmapped`` compares intervals
    still on the standardized-X scale with the raw-scale truth; it is a
    convention check, not a valid coverage.
    """
    if reps is not None:
        spec = ScenarioSpec(spec.id, spec.n, spec.p, spec.q, spec.seed, reps)
    if level is not None:
        settings = RunSettings(**{**settings.__dict__, "level": level})
    results, failed = _run_all(spec, settings, False, True, jobs, progress)
    ok = [r for r in results if "error" not in r]
    per_rep = {(settings.method, "interval", "coverage_B"): np.array([r["cover_B"] for r in ok]),
               (settings.method, "interval", "coverage_Omega"):
                   np.array([r["cover_Omega"] for r in ok]),
               (settings.method, "interval", "coverage_B_unmapped"):
                   np.array([r["cover_B_unmapped"] for r in ok])}
    rows = [_row(spec.id, m, e, l, v) for (m, e, l), v in per_rep.items() if v.size]
    return ExperimentResult(rows, per_rep, failed, [r["seconds"] for r in ok])


def paired_one_sided_test(x, y) -> float:
    """p-value of ``H1: mean(x - y) < 0`` from a paired t-test."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape or x.size < 2:
        raise ParameterDomainError("paired samples must have equal length >= 2")
    return float(sps.ttest_rel(x, y, alternative="less").pvalue)


def write_table_csv(rows, path) -> None:
    """Write table rows with the fixed column set; atomic replace."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    os.replace(tmp, path)
