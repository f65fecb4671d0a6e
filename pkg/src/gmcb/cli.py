"""Command-line front end.

Subcommands::

    gmcb simulate --scenario 2 --seed 1 --out data/
    gmcb fit --config fit.yaml --out run/
    gmcb estimate --chain run/chain.bin --level 0.9
    gmcb diagnose --chain run/chain.bin
    gmcb bench --scenario 2 --reps 10 --iters 5000 --jobs 4 --out bench/

Exit codes: 0 success, 2 configuration error, 3 data error, 4 sampler error.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import io as gio
from .conditionals import MhControl
from .errors import ConfigError, DataError, GMCBError, SamplerError
from .inference import (ChainOutput, batch_means_se, bayes_estimates, losses, multivariate_ess)
from .model import Hyperparams, Preprocessing, method_of_moments_gamma_prior, preprocess

__all__ = ["DEFAULT_CONFIG", "resolve_config", "fit_command", "build_parser", "main"]

DEFAULT_CONFIG = {
    "data": {"Y": None, "X": None, "center": True, "standardize": True},
    "hyperparameters": {
        "k1": 0.5,
        "k2": 2.0,
        "lambda_mix": [1.0, 1.0, 40.0, 0.5],
        "tau_mix": [1.0, 1.0, 40.0, 0.5],
        "gamma_prior": "method-of-moments",
    },
    "sampler": {
        "algorithm": "smn",
        "iters": 10_000,
        "burn_in": None,
        "thin": 1,
        "seed": 0,
        "adapt": True,
        "target_accept": 0.44,
        "step_alpha_b": 0.1,
        "step_alpha_d": 0.1,
        "step_B": None,
        "step_delta": None,
        "store_regularization": False,
    },
    "output": {"dir": "gmcb-out", "level": 0.95},
}

_MOM = ("method-of-moments", "mom")


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def resolve_config(raw: dict | None = None, *, base_dir=None, seed=None, out=None,
                   require_data: bool = True) -> dict:
    """Fill defaults, apply command-line overrides and validate.

    Relative data paths are resolved against ``base_dir``.  The result is
    self-contained: feeding it back reproduces the run exactly.
    """
    cfg = _merge(DEFAULT_CONFIG, raw or {})
    if seed is not None:
        cfg["sampler"]["seed"] = int(seed)
    if out is not None:
        cfg["output"]["dir"] = os.fspath(out)
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in ("Y", "X"):
        v = cfg["data"][key]
        if v is not None:
            cfg["data"][key] = os.fspath((base / v).resolve())
    if require_data and cfg["data"]["Y"] is None:
        raise ConfigError("data.Y is required")

    s = cfg["sampler"]
    if s["algorithm"] not in ("mh", "smn"):
        raise ConfigError(f"sampler.algorithm must be 'mh' or 'smn', got {s['algorithm']!r}")
    for key in ("iters", "thin", "seed"):
        if not isinstance(s[key], int) or isinstance(s[key], bool):
            raise ConfigError(f"sampler.{key} must be an integer")
    if s["iters"] <= 0 or s["thin"] <= 0:
        raise ConfigError("sampler.iters and sampler.thin must be positive")
    if s["burn_in"] is None:
        s["burn_in"] = s["iters"] // 10
    if not (isinstance(s["burn_in"], int) and 0 <= s["burn_in"] < s["iters"]):
        raise ConfigError("sampler.burn_in must be an integer in [0, iters)")

    h = cfg["hyperparameters"]
    gp = h["gamma_prior"]
    if isinstance(gp, str):
        if gp not in _MOM:
            raise ConfigError(f"hyperparameters.gamma_prior must be [a, b] or "
                              f"'method-of-moments', got {gp!r}")
        h["gamma_prior"] = "method-of-moments"
    hp = _hyperparams(cfg, (3.0, 1.0))  # validates the numeric block
    if s["algorithm"] == "smn" and hp.k2 != 2.0:
        raise ConfigError(f"algorithm 'smn' (GMCB-SMN) requires k2 = 2, got k2 = {hp.k2}; "
                          "use algorithm 'mh' (GMCB-MH) for k2 > 2")
    MhControl(step_alpha_b=s["step_alpha_b"], step_alpha_d=s["step_alpha_d"],
              adapt=bool(s["adapt"]), target_accept=s["target_accept"],
              step_B=s["step_B"], step_delta=s["step_delta"])
    level = cfg["output"]["level"]
    if not (isinstance(level, (int, float)) and 0.0 < level < 1.0):
        raise ConfigError("output.level must lie in (0, 1)")
    return cfg


def _hyperparams(cfg, gamma_prior) -> Hyperparams:
    h = cfg["hyperparameters"]
    gp = h["gamma_prior"]
    gp = gamma_prior if isinstance(gp, str) else tuple(gp)
    try:
        return Hyperparams(k1=h["k1"], k2=h["k2"], lambda_mix=tuple(h["lambda_mix"]),
                           tau_mix=tuple(h["tau_mix"]), gamma_prior=gp)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid hyperparameters: {exc}") from None


def _control(cfg) -> MhControl:
    s = cfg["sampler"]
    return MhControl(step_alpha_b=s["step_alpha_b"], step_alpha_d=s["step_alpha_d"],
                     adapt=bool(s["adapt"]), target_accept=s["target_accept"],
                     step_B=s["step_B"], step_delta=s["step_delta"])


def _load_data(cfg):
    d = cfg["data"]
    Y = gio.ingest_csv(d["Y"], "Y")
    X = None
    if d["X"] is not None:
        X = gio.ingest_csv(d["X"], "X")
        if X.n_rows != Y.n_rows:
            raise DataError(f"X has {X.n_rows} rows but Y has {Y.n_rows}")
    if X is None:
        data, prep = preprocess(Y.values, None)
    else:
        data, prep = preprocess(Y.values, X.values, center=bool(d["center"]),
                                standardize=bool(d["standardize"]))
    return data, prep, Y, X


def _prep_from_dict(d: dict) -> Preprocessing:
    f = (lambda v: None if v is None else np.asarray(v, dtype=float))
    return Preprocessing(f(d.get("y_mean")), f(d.get("x_mean")), f(d.get("x_scale")))


def _estimates_on_original_scale(chain: ChainOutput, prep: Preprocessing, level: float) -> dict:
    est = bayes_estimates(chain, level)
    back = prep.coef_to_original
    out = {
        "B_F": back(est.B_F), "B_Q": back(est.B_Q),
        "Omega_F": est.Omega_F, "Omega_S": est.Omega_S,
        "level": level,
        "interval_B": {"lower": back(est.ci_B[0]), "upper": back(est.ci_B[1])},
        "interval_Omega": {"lower": est.ci_Omega[0], "upper": est.ci_Omega[1]},
    }
    if prep.y_mean is not None:
        xm = prep.x_mean if prep.x_mean is not None else np.zeros(chain.p)
        out["intercept_F"] = prep.y_mean - xm @ out["B_F"]
        out["intercept_Q"] = prep.y_mean - xm @ out["B_Q"]
    return out, est


def _mess(chain: ChainOutput):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            m = multivariate_ess(chain)
            res = {"ess": m.ess, "batch_size": m.batch_size, "repaired": m.repaired}
        except GMCBError as exc:
            res = {"ess": None, "error": str(exc)}
    res["warnings"] = [str(w.message) for w in caught]
    return res


def fit_command(cfg: dict) -> dict:
    """Run one fit from a resolved config and write its outputs.

    Writes ``chain.bin`` (+ ``chain.bin.json``), ``summary.json`` and
    ``config.resolved.json`` into ``cfg['output']['dir']``.
    """
    out_dir = Path(cfg["output"]["dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    data, prep, Y, X = _load_data(cfg)
    gp = cfg["hyperparameters"]["gamma_prior"]
    gamma_prior = method_of_moments_gamma_prior(data) if isinstance(gp, str) else tuple(gp)
    hp = _hyperparams(cfg, gamma_prior)
    gio.write_json(out_dir / "config.resolved.json", cfg)
    s = cfg["sampler"]
    if s["algorithm"] == "smn":
        from .sampler_smn import SMNSampler as Sampler
    else:
        from .sampler_mh import MHSampler as Sampler
    sampler = Sampler(data, hp, _control(cfg), seed=s["seed"])
    extra = {"preprocessing": prep.to_dict(), "hyperparameters": hp.to_dict(),
             "n": data.n, "y_header": Y.header, "x_header": None if X is None else X.header,
             "partial": False}
    t0 = time.perf_counter()
    try:
        chain = sampler.run(s["iters"], s["burn_in"], s["thin"],
                            store_regularization=bool(s["store_regularization"]))
    except SamplerError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            gio.write_chain(out_dir / "chain.bin", partial,
                            {**extra, "partial": True, "failed_sweep": exc.sweep})
            exc.args = (f"{exc} (partial chain with {partial.S} draws salvaged to "
                        f"{out_dir / 'chain.bin'})",)
        raise
    seconds = time.perf_counter() - t0
    gio.write_chain(out_dir / "chain.bin", chain, extra)
    est, _ = _estimates_on_original_scale(chain, prep, cfg["output"]["level"])
    summary = {
        "estimates": est,
        "hyperparameters": hp.to_dict(),
        "acceptance": chain.acceptance,
        "multivariate_ess": _mess(chain),
        "draws": chain.S,
        "diagnostics": chain.diagnostics,
        "metadata": {"wall_clock_seconds": seconds},
    }
    gio.write_json(out_dir / "summary.json", summary)
    return summary


def _estimate_command(args) -> int:
    chain, man = gio.read_chain(args.chain)
    prep = _prep_from_dict(man.get("preprocessing", {}))
    est, bundle = _estimates_on_original_scale(chain, prep, args.level)
    if args.truth:
        truth = gio.read_json(args.truth)
        T = (np.asarray(truth["B"]), np.asarray(truth["Omega"]))
        est["losses"] = {
            "F": losses((est["B_F"], est["Omega_F"]), T)._asdict(),
            "QS": losses((est["B_Q"], est["Omega_S"]), T)._asdict(),
        }
    out = Path(args.out) if args.out else Path(args.chain).parent
    out.mkdir(parents=True, exist_ok=True)
    gio.write_json(out / "estimates.json", est)
    print(f"wrote {out / 'estimates.json'}")
    return 0


def _acf(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = x - x.mean()
    n = x.size
    denom = x @ x
    if denom == 0:
        return np.ones(max_lag + 1)
    return np.array([(x[: n - k] @ x[k:]) / denom for k in range(max_lag + 1)])


def _diagnose_command(args) -> int:
    chain, man = gio.read_chain(args.chain)
    out = Path(args.out) if args.out else Path(args.chain).parent
    out.mkdir(parents=True, exist_ok=True)
    se_B = batch_means_se(chain.B)
    Om = np.concatenate([chain.omega_samples(sl) for sl in chain.chunks()])
    se_Om = batch_means_se(Om)
    report = {"draws": chain.S, "acceptance": chain.acceptance, "step_sizes": chain.step_sizes,
              "multivariate_ess": _mess(chain), "mcse_B": se_B, "mcse_Omega": se_Om,
              "partial": man.get("partial", False)}
    gio.write_json(out / "diagnostics.json", report)
    max_lag = min(args.max_lag, chain.S - 1)
    series = {"alpha_b": chain.alpha_b, "alpha_d": chain.alpha_d}
    for j in range(chain.q):
        series[f"gamma[{j}]"] = chain.gamma[:, j]
    for k in range(min(chain.p, 2)):
        for j in range(min(chain.q, 2)):
            series[f"B[{k},{j}]"] = chain.B[:, k, j]
    for i in range(min(chain.delta.shape[1], 3)):
        series[f"delta_packed[{i}]"] = chain.delta[:, i]
    names = list(series)
    acf = np.column_stack([np.arange(max_lag + 1)] + [_acf(series[n], max_lag) for n in names])
    gio.write_csv_matrix(out / "acf.csv", acf, ["lag"] + names)
    print(f"wrote {out / 'diagnostics.json'} and {out / 'acf.csv'}")
    return 0


def _simulate_command(args) -> int:
    from .scenarios import ScenarioSpec, generate

    spec = ScenarioSpec(args.scenario, args.n, args.p, args.q, seed=args.seed or 0)
    data, truth = generate(spec, np.random.default_rng(np.random.SeedSequence(spec.seed)))
    out = Path(args.out or f"scenario{args.scenario}")
    out.mkdir(parents=True, exist_ok=True)
    gio.write_csv_matrix(out / "Y.csv", data.Y)
    if spec.id != 5:
        gio.write_csv_matrix(out / "X.csv", data.X)
    gio.write_json(out / "truth.json", {"scenario": spec.id, "seed": spec.seed, "B": truth.B,
                                        "Omega": truth.Omega, "Sigma": truth.Sigma,
                                        "delta": truth.delta, "gamma": truth.gamma,
                                        "notes": truth.notes})
    print(f"wrote scenario {spec.id} data to {out}")
    return 0


def _fit_command(args) -> int:
    raw, base = {}, None
    if args.config:
        raw = gio.load_config_file(args.config)
        base = Path(args.config).resolve().parent
    if args.Y or args.X:
        raw.setdefault("data", {})
        if args.Y:
            raw["data"]["Y"] = os.path.abspath(args.Y)
        if args.X:
            raw["data"]["X"] = os.path.abspath(args.X)
    if args.algorithm:
        raw.setdefault("sampler", {})["algorithm"] = args.algorithm
    if args.iters:
        raw.setdefault("sampler", {})["iters"] = args.iters
    cfg = resolve_config(raw, base_dir=base, seed=args.seed, out=args.out)
    summary = fit_command(cfg)
    ess = summary["multivariate_ess"].get("ess")
    print(f"{summary['draws']} draws written to {cfg['output']['dir']}"
          + (f"; multivariate ESS {ess:.0f}" if ess else ""))
    return 0


def _bench_command(args) -> int:
    from .scenarios import (ScenarioSpec, default_settings, run_coverage_experiment,
                            run_loss_experiment, write_table_csv)

    spec = ScenarioSpec(args.scenario, seed=args.seed or 0, reps=args.reps)
    over = {}
    if args.iters:
        over["iters"] = args.iters
    if args.burn_in is not None:
        over["burn_in"] = args.burn_in
    settings = default_settings(args.scenario, args.algorithm, **over)
    out = Path(args.out or f"bench-scenario{args.scenario}")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = run_loss_experiment(spec, settings, jobs=args.jobs)
    write_table_csv(res.rows, out / "loss_table.csv")
    report = {"failures": res.failures, "seconds_per_rep": res.seconds}
    if args.coverage:
        cov = run_coverage_experiment(spec, settings, jobs=args.jobs)
        write_table_csv(cov.rows, out / "coverage_table.csv")
        report["coverage_failures"] = cov.failures
    report["metadata"] = {"wall_clock_seconds": time.perf_counter() - t0}
    gio.write_json(out / "bench.json", report)
    for row in res.rows:
        print(f"{row['method']:>9} {row['estimator']:>3} {row['loss']:>10} "
              f"{row['mean']:.4f} (se {row['stderr']:.4f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override the random seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    common.add_argument("--out", help="output directory")

    ap = argparse.ArgumentParser(prog="gmcb", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a scenario dataset and its truth")
    p.add_argument("--scenario", type=int, required=True, choices=range(1, 6))
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.set_defaults(func=_simulate_command)

    p = sub.add_parser("fit", parents=[common], help="run a sampler on CSV data")
    p.add_argument("--Y", help="response CSV (overrides data.Y)")
    p.add_argument("--X", help="covariate CSV (overrides data.X); omit for intercept-only")
    p.add_argument("--algorithm", choices=("mh", "smn"))
    p.add_argument("--iters", type=int)
    p.set_defaults(func=_fit_command)

    p = sub.add_parser("estimate", parents=[common], help="point estimates and intervals")
    p.add_argument("--chain", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--truth", help="truth.json from 'simulate', to report losses")
    p.set_defaults(func=_estimate_command)

    p = sub.add_parser("diagnose", parents=[common], help="ESS, MC errors, autocorrelations")
    p.add_argument("--chain", required=True)
    p.add_argument("--max-lag", type=int, default=50)
    p.set_defaults(func=_diagnose_command)

    p = sub.add_parser("bench", parents=[common], help="replicated loss experiment")
    p.add_argument("--scenario", type=int, required=True, choices=range(1, 6))
    p.add_argument("--algorithm", choices=("mh", "smn"), default="smn")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--coverage", action="store_true", help="also run the coverage experiment")
    p.set_defaults(func=_bench_command)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GMCBError as exc:
        print(f"gmcb {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
