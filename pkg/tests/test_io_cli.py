import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from gmcb import cli
from gmcb import io as gio
from gmcb.errors import ConfigError, DataError, SamplerError
from gmcb.inference import ChainOutput
from gmcb.sampler_smn import SMNSampler


def write(path, text):
    path.write_text(text)
    return path


# ---------------------------------------------------------------- CSV


def test_csv_plain(tmp_path):
    m = gio.ingest_csv(write(tmp_path / "a.csv", "1,2\n3,4\n"))
    assert np.array_equal(m.values, [[1, 2], [3, 4]]) and m.header is None
    assert (m.n_rows, m.n_cols) == (2, 2)


def test_csv_header(tmp_path):
    m = gio.ingest_csv(write(tmp_path / "a.csv", "a,b\n1,2\n"))
    assert np.array_equal(m.values, [[1, 2]]) and m.header == ["a", "b"]


def test_csv_ragged(tmp_path):
    with pytest.raises(DataError, match="row 2"):
        gio.ingest_csv(write(tmp_path / "a.csv", "1,2\n3\n"))


def test_csv_non_numeric(tmp_path):
    with pytest.raises(DataError, match="row 2, column 2"):
        gio.ingest_csv(write(tmp_path / "a.csv", "1,2\n3,x\n"))


@pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
def test_csv_non_finite(tmp_path, cell):
    with pytest.raises(DataError, match="non-finite"):
        gio.ingest_csv(write(tmp_path / "a.csv", f"1,2\n3,{cell}\n"))


def test_csv_missing_and_empty(tmp_path):
    with pytest.raises(DataError):
        gio.ingest_csv(tmp_path / "none.csv")
    with pytest.raises(DataError):
        gio.ingest_csv(write(tmp_path / "e.csv", ""))
    with pytest.raises(DataError):
        gio.ingest_csv(write(tmp_path / "h.csv", "a,b\n"))


def test_csv_round_trip(tmp_path, rng):
    M = rng.normal(size=(7, 3))
    gio.write_csv_matrix(tmp_path / "m.csv", M, ["x", "y", "z"])
    back = gio.ingest_csv(tmp_path / "m.csv")
    assert np.array_equal(back.values, M) and back.header == ["x", "y", "z"]


# ---------------------------------------------------------------- chain files


def test_chain_round_trip(tmp_path, rng):
    S, p, q = 9, 2, 3
    ch = ChainOutput(rng.normal(size=(S, p, q)), rng.normal(size=(S, 3)), rng.uniform(1, 2, (S, q)),
                     rng.uniform(size=S), rng.uniform(size=S), algorithm="smn", iters=20,
                     burn_in=2, seed=5, Lambda=rng.uniform(size=(S, p, q)),
                     tau=rng.uniform(size=(S, 3)))
    man = gio.write_chain(tmp_path / "c.bin", ch, {"note": "x"})
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:5] == b"GMCB1" and len(raw) == 5 + 8 * S * man["row_length"]
    back, man2 = gio.read_chain(tmp_path / "c.bin")
    for name in ("B", "delta", "gamma", "alpha_b", "alpha_d", "Lambda", "tau"):
        assert np.array_equal(getattr(back, name), getattr(ch, name))
    assert back.seed == 5 and man2["note"] == "x"


def test_chain_bad_magic(tmp_path, rng):
    ch = ChainOutput(np.zeros((2, 1, 1)), np.zeros((2, 0)), np.ones((2, 1)), np.ones(2), np.ones(2))
    gio.write_chain(tmp_path / "c.bin", ch)
    data = bytearray((tmp_path / "c.bin").read_bytes())
    data[0:5] = b"XXXXX"
    (tmp_path / "c.bin").write_bytes(bytes(data))
    with pytest.raises(DataError, match="magic"):
        gio.read_chain(tmp_path / "c.bin")


def test_config_file_parsing(tmp_path):
    assert gio.load_config_file(write(tmp_path / "c.yaml", "sampler:\n  iters: 5\n")) == \
        {"sampler": {"iters": 5}}
    with pytest.raises(ConfigError):
        gio.load_config_file(write(tmp_path / "bad.json", "{"))
    with pytest.raises(ConfigError):
        gio.load_config_file(tmp_path / "missing.yaml")


# ---------------------------------------------------------------- config


def test_resolve_defaults_and_validation():
    cfg = cli.resolve_config({"data": {"Y": "y.csv"}, "sampler": {"iters": 100}})
    assert cfg["sampler"]["burn_in"] == 10 and cfg["hyperparameters"]["k2"] == 2.0
    with pytest.raises(ConfigError, match="unknown config key"):
        cli.resolve_config({"data": {"Y": "y.csv"}, "sampler": {"itres": 5}})
    with pytest.raises(ConfigError, match="GMCB-MH"):
        cli.resolve_config({"data": {"Y": "y.csv"}, "hyperparameters": {"k2": 4}})
    with pytest.raises(ConfigError):
        cli.resolve_config({"sampler": {"iters": 5}})
    with pytest.raises(ConfigError):
        cli.resolve_config({"data": {"Y": "y.csv"}, "sampler": {"iters": 5, "burn_in": 5}})
    mh = cli.resolve_config({"data": {"Y": "y.csv"}, "hyperparameters": {"k2": 4},
                             "sampler": {"algorithm": "mh"}})
    assert mh["hyperparameters"]["k2"] == 4


# ---------------------------------------------------------------- commands


@pytest.fixture
def scenario_dir(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["simulate", "--scenario", "2", "--seed", "3", "--n", "30",
                     "--out", str(out)]) == 0
    return out


def fit_config(tmp_path, data_dir, **sampler):
    cfg = {"data": {"Y": str(data_dir / "Y.csv"), "X": str(data_dir / "X.csv")},
           "sampler": {"iters": 300, "seed": 11, **sampler}}
    path = tmp_path / "fit.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_simulate_writes_truth(scenario_dir):
    truth = json.loads((scenario_dir / "truth.json").read_text())
    assert np.array(truth["Omega"]).shape == (5, 5)
    assert gio.ingest_csv(scenario_dir / "Y.csv").values.shape == (30, 5)


def test_fit_rerun_is_byte_identical(tmp_path, scenario_dir):
    cfg = fit_config(tmp_path, scenario_dir)
    assert cli.main(["fit", "--config", str(cfg), "--out", str(tmp_path / "r1")]) == 0
    resolved = tmp_path / "r1" / "config.resolved.json"
    assert cli.main(["fit", "--config", str(resolved), "--out", str(tmp_path / "r2")]) == 0
    for name in ("chain.bin", "chain.bin.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    s1 = json.loads((tmp_path / "r1" / "summary.json").read_text())
    s2 = json.loads((tmp_path / "r2" / "summary.json").read_text())
    s1.pop("metadata"), s2.pop("metadata")
    assert s1 == s2
    est = s1["estimates"]
    assert np.array(est["B_F"]).shape == (5, 5) and "intercept_F" in est
    assert np.all(np.array(est["interval_B"]["lower"]) <= np.array(est["interval_B"]["upper"]))


def test_fit_mh_and_estimate_diagnose(tmp_path, scenario_dir):
    cfg = fit_config(tmp_path, scenario_dir, algorithm="mh")
    run = tmp_path / "mh"
    yaml_cfg = yaml.safe_load(cfg.read_text())
    yaml_cfg["hyperparameters"] = {"k2": 4.0}
    cfg.write_text(yaml.safe_dump(yaml_cfg))
    assert cli.main(["fit", "--config", str(cfg), "--out", str(run)]) == 0
    chain = run / "chain.bin"
    assert cli.main(["estimate", "--chain", str(chain), "--level", "0.9",
                     "--truth", str(scenario_dir / "truth.json")]) == 0
    est = json.loads((run / "estimates.json").read_text())
    assert est["level"] == 0.9 and est["losses"]["F"]["frob_Omega"] >= 0
    assert cli.main(["diagnose", "--chain", str(chain), "--max-lag", "10"]) == 0
    acf = gio.ingest_csv(run / "acf.csv")
    assert acf.header[0] == "lag" and "B[0,0]" in acf.header and acf.values.shape[0] == 11
    assert np.allclose(acf.values[0, 1:], 1.0)


def test_intercept_only_fit(tmp_path, rng):
    y = tmp_path / "Y.csv"
    gio.write_csv_matrix(y, rng.normal(size=(25, 4)) + np.arange(4))
    assert cli.main(["fit", "--Y", str(y), "--iters", "200", "--out", str(tmp_path / "o")]) == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    # with no covariates the single coefficient row is the mean
    assert np.allclose(s["estimates"]["B_F"][0], np.arange(4), atol=1.0)
    assert "intercept_F" not in s["estimates"]


def test_exit_codes(tmp_path, scenario_dir, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"data": {"Y": str(scenario_dir / "Y.csv")},
                                   "hyperparameters": {"k2": 4}}))
    assert cli.main(["fit", "--config", str(bad)]) == 2
    assert "GMCB-MH" in capsys.readouterr().err
    ragged = write(tmp_path / "r.csv", "1,2\n3\n")
    assert cli.main(["fit", "--Y", str(ragged), "--out", str(tmp_path / "o")]) == 3
    short = tmp_path / "x.csv"
    gio.write_csv_matrix(short, np.ones((3, 2)))
    assert cli.main(["fit", "--Y", str(scenario_dir / "Y.csv"), "--X", str(short),
                     "--out", str(tmp_path / "o")]) == 3


def test_sampler_failure_salvages_partial_chain(tmp_path, scenario_dir, monkeypatch):
    original = SMNSampler.sweep
    calls = {"n": 0}

    def flaky(self, rate=0.0):
        calls["n"] += 1
        if calls["n"] > 100:
            raise SamplerError("injected failure")
        return original(self, rate)

    monkeypatch.setattr(SMNSampler, "sweep", flaky)
    cfg = fit_config(tmp_path, scenario_dir, burn_in=10)
    assert cli.main(["fit", "--config", str(cfg), "--out", str(tmp_path / "p")]) == 4
    chain, man = gio.read_chain(tmp_path / "p" / "chain.bin")
    assert man["partial"] and man["failed_sweep"] == 100 and chain.S == 90


def test_bench_command(tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bench", "--scenario", "2", "--reps", "2", "--iters", "100",
                     "--out", str(out)]) == 0
    table = (out / "loss_table.csv").read_text().splitlines()
    assert table[0] == "scenario,method,estimator,loss,mean,stderr,reps" and len(table) == 13


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "gmcb.cli", "simulate", "--scenario", "5",
                        "--out", str(tmp_path / "s5")], capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "s5" / "Y.csv").exists()
    assert not (tmp_path / "s5" / "X.csv").exists()
