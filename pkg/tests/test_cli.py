import io
import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from swedge.cli import main
from swedge.datagen import GenParams, TrialDataset, canonical_curve, generate, replicate_seed
from swedge.weights import weight_profile

from conftest import BASE, noiseless


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def noiseless_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "flat.csv"
    noiseless(BASE, canonical_curve("d")).to_csv(path)
    return path


def test_weights_example():
    code, text = run("weights", "--sequences", "4", "--phi", "0")
    assert code == 0
    frame = pd.read_csv(io.StringIO(text))
    assert list(frame["s"]) == [1, 2, 3, 4]
    assert np.allclose(frame["weight"], [0.6, 0.3, 0.1, 0.0], atol=1e-15)
    assert "-0" not in text


def test_weights_full_precision():
    code, text = run("weights", "--sequences", "6", "--phi", "0.37")
    printed = pd.read_csv(io.StringIO(text))["weight"].to_numpy()
    assert np.allclose(printed, weight_profile(6, 0.37).as_array(), rtol=1e-12, atol=1e-15)


def test_weights_numeric_structures():
    code, text = run("weights", "--corr", "nested:0.1,0.05")
    w = pd.read_csv(io.StringIO(text))["weight"].to_numpy()
    assert code == 0 and len(w) == 3 and np.argmax(w) == 0
    assert run("weights", "--corr", "bogus:1")[0] == 1
    # out-of-range correlations are rejected as bad arguments
    assert run("weights", "--corr", "rte:0.9,0.9,-0.9")[0] == 1


@pytest.mark.parametrize("argv", [[], ["weights"], ["analyze"], ["weights", "--sequences", "x", "--phi", "0"],
                                  ["analyze", "--data", "f.csv", "--estimand", "tate:1"],
                                  ["analyze", "--data", "f.csv", "--model", "reti"],
                                  ["frobnicate"]])
def test_usage_errors_exit_1(argv):
    assert main(argv, out=io.StringIO()) == 1


def test_domain_errors_exit_2(tmp_path, noiseless_csv):
    assert run("weights", "--sequences", "4", "--phi", "1.5")[0] == 2
    bad = tmp_path / "bad.csv"
    bad.write_text(noiseless_csv.read_text().replace("outcome", "y", 1))
    assert run("analyze", "--data", str(bad))[0] == 2
    assert run("analyze", "--data", str(tmp_path / "missing.csv"))[0] == 2
    assert run("analyze", "--data", str(noiseless_csv), "--estimand", "pte:9")[0] == 2


def test_analyze_noiseless_exact(noiseless_csv):
    code, text = run("analyze", "--data", str(noiseless_csv), "--model", "eti", "--estimand", "tate:0:6")
    assert code == 0
    out = json.loads(text)
    truth = 0.5 * np.mean(canonical_curve("d").values)
    assert out["estimate"] == pytest.approx(truth, abs=1e-6)
    assert out["model"] == "ETI" and out["estimand"] == "TATE[0,6]"
    assert set(out) >= {"estimate", "se", "ci_lo", "ci_hi", "z", "p"}


def test_analyze_significant_digits(base_data, tmp_path):
    path = tmp_path / "d.csv"
    base_data.to_csv(path)
    _, text = run("analyze", "--data", str(path), "--model", "ncs:4", "--estimand", "lte")
    raw = text.split('"estimate":')[1].split(",")[0].strip()
    assert len(raw.replace("-", "").replace(".", "").lstrip("0")) >= 10


def test_curve_command(noiseless_csv):
    code, text = run("curve", "--data", str(noiseless_csv), "--model", "eti")
    frame = pd.read_csv(io.StringIO(text))
    assert code == 0 and list(frame.columns) == ["s", "estimate", "ci_lo", "ci_hi"]
    assert np.allclose(frame["estimate"], 0.5 * np.asarray(canonical_curve("d").values), atol=1e-6)


def test_analyze_mec(base_data, tmp_path):
    path = tmp_path / "d.csv"
    base_data.to_csv(path)
    argv = ["analyze", "--data", str(path), "--model", "mec", "--prior", "5,5,5,1,1,1",
            "--chains", "2", "--samples", "300", "--seed", "4"]
    code, text = run(*argv)
    out = json.loads(text)
    assert code == 0 and "rhat" in out and "acceptance" in out
    assert out["ci_lo"] <= out["estimate"] <= out["ci_hi"]
    assert run(*argv)[1] == text
    assert run(*argv[:5], "--prior", "1,1", "--seed", "4")[0] == 2


def test_mec_needs_seed(monkeypatch, noiseless_csv):
    monkeypatch.delenv("SWEDGE_SEED", raising=False)
    assert run("analyze", "--data", str(noiseless_csv), "--model", "mec")[0] == 1


def test_seed_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SWEDGE_SEED", "5")
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    common = ["simulate", "--scenario", "base", "--curves", "a", "--models", "eti", "--replicates", "3"]
    assert run(*common, "--out", str(a))[0] == 0
    assert run(*common, "--seed", "5", "--out", str(b))[0] == 0
    assert a.read_text() == b.read_text()
    monkeypatch.setenv("SWEDGE_SEED", "x")
    assert run(*common)[0] == 1
    monkeypatch.delenv("SWEDGE_SEED")
    assert run(*common)[0] == 1


def test_simulate_emit_data_roundtrip(tmp_path):
    out = tmp_path / "res.csv"
    code, _ = run("simulate", "--scenario", "reti", "--curves", "b", "--models", "eti,reti:3",
                  "--replicates", "2", "--seed", "7", "--out", str(out), "--emit-data", str(tmp_path / "data"))
    assert code == 0
    table = pd.read_csv(out)
    assert set(table["model"]) == {"ETI", "RETI-3"}
    files = sorted((tmp_path / "data").glob("*.csv"))
    assert [f.name for f in files] == ["reti_b_0000.csv", "reti_b_0001.csv"]
    again = generate(BASE, canonical_curve("b"), GenParams(), replicate_seed(7, 1))
    assert TrialDataset.read_csv(files[1]) == again


def test_simulate_bad_inputs():
    base = ["simulate", "--scenario", "base", "--seed", "1", "--replicates", "1"]
    assert run(*base, "--curves", "z")[0] == 1
    assert run(*base, "--models", "gee")[0] == 1
    assert run("simulate", "--scenario", "nope", "--seed", "1")[0] == 1


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "swedge.cli", "weights", "--sequences", "3", "--phi", "0.2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("s,weight")
    proc = subprocess.run([sys.executable, "-m", "swedge.cli"], capture_output=True, text=True)
    assert proc.returncode == 1
