import json
import subprocess
import sys

import pandas as pd
import pytest

import spajm.cli as cli
from spajm.config import Hyperpriors, SamplerConfig, serialize_model_config
from spajm.sampler import SamplerError
from spajm.simulate import study_model_spec

BUDGET = ["--iterations", "150", "--burnin", "30", "--thin", "1"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "sim.ini"
    ini.write_text("[simulation]\nn = 30\nseed = 5\nsetting = 1\n")
    assert run("simulate", "--config", ini, "--out", root / "sim") == 0
    conf = root / "sim" / "model.conf"
    sampler = SamplerConfig(iterations=150, burn_in=30, thinning=1, seed=3)
    conf.write_text(serialize_model_config(study_model_spec(1, map_ref="grid.gra"), Hyperpriors(), sampler))
    return root / "sim"


def _fit(sim, out, *extra):
    return run("fit", "--config", sim / "model.conf", "--long", sim / "long.csv", "--surv", sim / "surv.csv",
               "--out", out, *extra)


def test_simulate_outputs(sim, tmp_path):
    man = json.loads((sim / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 5 and man["n_subjects"] == 30
    assert pd.read_csv(sim / "surv.csv")["id"].nunique() == 30
    assert run("simulate", "--out", tmp_path / "s3", "--setting", 3, "--seed", 2) == 0
    truth = json.loads((tmp_path / "s3" / "truth.json").read_text())
    assert truth["geo_predictor"] == "eta_l"


def test_fit_is_deterministic(sim, tmp_path):
    assert _fit(sim, tmp_path / "a") == 0
    assert _fit(sim, tmp_path / "b") == 0
    a, b = (tmp_path / "a" / "draws.csv").read_bytes(), (tmp_path / "b" / "draws.csv").read_bytes()
    assert a == b
    assert len(pd.read_csv(tmp_path / "a" / "draws.csv")) == 120
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 3 and set(man["outputs"]) == {"draws.csv", "acceptance.json", "model.conf"}
    assert _fit(sim, tmp_path / "c", "--seed", 4) == 0
    assert (tmp_path / "c" / "draws.csv").read_bytes() != a


def test_summarize_with_truth(sim, tmp_path):
    assert _fit(sim, tmp_path / "fit") == 0
    assert run("summarize", "--fit", tmp_path / "fit", "--truth", sim / "truth.json",
               "--out", tmp_path / "sum") == 0
    summary = pd.read_csv(tmp_path / "sum" / "summary.csv")
    metrics = pd.read_csv(tmp_path / "sum" / "metrics.csv")
    functions = pd.read_csv(tmp_path / "sum" / "functions.csv")
    assert list(summary.columns) == ["parameter", "mean", "hdi_lo", "hdi_hi"]
    assert {"alpha", "ls.linear_x_ls1.0", "ls.mrf_region"} <= set(metrics["target"])
    assert metrics["mse"].ge(0).all() and metrics["covered"].between(0, 1).all()
    assert set(functions["effect"]) >= {"ls.pspline_x_ls2", "s.baseline"}


def test_augment(sim, tmp_path):
    assert run("augment", "--surv", sim / "surv.csv", "--long", sim / "long.csv", "--out", tmp_path,
               "--cuts", "quantiles:5") == 0
    ped = pd.read_csv(tmp_path / "ped.csv")
    surv = pd.read_csv(sim / "surv.csv")
    assert ped["delta"].sum() == surv["delta"].sum()


def test_exit_codes(sim, tmp_path, monkeypatch):
    assert _fit(sim, tmp_path / "x") == 0
    bad = tmp_path / "bad.conf"
    bad.write_text("[eta_ls]\nlinear(x_ls1\n")
    assert run("fit", "--config", bad, "--long", sim / "long.csv", "--surv", sim / "surv.csv",
               "--out", tmp_path / "o") == 2
    assert run("fit", "--config", sim / "model.conf", "--long", tmp_path / "nope.csv",
               "--surv", sim / "surv.csv", "--out", tmp_path / "o") == 3
    assert run("fit", "--config", tmp_path / "nope.conf", "--long", sim / "long.csv",
               "--surv", sim / "surv.csv", "--out", tmp_path / "o") == 3
    assert run("summarize", "--fit", tmp_path) == 3
    ini = tmp_path / "bad.ini"
    ini.write_text("[simulation]\nn = lots\n")
    assert run("simulate", "--config", ini, "--out", tmp_path / "s") == 2

    def boom(*a, **k):
        raise SamplerError("precision matrix is numerically singular", iteration=1)

    monkeypatch.setattr(cli, "run_design", boom)
    assert _fit(sim, tmp_path / "n") == 4


def test_benchmark_two_replications(tmp_path):
    assert run("benchmark", "--setting", 2, "--replications", 2, "--seed", 40, "--out", tmp_path, *BUDGET) == 0
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert list(metrics.columns) == ["setting", "replication", "seed", "target", "mse", "bias", "abs_bias", "covered"]
    assert sorted(metrics["seed"].unique()) == [40, 41]
    assert "s.mrf_region" in set(metrics["target"])
    box = pd.read_csv(tmp_path / "boxplot.csv")
    assert list(box.columns) == ["setting", "replication", "predictor", "target", "statistic", "value"]
    assert set(box["statistic"]) == {"mse", "bias", "covered"}
    assert (tmp_path / "rep_001" / "draws.csv").is_file()


def test_benchmark_failures_give_partial_code(tmp_path):
    conf = tmp_path / "m.conf"
    conf.write_text("[eta_ls]\nlinear(no_such_column)\n[eta_s]\nbaseline_pspline(t)\n")
    code = run("benchmark", "--setting", 1, "--replications", 1, "--config", conf, "--out", tmp_path / "b", *BUDGET)
    assert code == 5
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert len(man["failures"]) == 1


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "spajm.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
