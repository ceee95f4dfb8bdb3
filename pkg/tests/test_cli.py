import csv
import json

import pytest

from prumidas.cli import main
from prumidas.config import load_config
from prumidas.data import read_panel
from prumidas.store import DrawStore

SCENARIO = """
[model]
n_countries = 2
freq_mismatch = 4
ar_lags = [4]
covariates = [{name = "solar_fc", freq = "high"}, {name = "gas", freq = "low"}]

[scenario]
n_days = 40
start = "2021-03-01"
countries = ["AA", "BB"]
seed = 3
"""

FIT = """
[model]
n_countries = 2
freq_mismatch = 4
ar_lags = [4]
covariates = [{name = "solar_fc", freq = "high"}, {name = "gas", freq = "low"}]

[sampler]
burn_in = 50
retained = 150
seed = 5
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scen.toml").write_text(SCENARIO)
    (root / "fit.toml").write_text(FIT)
    assert main(["simulate", "--scenario", str(root / "scen.toml"), "--out", str(root / "data")]) == 0
    assert main(["fit", "--config", str(root / "fit.toml"), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == 0
    return root


def rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def test_simulate_outputs(run):
    names = sorted(p.name for p in (run / "data").iterdir())
    assert names == ["daily.csv", "hourly_AA.csv", "hourly_BB.csv", "manifest.json", "truth.json"]
    man = json.loads((run / "data" / "manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 3
    assert len(man["inputs"]) == 1 and len(man["outputs"]) == 4


def test_fit_outputs(run):
    out = run / "run"
    store = DrawStore.load(out / "chain_0")
    assert store.n_draws == 150 and store.countries == ["AA", "BB"]
    assert load_config(out / "config.toml").sampler.seed == 5
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "fit" and man["config_hash"] == store.meta["config_hash"]
    assert len(man["inputs"]) == 4  # two hourly files, daily file, config


def test_reports(run):
    out = run / "run"
    assert main(["effects", str(out)]) == 0
    box = rows(out / "reports" / "effects_boxplot.csv")
    assert [(r["covariate"], r["country"]) for r in box] == [("solar_fc", "AA"), ("solar_fc", "BB"),
                                                             ("gas", "AA"), ("gas", "BB")]
    assert main(["volatility", str(out), "--aggregate", "hourly", "--statistic", "median"]) == 0
    assert len(rows(out / "reports" / "volatility_hourly.csv")) == 2 * 39 * 4
    assert main(["diagnose", str(out), "--all", "--out", str(run / "diag")]) == 0
    assert len(rows(run / "diag" / "diagnostics.csv")) == 4 + 1 + 2 * 4
    assert main(["summarize", str(out / "chain_0"), "--out", str(run / "summary")]) == 0
    common = json.loads((run / "summary" / "common_effects.json").read_text())
    assert list(common["gamma"]) == ["mu", "alpha_4", "beta_solar_fc", "beta_gas"]
    summary = json.loads((run / "summary" / "summary.json").read_text())
    assert set(summary["files"]) == {"effects_boxplot.csv", "effects_density.csv", "volatility_daily.csv",
                                     "diagnostics.csv"}
    assert (run / "summary" / "manifest.json").exists()


def test_unknown_covariate_exit_code(run):
    assert main(["effects", str(run / "run"), "--covariate", "wind"]) == 2


def test_missing_inputs_exit_code(tmp_path):
    assert main(["simulate", "--scenario", str(tmp_path / "none.toml"), "--out", str(tmp_path / "x")]) == 2
    assert main(["effects", str(tmp_path)]) == 2
    assert main(["fit", "--data", str(tmp_path / "nothing"), "--out", str(tmp_path / "r")]) == 2
    (tmp_path / "bad.toml").write_text("[model]\nn_countries = 0\n")
    assert main(["simulate", "--scenario", str(tmp_path / "bad.toml"), "--out", str(tmp_path / "x")]) == 2


def test_same_seed_same_draws(run, tmp_path):
    assert main(["fit", "--config", str(run / "fit.toml"), "--data", str(run / "data"),
                 "--out", str(tmp_path / "again")]) == 0
    a = (run / "run" / "chain_0" / "draws.bin").read_bytes()
    b = (tmp_path / "again" / "chain_0" / "draws.bin").read_bytes()
    assert a == b


def test_multiple_chains_and_window(run, tmp_path):
    out = tmp_path / "two"
    assert main(["fit", "--config", str(run / "fit.toml"), "--data", str(run / "data"), "--out", str(out),
                 "--chains", "2", "--retained", "20", "--burn-in", "5", "--no-random-effects",
                 "--from", "2021-03-05", "--to", "2021-03-20"]) == 0
    s0, s1 = DrawStore.load(out / "chain_0"), DrawStore.load(out / "chain_1")
    assert s0.n_draws == s1.n_draws == 20
    assert not s0.store_random_effects
    assert (s0.matrix != s1.matrix).any()
    dates = read_panel(out / "dataset").dates
    assert dates[0].isoformat() == "2021-03-05" and dates[-1].isoformat() == "2021-03-20"
