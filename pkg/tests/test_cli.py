import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml

from longtmle import read_csv
from longtmle.cli import main

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "--scenario", "default", "--n", "400", "--seed", "3", "--out",
                 str(d / "long.csv"), "--truth", str(d / "truth.json")]) == 0
    assert main(["simulate", "--n", "150", "--seed", "3", "--daily", "--unit", "30",
                 "--out", str(d / "daily.csv")]) == 0
    cfg = {"input": {"long": "long.csv"}, "time_unit": "90 days",
           "summary_map": {"baseline": [], "current": ["w", "a1c"]},
           "g": {"summary_map": {"baseline": [], "current": ["w", "a1c"]}},
           "t0_grid": [0, 2, 4, 7], "ipw_bootstrap": 30}
    (d / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    return d


def test_simulate_outputs(workdir):
    ds = read_csv(workdir / "long.csv")
    assert ds.n_subjects == 400
    truth = json.loads((workdir / "truth.json").read_text())
    assert len(truth) == 4 * 8 and all(e["method"] == "exact-enumeration" for e in truth)


def test_coarsen_round_trip(workdir):
    out = workdir / "coarse.csv"
    assert main(["coarsen", "--unit", "30", "--max-intervals", "8", "--in", str(workdir / "daily.csv"),
                 "--out", str(out)]) == 0
    ds = read_csv(out)
    assert ds.n_subjects == 150 and ds.max_t <= 7
    assert {"a1c_imp", "w_imp"} <= set(ds.covariate_names)


def test_estimate_and_report(workdir):
    run = workdir / "run1"
    assert main(["estimate", "--config", str(workdir / "cfg.yaml"), "--out", str(run), "--report"]) == 0
    est = json.loads((run / "estimates.json").read_text())
    assert len(est["estimates"]) == 2 * 4 * 4
    assert len(est["risk_differences"]) == 2 * 6 * 4
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["complete"] and len(manifest["config_sha256"]) == 64
    for name in ("risk_tmle.png", "risk_ipw.png", "rd_tmle.png", "weights_tmle.png", "estimates.csv"):
        assert (run / "report" / name).stat().st_size > 0
    out = workdir / "rep2"
    assert main(["report", "--run", str(run), "--out", str(out)]) == 0
    assert (out / "risk_tmle.png").exists()
    assert pd.read_csv(out / "estimates.csv").shape[0] == 32


def test_estimate_is_deterministic(workdir):
    a, b = workdir / "d1", workdir / "d2"
    args = ["estimate", "--config", str(workdir / "cfg.yaml"), "--t0-grid", "3", "--theta", "7.5", "--theta", "8.0"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--n-jobs", "2"]) == 0
    assert (a / "estimates.json").read_bytes() == (b / "estimates.json").read_bytes()


def test_missing_column_aborts_with_record(workdir, capsys):
    cfg = yaml.safe_load((workdir / "cfg.yaml").read_text())
    cfg["biomarker"] = "hba1c"
    (workdir / "bad.yaml").write_text(yaml.safe_dump(cfg))
    run = workdir / "bad"
    assert main(["estimate", "--config", str(workdir / "bad.yaml"), "--out", str(run)]) == 1
    err = json.loads((run / "error.json").read_text())
    assert err["error"] == "SchemaError" and "hba1c" in err["message"]
    assert "hba1c" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [{"estimators": ["tmle"]}, {"input": {"long": "x.csv"}, "estimators": ["foo"]},
                                 {"input": {"long": "x.csv"}, "q": {"mode": "joint"}}])
def test_bad_config_exit_two(workdir, cfg):
    p = workdir / "badcfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert main(["estimate", "--config", str(p)]) == 2


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "longtmle.cli", "simulate", "--n", "20", "--out",
                        str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run([sys.executable, "-m", "longtmle.cli", "coarsen", "--unit", "30"], capture_output=True)
    assert r.returncode == 2


def test_example_config_parses():
    from longtmle.pipeline import AnalysisConfig

    cfg = AnalysisConfig.load(ROOT / "configs" / "example.yaml")
    assert len(cfg.regimes) == 4 and cfg.raw["t0_grid"] == list(range(8))
