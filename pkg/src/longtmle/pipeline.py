"""Config-driven analysis run: load or simulate, fit g, estimate, write artifacts."""
from __future__ import annotations

import copy
import datetime as _dt
import hashlib
import itertools
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .coarsen import CoarsenConfig, coarsen_dataset, read_daily_csv
from .data_model import LongDataset, SummaryMap, read_csv, require_valid
from .errors import LongTmleError, PositivityError, SchemaError
from .inference import EstimateReport, RdResult, WaldResult, risk_difference, wald
from .ipw import ipw_estimate
from .learners import LearnerSpec
from .oracle import continuous_scenario, default_scenario, simulate
from .propensity import GConfig, compute_weights, fit_g, weight_summary
from .regimes import DEFAULT_THETAS, Regime
from .superlearner import CvPlan
from .tmle import FailedFit, QConfig, survival_curve

log = logging.getLogger(__name__)

SCENARIOS = {"default": default_scenario, "continuous": continuous_scenario}

DEFAULTS = {
    "input": {"long": None, "daily": None, "simulate": None},
    "coarsen": {"time_unit_days": 90, "max_intervals": 8, "aggregation": "any"},
    "time_unit": "interval",
    "biomarker": "a1c",
    "threshold_inclusive": False,
    "regimes": [{"theta": t} for t in DEFAULT_THETAS],
    "summary_map": {"baseline": None, "current": None, "lags": [], "lag_treatment": True},
    "g": {"strategy": "parametric", "learner": {"family": "logistic-glm"}, "library": [],
          "time_bin_width": None, "summary_map": None},
    "q": {"strategy": "parametric", "learner": {"family": "logistic-glm"}, "library": [],
          "mode": "stratified", "q_min": 1e-5},
    "weights": {"tmle_truncation": 200.0, "ipw_truncation": 40.0, "ipw_stabilize": True,
                "truncation_mode": "cumulative"},
    "t0_grid": None,
    "estimators": ["tmle", "ipw"],
    "cv": {"V": 10, "seed": 0},
    "ipw_bootstrap": 250,
    "seed": 0,
    "n_jobs": 1,
    "output_dir": "longtmle_out",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _map_from(d: dict | None) -> SummaryMap | None:
    if d is None:
        return None
    tup = lambda x: None if x is None else tuple(x)  # noqa: E731
    return SummaryMap(baseline=tup(d.get("baseline")), current=tup(d.get("current")),
                      lags=tuple((str(c), int(k)) for c, k in d.get("lags", [])),
                      lag_treatment=bool(d.get("lag_treatment", True)))


def _learner(d: dict) -> LearnerSpec:
    return LearnerSpec(d["family"], d.get("tuning", {}), d.get("label", ""))


@dataclass
class AnalysisConfig:
    """Validated analysis settings; build with :meth:`from_dict` or :meth:`load`."""

    raw: dict

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisConfig":
        cfg = cls(_merge(DEFAULTS, d))
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        text = Path(path).read_text()
        d = yaml.safe_load(text) or {}
        if not isinstance(d, dict):
            raise SchemaError("config must be a mapping")
        base = Path(path).parent
        for key in ("long", "daily"):
            p = (d.get("input") or {}).get(key)
            if p and not Path(p).is_absolute():
                d["input"][key] = str(base / p)
        return cls.from_dict(d)

    def check(self):
        r = self.raw
        inputs = [k for k in ("long", "daily", "simulate") if r["input"].get(k)]
        if len(inputs) != 1:
            raise SchemaError("exactly one of input.long, input.daily, input.simulate is required")
        if not r["estimators"] or set(r["estimators"]) - {"tmle", "ipw"}:
            raise SchemaError("estimators must be a non-empty subset of [tmle, ipw]")
        if not r["regimes"]:
            raise SchemaError("at least one regime is required")
        if r["q"]["mode"] not in ("stratified", "pooled"):
            raise SchemaError(f"unknown mode {r['q']['mode']!r}")
        for part in ("g", "q"):
            if r[part]["strategy"] not in ("parametric", "dsl"):
                raise SchemaError(f"{part}.strategy must be parametric or dsl")

    # convenient typed views
    @property
    def regimes(self) -> list[Regime]:
        out = []
        for d in self.raw["regimes"]:
            d = dict(d)
            d.setdefault("biomarker", self.raw["biomarker"])
            d.setdefault("threshold_inclusive", self.raw["threshold_inclusive"])
            out.append(Regime.from_config(d))
        return out

    @property
    def summary_map(self) -> SummaryMap:
        return _map_from(self.raw["summary_map"])

    @property
    def g_map(self) -> SummaryMap:
        return _map_from(self.raw["g"].get("summary_map")) or self.summary_map

    @property
    def plan(self) -> CvPlan:
        return CvPlan(V=int(self.raw["cv"]["V"]), seed=int(self.raw["cv"]["seed"]))

    @property
    def g_config(self) -> GConfig:
        g = self.raw["g"]
        return GConfig(strategy=g["strategy"], learner=_learner(g["learner"]),
                       library=tuple(_learner(x) for x in g["library"]), plan=self.plan,
                       time_bin_width=g.get("time_bin_width"), n_jobs=int(self.raw["n_jobs"]))

    @property
    def q_config(self) -> QConfig:
        q = self.raw["q"]
        return QConfig(strategy=q["strategy"], learner=_learner(q["learner"]),
                       library=tuple(_learner(x) for x in q["library"]), plan=self.plan,
                       mode=q["mode"], q_min=float(q["q_min"]))

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, default=str)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class RunResult:
    status: int
    report: EstimateReport | None
    manifest: dict
    output_dir: Path
    error: dict | None = None


class _Timer:
    def __init__(self):
        self.phases: dict = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + time.perf_counter() - self.t

        return _Ctx()


def load_dataset(cfg: AnalysisConfig, accounting: dict) -> LongDataset:
    inp = cfg.raw["input"]
    if inp.get("long"):
        ds = read_csv(inp["long"])
    elif inp.get("daily"):
        cohort = read_daily_csv(inp["daily"])
        accounting["daily_records"] = int(cohort.n_records)
        c = cfg.raw["coarsen"]
        ds = coarsen_dataset(cohort, CoarsenConfig(int(c["time_unit_days"]), int(c["max_intervals"]),
                                                   aggregation=c.get("aggregation", "any")))
    else:
        sim = inp["simulate"]
        scen = SCENARIOS[sim.get("scenario", "default")]()
        ds = simulate(scen.dgp, int(sim["n"]), seed=int(sim.get("seed", cfg.raw["seed"])))
    require_valid(ds)
    return ds


def _check_columns(cfg: AnalysisConfig, ds: LongDataset):
    names = set(ds.covariate_names)
    for r in cfg.regimes:
        if r.biomarker not in names:
            raise SchemaError(f"biomarker column {r.biomarker!r} not found in data")
    for m in (cfg.summary_map, cfg.g_map):
        for c in list(m.baseline or []) + list(m.current or []) + [c for c, _ in m.lags]:
            if c not in names:
                raise SchemaError(f"summary map references missing column {c!r}")


def _wald_from_boot(psi: float, se: float) -> WaldResult:
    return wald(psi, None, se=se)


def estimate(cfg: AnalysisConfig, ds: LongDataset, timer: _Timer | None = None):
    """Run every configured estimator; returns the report and row accounting."""
    timer = timer or _Timer()
    r = cfg.raw
    regimes = cfg.regimes
    grid = r["t0_grid"] if r["t0_grid"] is not None else list(range(ds.max_t + 1))
    grid = [int(t) for t in grid]
    if max(grid) > ds.max_t or min(grid) < 0:
        raise SchemaError(f"t0 grid {grid} outside [0, {ds.max_t}]")
    wcfg = r["weights"]
    report = EstimateReport(metadata={
        "time_unit": r["time_unit"], "mode": r["q"]["mode"], "g_strategy": r["g"]["strategy"],
        "q_strategy": r["q"]["strategy"], "seed": r["seed"], "cv": r["cv"], "t0_grid": grid,
        "regimes": [{"label": x.label, "theta": x.theta} for x in regimes],
        "n_subjects": ds.n_subjects, "n_rows": ds.n_rows, "tmle_truncation": wcfg["tmle_truncation"],
        "ipw_truncation": wcfg["ipw_truncation"], "ipw_stabilized": wcfg["ipw_stabilize"],
        "ipw_bootstrap": r["ipw_bootstrap"], "package_version": __version__,
    })
    with timer("g_fit"):
        g = fit_g(ds, cfg.g_map, cfg.g_config)
        preds = g.predict_rows(ds)
    report.metadata["g_selections"] = {k: str(v) for k, v in g.selections().items()}
    report.metadata["g_diagnostics"] = g.diagnostics

    tw, iw = {}, {}
    with timer("weights"):
        for reg in regimes:
            tw[reg.label] = compute_weights(ds, g, reg, truncation=wcfg["tmle_truncation"],
                                            truncation_mode=wcfg["truncation_mode"], predictions=preds)
            report.weight_summaries += _records(weight_summary(ds, tw[reg.label], max(grid)), "tmle")
            if "ipw" in r["estimators"]:
                iw[reg.label] = compute_weights(ds, g, reg, truncation=wcfg["ipw_truncation"],
                                                stabilize=bool(wcfg["ipw_stabilize"]),
                                                truncation_mode=wcfg["truncation_mode"], predictions=preds)
                report.weight_summaries += _records(weight_summary(ds, iw[reg.label], max(grid)), "ipw")

    q_map = cfg.summary_map
    tmle_fits: dict = {}
    if "tmle" in r["estimators"]:
        with timer("tmle"):
            qcfg = cfg.q_config

            def task(reg):
                return survival_curve(ds, reg, tw[reg.label], q_map, grid, qcfg)

            n_jobs = int(r["n_jobs"])
            if n_jobs > 1:
                with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                    curves = list(pool.map(task, regimes))
            else:
                curves = [task(reg) for reg in regimes]
            for reg, fits in zip(regimes, curves):
                for f in fits:
                    if isinstance(f, FailedFit):
                        report.errors.append({"estimator": "tmle", "regime": reg.label, "t0": f.t0,
                                              "error": f.error})
                        continue
                    tmle_fits[(reg.label, f.t0)] = f
                    report.add_estimate("tmle", reg, f.t0, wald(f.psi_hat, f.eic), f.n_subjects)
            report.metadata["q_selections"] = {
                f"{lab}@{t0}": [str(s) for s in f.selections] for (lab, t0), f in sorted(tmle_fits.items())
            }
            for t0 in grid:
                for a, b in itertools.combinations(regimes, 2):
                    fa, fb = tmle_fits.get((a.label, t0)), tmle_fits.get((b.label, t0))
                    if fa is not None and fb is not None:
                        report.add_rd("tmle", a, b, t0, risk_difference(fa, fb))

    if "ipw" in r["estimators"]:
        with timer("ipw"):
            boots = {}
            for reg in regimes:
                for t0 in grid:
                    try:
                        fit = ipw_estimate(ds, reg, iw[reg.label], t0, n_boot=int(r["ipw_bootstrap"]),
                                           seed=int(r["seed"]))
                    except PositivityError as exc:
                        report.errors.append({"estimator": "ipw", "regime": reg.label, "t0": t0,
                                              "error": f"PositivityError: {exc}"})
                        continue
                    se = fit.se if fit.se is not None else float("nan")
                    report.add_estimate("ipw", reg, t0, _wald_from_boot(fit.psi_hat, se), fit.n_subjects,
                                        se_method="bootstrap")
                    boots[(reg.label, t0)] = fit
            for t0 in grid:
                for a, b in itertools.combinations(regimes, 2):
                    fa, fb = boots.get((a.label, t0)), boots.get((b.label, t0))
                    if fa is None or fb is None:
                        continue
                    rd = fa.psi_hat - fb.psi_hat
                    if fa.boot_risks is not None:
                        d = fa.boot_risks[:, t0] - fb.boot_risks[:, t0]
                        d = d[np.isfinite(d)]
                        se = float(np.std(d, ddof=1)) if d.size > 1 else float("nan")
                    else:
                        se = float("nan")
                    w = wald(rd, None, clip=False, se=se)
                    report.add_rd("ipw", a, b, t0, RdResult(rd, se, w.ci_lo, w.ci_hi))

    Z = q_map.columns(ds.covariate_names)
    accounting = {
        "person_time_rows": int(ds.n_rows),
        "n_subjects": int(ds.n_subjects),
        "max_t": int(ds.max_t),
        "design_rows": int(ds.n_rows),
        "design_columns": len(Z) + 1,
        "wide_format_cells": int(ds.n_subjects * (ds.max_t + 1) * max(len(ds.covariate_names), 1)),
        "long_format_cells": int(ds.n_rows * max(len(ds.covariate_names), 1)),
        "wide_materialized": False,
    }
    return report, accounting


def _records(df: pd.DataFrame, estimator: str) -> list[dict]:
    df = df.assign(estimator=estimator)
    return json.loads(df.to_json(orient="records"))


def _versions() -> dict:
    import matplotlib
    import scipy

    return {"longtmle": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "matplotlib": matplotlib.__version__,
            "pyyaml": yaml.__version__}


def run(cfg: AnalysisConfig, output_dir=None) -> RunResult:
    """Execute a full analysis and write its artifacts.

    Returns status 0 on success and 1 on an abort; in the latter case
    ``error.json`` holds one structured record and the manifest is marked
    incomplete.
    """
    out = Path(output_dir or cfg.raw["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    t_start = time.perf_counter()
    manifest = {
        "config_sha256": cfg.digest(),
        "config": cfg.raw,
        "seeds": {"seed": cfg.raw["seed"], "cv_seed": cfg.raw["cv"]["seed"],
                  "simulate_seed": (cfg.raw["input"].get("simulate") or {}).get("seed"),
                  "bootstrap_seed": cfg.raw["seed"]},
        "versions": _versions(),
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "complete": False,
    }
    accounting: dict = {}
    report = None
    error = None
    try:
        with timer("load"):
            ds = load_dataset(cfg, accounting)
        _check_columns(cfg, ds)
        report, acc = estimate(cfg, ds, timer)
        accounting.update(acc)
        report.to_json(out / "estimates.json")
        report.write_tables(out)
        manifest["complete"] = True
    except (LongTmleError, ValueError, OSError, KeyError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, PositivityError):
            error["k"] = exc.k
        (out / "error.json").write_text(json.dumps(error, indent=2))
        log.error("run aborted: %s", exc)
    timer.phases["total"] = time.perf_counter() - t_start
    manifest["timings_seconds"] = {k: round(v, 6) for k, v in timer.phases.items()}
    manifest["row_accounting"] = accounting
    manifest["artifacts"] = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()
                                   and p.name != "manifest.json")
    if error:
        manifest["error"] = error
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return RunResult(0 if error is None else 1, report, manifest, out, error)
