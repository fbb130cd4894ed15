"""Monte Carlo replication helpers for the simulation scenarios."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .inference import wald
from .ipw import ipw_estimate
from .oracle import Scenario, simulate
from .propensity import GConfig, compute_weights, fit_g
from .tmle import QConfig, tmle_estimate


@dataclass(frozen=True)
class ReplicationSpec:
    n: int
    q_correct: bool = True
    g_correct: bool = True
    regimes: tuple | None = None
    t0s: tuple = (3, 7)
    truncation: float = 200.0
    ipw: bool = False
    ipw_truncation: float = 40.0
    n_boot: int = 0


def run_replication(scenario: Scenario, spec: ReplicationSpec, seed: int) -> list[dict]:
    """Simulate one dataset and estimate every (regime, t0) of ``spec``."""
    ds = simulate(scenario.dgp, spec.n, seed=seed)
    g = fit_g(ds, scenario.g_map(spec.g_correct), GConfig())
    q_map, q_learner = scenario.q_choice(spec.q_correct)
    qcfg = QConfig(learner=q_learner)
    Z = q_map.transform(ds)
    preds = g.predict_rows(ds)
    out = []
    for r in spec.regimes or scenario.regimes:
        wt = compute_weights(ds, g, r, truncation=spec.truncation, predictions=preds)
        wst = None
        if spec.ipw:
            wst = compute_weights(ds, g, r, truncation=spec.ipw_truncation, stabilize=True, predictions=preds)
        for t0 in spec.t0s:
            fit = tmle_estimate(ds, r, wt, q_map, t0, qcfg, _design=Z)
            w = wald(fit.psi_hat, fit.eic)
            rec = {"seed": seed, "regime": r.label, "t0": t0, "tmle": fit.psi_hat, "tmle_se": w.se,
                   "tmle_lo": w.ci_lo_raw, "tmle_hi": w.ci_hi_raw}
            if wst is not None:
                ip = ipw_estimate(ds, r, wst, t0, n_boot=spec.n_boot, seed=seed)
                rec.update({"ipw": ip.psi_hat, "ipw_se": ip.se})
            out.append(rec)
    return out


def run_study(scenario: Scenario, spec: ReplicationSpec, seeds) -> pd.DataFrame:
    return pd.DataFrame([r for s in seeds for r in run_replication(scenario, spec, int(s))])


def summarize_bias(df: pd.DataFrame, truth: dict, column: str = "tmle") -> pd.DataFrame:
    """MC mean, bias, and MC standard error of the mean per (regime, t0)."""
    recs = []
    for (reg, t0), g in df.groupby(["regime", "t0"], sort=True):
        x = g[column].to_numpy()
        true = truth[(reg, int(t0))]
        mcse = float(np.std(x, ddof=1) / np.sqrt(x.size))
        recs.append({"regime": reg, "t0": int(t0), "truth": true, "mean": float(x.mean()),
                     "bias": float(x.mean() - true), "mc_se": mcse,
                     "z": float((x.mean() - true) / mcse) if mcse > 0 else np.inf, "reps": int(x.size)})
    return pd.DataFrame(recs)
