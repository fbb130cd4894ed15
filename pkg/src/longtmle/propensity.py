"""Treatment and censoring mechanism ``g`` and cumulative inverse-probability weights.

Within an interval the treatment decision precedes censoring, so each
censoring model conditions on the current treatment.  Censoring causes are
ordered disenrollment, death, administrative; the model for a cause is fit on
rows not censored by an earlier cause.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_model import CensCause, LongDataset, SummaryMap, require_valid
from .learners import P_MIN, LearnerSpec, constant_model, default_g_library, fit, predict
from .regimes import Regime, rule_path
from .superlearner import CvPlan, DslResult, as_model, dsl_fit

log = logging.getLogger(__name__)

MODELED_CAUSES = (CensCause.DISENROLL, CensCause.DEATH)
CAUSE_ORDER = (CensCause.DISENROLL, CensCause.DEATH, CensCause.ADMIN)


@dataclass(frozen=True)
class GConfig:
    """How each ``g`` component is estimated.

    ``time_bin_width`` adds indicators of coarse follow-up blocks of that many
    intervals (e.g. two-month blocks) on top of the linear time term.
    """

    strategy: str = "parametric"
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("logistic-glm"))
    library: tuple = ()
    plan: CvPlan = field(default_factory=CvPlan)
    time_term: bool = True
    time_bin_width: int | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.strategy not in ("parametric", "dsl"):
            raise ValueError(f"unknown g strategy {self.strategy!r}")


def time_design(t: np.ndarray, time_term: bool, bin_width: int | None, n_bins: int) -> np.ndarray:
    cols = []
    if time_term:
        cols.append(t.astype(float)[:, None])
    if bin_width and n_bins > 1:
        block = np.minimum(t // bin_width, n_bins - 1)
        cols.append((block[:, None] == np.arange(1, n_bins)[None, :]).astype(float))
    if not cols:
        return np.zeros((t.shape[0], 0))
    return np.hstack(cols)


@dataclass(frozen=True)
class GPredictions:
    """Row-aligned ``P(A^T(k) = 1 | past)`` and per-cause censoring hazards."""

    p_treat1: np.ndarray
    cens_hazard: dict

    def prob_observed_treatment(self, a_treat: np.ndarray) -> np.ndarray:
        return np.where(a_treat == 1, self.p_treat1, 1.0 - self.p_treat1)

    def prob_uncensored(self) -> np.ndarray:
        out = np.ones_like(self.p_treat1)
        for h in self.cens_hazard.values():
            out = out * (1.0 - h)
        return out


@dataclass(frozen=True, eq=False)
class GModel:
    init_model: object
    cont_model: object
    cens_models: dict
    admin_model: object
    summary_map: SummaryMap
    config: GConfig
    n_time_bins: int
    diagnostics: dict = field(default_factory=dict)

    def treatment_design(self, dataset: LongDataset) -> np.ndarray:
        Z = self.summary_map.transform(dataset)
        T = time_design(dataset.t, self.config.time_term, self.config.time_bin_width, self.n_time_bins)
        return np.hstack([Z, T])

    def predict_rows(self, dataset: LongDataset) -> GPredictions:
        D = self.treatment_design(dataset)
        lag = dataset.lag(dataset.a_treat)
        p1 = np.empty(dataset.n_rows)
        init, cont = lag == 0, lag == 1
        if init.any():
            p1[init] = predict(as_model(self.init_model), D[init])
        if cont.any():
            p1[cont] = predict(as_model(self.cont_model), D[cont])
        Dc = np.hstack([D, dataset.a_treat[:, None].astype(float)])
        hazards = {}
        for cause in MODELED_CAUSES:
            hazards[cause] = predict(as_model(self.cens_models[cause]), Dc)
        hazards[CensCause.ADMIN] = predict(as_model(self.admin_model), np.zeros((dataset.n_rows, 0)))
        return GPredictions(p_treat1=p1, cens_hazard=hazards)

    def selections(self) -> dict:
        out = {}
        for name, m in self.components().items():
            out[name] = m.selected if isinstance(m, DslResult) else as_model(m).spec.label
        return out

    def components(self) -> dict:
        out = {"init": self.init_model, "cont": self.cont_model}
        for c, m in self.cens_models.items():
            out[f"cens_{CensCause(c).name.lower()}"] = m
        out["cens_admin"] = self.admin_model
        return out


def _fit_component(name, X, y, groups, config: GConfig, diagnostics):
    if y.size == 0:
        diagnostics[name] = "empty stratum: constant 0.5"
        log.info("g component %s has no rows; using a constant model", name)
        return constant_model(0.5, X.shape[1], label=f"{name}.constant")
    rate = float(y.mean())
    if rate <= 0.0 or rate >= 1.0:
        diagnostics[name] = f"degenerate stratum (rate={rate:g}): constant model"
        return constant_model(rate, X.shape[1], label=f"{name}.constant")
    if config.strategy == "dsl":
        n_groups = np.unique(groups).size
        if n_groups >= config.plan.V:
            library = list(config.library) or default_g_library()
            return dsl_fit(library, X, y, plan=config.plan, groups=groups, n_jobs=config.n_jobs)
        diagnostics[name] = f"only {n_groups} subjects: parametric fallback"
    return fit(config.learner, X, y)


def fit_g(dataset: LongDataset, summary_map: SummaryMap | None = None, config: GConfig | None = None) -> GModel:
    """Fit initiation, continuation and censoring models pooled over time."""
    require_valid(dataset)
    summary_map = summary_map or SummaryMap()
    config = config or GConfig()
    n_bins = 1
    if config.time_bin_width:
        n_bins = int(dataset.max_t // config.time_bin_width) + 1
    Z = summary_map.transform(dataset)
    T = time_design(dataset.t, config.time_term, config.time_bin_width, n_bins)
    D = np.hstack([Z, T])
    lag = dataset.lag(dataset.a_treat)
    diag: dict = {}
    sid = dataset.sid

    init_rows = lag == 0
    cont_rows = lag == 1
    init = _fit_component("init", D[init_rows], dataset.a_treat[init_rows].astype(float), sid[init_rows], config, diag)
    cont = _fit_component("cont", D[cont_rows], dataset.a_treat[cont_rows].astype(float), sid[cont_rows], config, diag)

    Dc = np.hstack([D, dataset.a_treat[:, None].astype(float)])
    cens = {}
    at_risk = np.ones(dataset.n_rows, dtype=bool)
    for cause in MODELED_CAUSES:
        yc = (dataset.a_cens[at_risk] == cause).astype(float)
        cens[cause] = _fit_component(
            f"cens_{cause.name.lower()}", Dc[at_risk], yc, sid[at_risk], config, diag
        )
        at_risk &= dataset.a_cens != cause
    # administrative end of study is treated as completely at random
    y_admin = (dataset.a_cens[at_risk] == CensCause.ADMIN).astype(float)
    rate = float(y_admin.mean()) if y_admin.size else 0.0
    admin = constant_model(rate, 0, label="admin.intercept")
    return GModel(
        init_model=init, cont_model=cont, cens_models=cens, admin_model=admin,
        summary_map=summary_map, config=config, n_time_bins=n_bins, diagnostics=diag,
    )


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Row-aligned cumulative weights for one regime.

    ``cum_weight`` is the raw ``prod I(follow & uncensored) / g``; ``weight`` is
    the version used downstream (stabilized and/or truncated per settings).
    """

    regime: Regime
    g_hat: np.ndarray
    g_treat: np.ndarray
    g_uncens: np.ndarray
    follows: np.ndarray
    a_theta: np.ndarray
    uncensored: np.ndarray
    cum_weight: np.ndarray
    weight: np.ndarray
    truncation: float | None
    truncation_mode: str
    stabilized: bool
    numerator: np.ndarray | None
    n_truncated: int

    @property
    def indicator(self) -> np.ndarray:
        return self.follows * self.uncensored


def _time_only_hazard(dataset, at_risk, event, bin_width):
    t = dataset.t
    n_bins = int(dataset.max_t // bin_width) + 1 if bin_width else 1
    T = time_design(t, True, bin_width, n_bins)
    if not at_risk.any():
        return np.zeros(dataset.n_rows)
    y = event[at_risk].astype(float)
    if y.mean() in (0.0, 1.0):
        model = constant_model(y.mean(), T.shape[1])
    else:
        model = fit(LearnerSpec("logistic-glm"), T[at_risk], y)
    return predict(model, T)


def compute_weights(
    dataset: LongDataset,
    g,
    regime: Regime,
    truncation: float | None = None,
    stabilize: bool = False,
    truncation_mode: str = "cumulative",
    predictions: GPredictions | None = None,
) -> WeightTable:
    """Cumulative weights ``wt(k) = prod_j I(A-bar(j) = A-bar^theta(j)) / g_A(j)``.

    ``g`` is anything with a ``predict_rows(dataset)`` method (a fitted
    :class:`GModel` or a known-truth mechanism).  With ``truncation_mode``
    ``"cumulative"`` the product is capped; with ``"factor"`` each inverse
    factor is capped before multiplying.
    """
    if truncation_mode not in ("cumulative", "factor"):
        raise ValueError(f"unknown truncation mode {truncation_mode!r}")
    if truncation is not None and truncation <= 0:
        raise ValueError("truncation must be positive")
    rp = rule_path(dataset, regime)
    pr = predictions if predictions is not None else g.predict_rows(dataset)
    g_treat = np.clip(pr.prob_observed_treatment(dataset.a_treat), P_MIN, 1.0)
    g_unc = np.clip(pr.prob_uncensored(), P_MIN, 1.0)
    g_hat = g_treat * g_unc
    uncensored = (dataset.a_cens == CensCause.NONE).astype(np.int64)
    indicator = rp.follows * uncensored

    if truncation is not None and truncation_mode == "factor":
        inv = np.minimum(1.0 / g_hat, truncation)
    else:
        inv = 1.0 / g_hat
    log_cum = dataset.within_subject_cumsum(np.log(inv))
    cum = indicator * np.exp(log_cum)
    raw = indicator * np.exp(dataset.within_subject_cumsum(-np.log(g_hat)))

    numerator = None
    weight = cum
    if stabilize:
        # probability of still following the rule, uncensored, given time only
        prev_follow = dataset.lag(rp.follows, fill=1.0) == 1
        stop = indicator == 0
        hz = _time_only_hazard(dataset, prev_follow, stop, getattr(getattr(g, "config", None), "time_bin_width", None))
        numerator = np.exp(dataset.within_subject_cumsum(np.log1p(-np.clip(hz, 0, 1 - P_MIN))))
        weight = weight * numerator
    n_trunc = 0
    if truncation is not None and truncation_mode == "cumulative":
        n_trunc = int(np.sum(weight > truncation))
        weight = np.minimum(weight, truncation)
    elif truncation is not None:
        n_trunc = int(np.sum(cum < raw * (1 - 1e-12)))
    return WeightTable(
        regime=regime, g_hat=g_hat, g_treat=g_treat, g_uncens=g_unc, follows=rp.follows,
        a_theta=rp.a_theta, uncensored=uncensored, cum_weight=raw, weight=weight,
        truncation=truncation, truncation_mode=truncation_mode, stabilized=stabilize,
        numerator=numerator, n_truncated=n_trunc,
    )


def weight_summary(dataset: LongDataset, table: WeightTable, max_k: int | None = None) -> pd.DataFrame:
    """Distribution of the positive weights per interval."""
    max_k = dataset.max_t if max_k is None else max_k
    recs = []
    qs = [0.0, 0.01, 0.25, 0.5, 0.75, 0.99, 1.0]
    for k in range(max_k + 1):
        rows = dataset.rows_at(k)
        if rows.size == 0:
            continue
        wk = table.weight[rows]
        pos = wk[wk > 0]
        rec = {"regime": table.regime.label, "k": k, "n_rows": int(rows.size), "n_positive": int(pos.size),
               "mean_all": float(wk.mean())}
        if pos.size:
            qv = np.quantile(pos, qs)
            rec.update({"min": qv[0], "p01": qv[1], "p25": qv[2], "median": qv[3], "p75": qv[4],
                        "p99": qv[5], "max": qv[6], "mean": float(pos.mean())})
        recs.append(rec)
    return pd.DataFrame.from_records(recs)
