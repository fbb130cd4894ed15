"""Long-format TMLE for the risk of a dynamic regime at horizon ``t0``.

The working outcome column ``Q~`` lives on the person-time rows: row ``k``
carries ``Q~_(k+1)``, which starts as ``Y(k)`` and is over-written by the
targeted prediction ``Q*_(k+1)`` of row ``k + 1`` as the recursion moves
backwards.  Subjects who fail at ``k`` have no row ``k + 1`` and keep ``1``.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .data_model import CensCause, LongDataset, SummaryMap, require_valid
from .errors import PositivityError, SchemaError
from .inference import EicVector, eic as _eic, plugin_se
from .learners import LearnerSpec, constant_model, default_q_library, fit, intercept_mle, predict
from .propensity import WeightTable, compute_weights
from .regimes import Regime, rule_path
from .superlearner import CvPlan, as_model, dsl_fit

log = logging.getLogger(__name__)

Q_MIN = 1e-5
MODES = ("stratified", "pooled")


class FluctuationWarning(UserWarning):
    """The targeting step had no weight mass at some interval."""


@dataclass(frozen=True)
class QConfig:
    """Estimation choices for the iterated outcome regressions."""

    strategy: str = "parametric"
    learner: LearnerSpec = field(default_factory=lambda: LearnerSpec("logistic-glm"))
    library: tuple = ()
    plan: CvPlan = field(default_factory=CvPlan)
    mode: str = "stratified"
    q_min: float = Q_MIN
    eps_bound: float = 10.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.strategy not in ("parametric", "dsl"):
            raise ValueError(f"unknown Q strategy {self.strategy!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown TMLE mode {self.mode!r}")
        if not 0 < self.q_min < 0.5:
            raise ValueError("q_min must lie in (0, 0.5)")


@dataclass(eq=False)
class TmleFit:
    """Result of one TMLE run at ``(regime, t0)``.

    Row-level arrays cover the rows with ``t <= t0``: ``row_qtilde`` is the
    regression target ``Q~_(k+1)``, ``row_qstar`` the targeted ``Q*_k`` at the
    rule's treatment, ``row_weight`` the cumulative weight used to target.
    ``epsilons[k]`` is infinite when every weighted target at ``k`` is 0 (or
    every one is 1), the boundary case listed in ``diagnostics["boundary_k"]``.
    """

    regime: Regime
    t0: int
    mode: str
    psi_hat: float
    epsilons: np.ndarray
    subjects: np.ndarray
    q_star0: np.ndarray
    rows: np.ndarray
    row_sid: np.ndarray
    row_t: np.ndarray
    row_qtilde: np.ndarray
    row_qstar: np.ndarray
    row_weight: np.ndarray
    score_residuals: np.ndarray
    n_fit_rows: np.ndarray
    selections: list
    diagnostics: dict = field(default_factory=dict)
    _eic: EicVector | None = field(default=None, repr=False)

    @property
    def n_subjects(self) -> int:
        return int(self.q_star0.shape[0])

    @property
    def survival(self) -> float:
        return 1.0 - self.psi_hat

    @property
    def eic(self) -> EicVector:
        if self._eic is None:
            self._eic = _eic(self)
        return self._eic

    @property
    def se(self) -> float:
        """Influence-curve standard error ``sqrt(mean(D^2) / n)``."""
        return plugin_se(self.eic.values)


@dataclass(frozen=True)
class FailedFit:
    """Placeholder for a grid point whose estimation aborted."""

    regime: Regime
    t0: int
    error: str


def _fit_q(X, y, groups, config: QConfig, k: int):
    if y.size == 0:
        raise PositivityError(f"no rows to fit the outcome regression at k={k}", k=k)
    if np.ptp(y) == 0:
        return constant_model(float(y[0]), X.shape[1], label="Q.constant", p_min=0.0), "constant"
    if config.strategy == "dsl" and np.unique(groups).size >= config.plan.V:
        library = list(config.library) or default_q_library()
        res = dsl_fit(library, X, y, plan=config.plan, groups=groups, n_jobs=1)
        return res, res.selected
    model = fit(config.learner, X, y)
    return model, config.learner.label


def _resolve_weights(dataset, regime, weights, truncation):
    if isinstance(weights, WeightTable):
        if weights.regime != regime:
            raise ValueError(f"weights are for {weights.regime.label}, not {regime.label}")
        if weights.weight.shape[0] != dataset.n_rows:
            raise ValueError("weights do not match the dataset")
        return weights
    return compute_weights(dataset, weights, regime, truncation=truncation)


def tmle_estimate(
    dataset: LongDataset,
    regime: Regime,
    weights,
    summary_map: SummaryMap | None = None,
    t0: int | None = None,
    config: QConfig | None = None,
    truncation: float | None = 200.0,
    _design: np.ndarray | None = None,
) -> TmleFit:
    """Targeted estimate of ``P(Y^theta(t0) = 1)``.

    ``weights`` is a :class:`WeightTable` for ``regime`` or a g-mechanism with a
    ``predict_rows`` method, in which case unstabilized weights truncated at
    ``truncation`` are computed here.
    """
    config = config or QConfig()
    summary_map = summary_map or SummaryMap()
    require_valid(dataset)
    t0 = dataset.max_t if t0 is None else int(t0)
    if t0 < 0 or t0 > dataset.max_t:
        raise ValueError(f"t0={t0} outside [0, {dataset.max_t}]")
    wt = _resolve_weights(dataset, regime, weights, truncation)
    Z = summary_map.transform(dataset) if _design is None else _design
    rp = rule_path(dataset, regime)
    uncens = dataset.a_cens == CensCause.NONE

    qtilde = np.where(np.isnan(dataset.y), 0.0, dataset.y).astype(float)
    qstar = np.zeros(dataset.n_rows)
    eps = np.zeros(t0 + 1)
    score = np.zeros(t0 + 1)
    n_fit = np.zeros(t0 + 1, dtype=np.int64)
    selections = [None] * (t0 + 1)
    diag: dict = {"zero_weight_k": []}
    n = dataset.n_subjects

    for k in range(t0, -1, -1):
        rows = dataset.rows_at(k)
        if rows.size == 0:
            raise PositivityError(f"no subjects at risk at k={k}", k=k)
        if k < t0:
            open_end = uncens[rows] & (dataset.y[rows] == 0) & dataset.is_last[rows]
            if open_end.any():
                bad = dataset.subject_ids[dataset.sid[rows[open_end][0]]]
                raise SchemaError(f"subject {bad!r} is at risk after k={k} but has no row k+1")
        at_risk = rows[uncens[rows]]
        fit_rows = at_risk[rp.follows[at_risk] == 1] if config.mode == "stratified" else at_risk
        if fit_rows.size == 0:
            raise PositivityError(f"no uncensored rule-followers at k={k}", k=k)
        n_fit[k] = fit_rows.size

        D_fit = np.column_stack([dataset.a_treat[fit_rows], Z[fit_rows]])
        model, selections[k] = _fit_q(D_fit, qtilde[fit_rows], dataset.sid[fit_rows], config, k)
        D_rule = np.column_stack([rp.a_theta[rows], Z[rows]])
        raw = predict(as_model(model), D_rule, p_min=0.0)
        q_hat = np.clip(raw, config.q_min, 1.0 - config.q_min)
        off = logit(q_hat)

        w = wt.weight[rows]
        # exact 0/1 predictions are fixed points of the submodel, whatever epsilon is
        fixed = (raw == 0.0) | (raw == 1.0)
        pos = (w > 0) & ~fixed
        target = qtilde[rows][pos]
        if pos.any() and (np.all(target == 0.0) or np.all(target == 1.0)):
            # the weighted MLE sits at the boundary: epsilon -> -inf or +inf
            e = -np.inf if target[0] == 0.0 else np.inf
            diag.setdefault("boundary_k", []).append(k)
        elif pos.any():
            e, _ = intercept_mle(target, w[pos], off[pos], bound=config.eps_bound)
        elif (w > 0).any():
            e = 0.0
        else:
            e = 0.0
            diag["zero_weight_k"].append(k)
            warnings.warn(f"no weight mass at k={k}; fluctuation set to 0", FluctuationWarning)
        eps[k] = e
        qs = np.where(fixed, raw, expit(off + e))
        qstar[rows] = qs
        score[k] = float(np.dot(w, qtilde[rows] - qs)) / n
        if k > 0:
            qtilde[rows - 1] = qs

    first = dataset.start
    q0 = qstar[first]
    psi = float(q0.mean())
    sel = dataset.t <= t0
    rows_all = np.flatnonzero(sel)
    return TmleFit(
        regime=regime, t0=t0, mode=config.mode, psi_hat=psi, epsilons=eps,
        subjects=dataset.subject_ids, q_star0=q0, rows=rows_all,
        row_sid=dataset.sid[rows_all], row_t=dataset.t[rows_all],
        row_qtilde=np.where(uncens[rows_all], qtilde[rows_all], 0.0),
        row_qstar=qstar[rows_all], row_weight=wt.weight[rows_all],
        score_residuals=score, n_fit_rows=n_fit, selections=selections, diagnostics=diag,
    )


def survival_curve(
    dataset: LongDataset,
    regime: Regime,
    weights,
    summary_map: SummaryMap | None = None,
    t0_grid=None,
    config: QConfig | None = None,
    truncation: float | None = 200.0,
    n_jobs: int = 1,
) -> list:
    """Independent TMLE runs over a grid of horizons.

    A grid point that fails yields a :class:`FailedFit` instead of aborting
    the others.
    """
    summary_map = summary_map or SummaryMap()
    t0_grid = list(range(dataset.max_t + 1)) if t0_grid is None else [int(t) for t in t0_grid]
    for t in t0_grid:
        if t < 0 or t > dataset.max_t:
            raise ValueError(f"t0={t} outside [0, {dataset.max_t}]")
    wt = _resolve_weights(dataset, regime, weights, truncation)
    Z = summary_map.transform(dataset)

    def one(t):
        try:
            return tmle_estimate(dataset, regime, wt, summary_map, t, config, _design=Z)
        except (PositivityError, SchemaError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("TMLE at %s, t0=%d failed: %s", regime.label, t, exc)
            return FailedFit(regime, t, f"{type(exc).__name__}: {exc}")

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(one, t0_grid))
    return [one(t) for t in t0_grid]
