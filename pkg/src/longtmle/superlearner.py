"""Discrete super learner: V-fold cross-validated choice of one candidate."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .learners import FittedModel, LearnerSpec, fit, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvPlan:
    V: int = 10
    seed: int = 0

    def assign(self, n_subjects: int) -> np.ndarray:
        """Fold label per subject; every fold is non-empty."""
        if n_subjects < self.V:
            raise ValueError(f"{n_subjects} subjects cannot fill {self.V} folds")
        rng = np.random.default_rng(self.seed)
        return rng.permutation(n_subjects) % self.V


@dataclass(frozen=True, eq=False)
class DslResult:
    candidates: list
    cv_risks: np.ndarray
    selected: str
    final_model: FittedModel
    diagnostics: dict = field(default_factory=dict)

    @property
    def selected_index(self) -> int:
        return int(np.argmin(self.cv_risks))


def _fold_risk(spec, X, y, w, off, train, test):
    model = fit(spec, X[train], y[train], w[train], off[train])
    p = predict(model, X[test], off[test])
    yt, wt = y[test], w[test]
    terms = -(yt * np.log(p) + (1 - yt) * np.log1p(-p))
    return float(np.dot(wt, terms)), float(wt.sum())


def dsl_fit(
    candidates: list[LearnerSpec],
    X,
    y,
    weights=None,
    offset=None,
    plan: CvPlan | None = None,
    groups=None,
    n_jobs: int = 1,
) -> DslResult:
    """Select the candidate with the smallest cross-validated weighted NLL.

    ``groups`` gives a subject index per row; folds are assigned by subject so
    no subject contributes to both training and validation of one fold.  The
    risk of a candidate is the pooled weighted mean held-out loss.  Ties go to
    the earliest candidate; the winner is refit on all rows.
    """
    if not candidates:
        raise ValueError("candidate library is empty")
    plan = plan or CvPlan()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = X.shape[0]
    y = np.asarray(y, dtype=float)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    groups = np.arange(n) if groups is None else np.asarray(groups)
    _, gidx = np.unique(groups, return_inverse=True)
    fold_of_subject = plan.assign(int(gidx.max()) + 1)
    fold = fold_of_subject[gidx]

    tasks = [(c, v) for c in range(len(candidates)) for v in range(plan.V)]

    def run(task):
        c, v = task
        train, test = fold != v, fold == v
        try:
            return _fold_risk(candidates[c], X, y, w, off, train, test)
        except Exception as exc:  # a failing candidate only loses the selection
            log.warning("candidate %s failed on fold %d: %s", candidates[c].label, v, exc)
            return None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    risks = np.zeros(len(candidates))
    failures = {}
    for c in range(len(candidates)):
        parts = results[c * plan.V:(c + 1) * plan.V]
        if any(r is None for r in parts):
            risks[c] = np.inf
            failures[candidates[c].label] = "fit failed on at least one fold"
            continue
        loss = sum(r[0] for r in parts)
        mass = sum(r[1] for r in parts)
        risks[c] = loss / mass if mass > 0 else np.inf
    if not np.any(np.isfinite(risks)):
        raise RuntimeError("every candidate failed during cross-validation")
    best = int(np.argmin(risks))
    final = fit(candidates[best], X, y, w, off)
    return DslResult(
        candidates=list(candidates),
        cv_risks=risks,
        selected=candidates[best].label,
        final_model=final,
        diagnostics={"failures": failures, "V": plan.V, "seed": plan.seed},
    )


def as_model(m) -> FittedModel:
    """The predict-capable model behind a fit or a super-learner result."""
    return m.final_model if isinstance(m, DslResult) else m
