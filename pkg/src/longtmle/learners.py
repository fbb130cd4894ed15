"""Binary-regression learners ranked by the discrete super learner.

Every learner minimizes a weighted (quasi-)log-likelihood, so responses may be
fractional, and accepts per-row logit offsets.  Families:

``logistic-glm``
    IRLS with step-halving.  ``tuning={"saturated": True}`` replaces the
    design by one indicator per distinct covariate row (a fully saturated
    model), solved cell by cell; a cell with all-0 or all-1 outcomes gets an
    infinite logit, so unbounded predictions there are exactly 0 or 1.
``l2-logistic``
    Ridge-penalized IRLS; the intercept is never penalized.
``gbt``
    Second-order gradient boosting of depth-limited histogram trees on the
    logistic loss, with row/column subsampling.  The offset is the base margin.

Observation weights are rescaled to mean one before fitting, so the fit is
invariant to a common rescaling of the weights.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

P_MIN = 1e-6

FAMILIES = ("logistic-glm", "l2-logistic", "gbt")

_GLM_DEFAULTS = {"saturated": False, "max_iter": 50, "tol": 1e-8}
_L2_DEFAULTS = {"lambda": 1e-2, "max_iter": 50, "tol": 1e-8}
_GBT_DEFAULTS = {
    "n_trees": 50,
    "max_depth": 3,
    "learning_rate": 0.1,
    "subsample_rate": 1.0,
    "column_subsample_rate": 1.0,
    "min_child_weight": 1.0,
    "max_delta_step": 0.0,
    "lambda": 1.0,
    "n_bins": 32,
    "seed": 0,
}
_DEFAULTS = {"logistic-glm": _GLM_DEFAULTS, "l2-logistic": _L2_DEFAULTS, "gbt": _GBT_DEFAULTS}


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LearnerSpec:
    family: str
    tuning: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown learner family {self.family!r}; expected one of {FAMILIES}")
        unknown = set(self.tuning) - set(_DEFAULTS[self.family])
        if unknown:
            raise ValueError(f"unknown tuning keys for {self.family}: {sorted(unknown)}")
        full = {**_DEFAULTS[self.family], **self.tuning}
        _check_tuning(self.family, full)
        object.__setattr__(self, "tuning", full)
        if not self.label:
            object.__setattr__(self, "label", _default_label(self.family, self.tuning))

    def __eq__(self, other):
        return isinstance(other, LearnerSpec) and (self.family, self.tuning, self.label) == (
            other.family, other.tuning, other.label)

    def __hash__(self):
        return hash((self.family, self.label, tuple(sorted(self.tuning.items()))))

    def to_dict(self) -> dict:
        return {"family": self.family, "tuning": dict(self.tuning), "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        return cls(d["family"], dict(d.get("tuning", {})), d.get("label", ""))


def _check_tuning(family, t):
    def need(cond, msg):
        if not cond:
            raise ValueError(f"{family}: {msg}")

    if family in ("logistic-glm", "l2-logistic"):
        need(int(t["max_iter"]) >= 1, "max_iter must be >= 1")
        need(t["tol"] > 0, "tol must be > 0")
    if family == "l2-logistic":
        need(t["lambda"] >= 0, "lambda must be >= 0")
    if family == "gbt":
        need(int(t["n_trees"]) >= 0, "n_trees must be >= 0")
        need(int(t["max_depth"]) >= 1, "max_depth must be >= 1")
        need(0 < t["learning_rate"] <= 1, "learning_rate must lie in (0, 1]")
        need(0 < t["subsample_rate"] <= 1, "subsample_rate must lie in (0, 1]")
        need(0 < t["column_subsample_rate"] <= 1, "column_subsample_rate must lie in (0, 1]")
        need(t["min_child_weight"] >= 0, "min_child_weight must be >= 0")
        need(t["max_delta_step"] >= 0, "max_delta_step must be >= 0")
        need(t["lambda"] >= 0, "lambda must be >= 0")
        need(2 <= int(t["n_bins"]) <= 1024, "n_bins must lie in [2, 1024]")


def _default_label(family, t):
    if family == "logistic-glm":
        return "glm.saturated" if t["saturated"] else "glm"
    if family == "l2-logistic":
        return f"l2.lambda{t['lambda']:g}"
    return (
        f"gbt.n{t['n_trees']}.d{t['max_depth']}.lr{t['learning_rate']:g}"
        f".ss{t['subsample_rate']:g}.cs{t['column_subsample_rate']:g}"
    )


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: LearnerSpec
    params: dict
    n_features: int
    diagnostics: dict = field(default_factory=dict)


# -- shared helpers --------------------------------------------------------------

def _nll_terms(y, eta):
    """Per-row negative quasi-log-likelihood on the logit scale (stable)."""
    return y * np.logaddexp(0.0, -eta) + (1.0 - y) * np.logaddexp(0.0, eta)


def weighted_nll(y, p, w=None) -> float:
    """Weighted mean negative log-likelihood of probabilities ``p``."""
    y = np.asarray(y, dtype=float)
    p = np.clip(np.asarray(p, dtype=float), P_MIN, 1 - P_MIN)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    terms = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    sw = w.sum()
    if sw <= 0:
        return float("nan")
    return float(np.dot(w, terms) / sw)


def _prepare(X, y, weights, offset):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    n = X.shape[0]
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]}")
    if np.any((y < 0) | (y > 1)) or np.any(~np.isfinite(y)):
        raise ValueError("responses must lie in [0, 1]")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).reshape(-1)
    if w.shape[0] != n or off.shape[0] != n:
        raise ValueError("weights and offset must match the number of rows of X")
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise ValueError("all weights are zero")
    if np.any(~np.isfinite(off)):
        raise ValueError("offset must be finite")
    keep = w > 0
    X, y, w, off = X[keep], y[keep], w[keep], off[keep]
    w = w * (w.shape[0] / w.sum())
    return X, y, w, off


def intercept_mle(y, w, offset, max_iter=100, tol=1e-12, bound=None):
    """Weighted intercept-only logistic MLE with a fixed offset.

    One-dimensional Newton with step-halving; solves
    ``sum w (y - expit(offset + eps)) = 0``.  ``bound`` caps ``|eps|``.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    off = np.asarray(offset, dtype=float)
    sw = w.sum()
    if sw <= 0:
        return 0.0, {"converged": False, "iterations": 0, "reason": "zero weight"}
    eps = 0.0
    if off.size and np.all(off == off[0]):
        # closed form for a constant offset
        ybar = np.clip(np.dot(w, y) / sw, 1e-12, 1 - 1e-12)
        eps = float(logit(ybar) - off[0])
    if bound is not None:
        eps = float(np.clip(eps, -bound, bound))

    def loss(e):
        return float(np.dot(w, _nll_terms(y, off + e)))

    cur = loss(eps)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(off + eps)
        score = float(np.dot(w, y - mu))
        info = float(np.dot(w, mu * (1 - mu)))
        if abs(score) <= tol * sw:
            converged = True
            break
        if info <= 0:
            break
        step = score / info
        if abs(step) < 1e-6:
            # inside the quadratic region the loss change is below rounding noise
            cand = eps + step if bound is None else float(np.clip(eps + step, -bound, bound))
            if cand == eps:
                break
            eps, cur = cand, loss(cand)
            continue
        t = 1.0
        while True:
            cand = eps + t * step
            if bound is not None:
                cand = float(np.clip(cand, -bound, bound))
            new = loss(cand)
            if new <= cur or t < 1e-12:
                break
            t /= 2
        if cand == eps:
            break
        eps, cur = cand, new
    return eps, {"converged": converged, "iterations": it}


# -- IRLS ------------------------------------------------------------------------

def _irls(X, y, w, off, penalty, max_iter, tol):
    n, p = X.shape
    beta = np.zeros(p)
    eta = off + X @ beta

    def objective(b, e):
        return 2.0 * float(np.dot(w, _nll_terms(y, e))) + float(np.dot(penalty, b * b))

    dev = objective(beta, eta)
    converged = False
    small = 0
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        W = w * mu * (1 - mu)
        grad = X.T @ (w * (y - mu)) - penalty * beta
        H = (X.T * W) @ X + np.diag(penalty)
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            nb = beta + t * step
            neta = off + X @ nb
            ndev = objective(nb, neta)
            if ndev <= dev + 1e-13 * abs(dev) or t < 1e-10:
                break
            t /= 2
        change = abs(dev - ndev) / (abs(ndev) + 0.1)
        beta, eta, dev = nb, neta, ndev
        # a second small change means the quadratic phase has finished the score too
        small = small + 1 if change < tol else 0
        if small == 2:
            converged = True
            break
    return beta, {"converged": converged, "iterations": it, "final_loss": dev / (2 * n)}


def _design_with_intercept(X):
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _fit_glm(spec, X, y, w, off):
    t = spec.tuning
    if t["saturated"]:
        return _fit_saturated(spec, X, y, w, off)
    D = _design_with_intercept(X)
    beta, diag = _irls(D, y, w, off, np.zeros(D.shape[1]), int(t["max_iter"]), t["tol"])
    return {"intercept": float(beta[0]), "coef": beta[1:]}, diag


def _fit_l2(spec, X, y, w, off):
    t = spec.tuning
    D = _design_with_intercept(X)
    n = D.shape[0]
    # objective: mean weighted loss + lambda/2 * ||coef||^2
    penalty = np.full(D.shape[1], n * t["lambda"])
    penalty[0] = 0.0
    beta, diag = _irls(D, y, w, off, penalty, int(t["max_iter"]), t["tol"])
    return {"intercept": float(beta[0]), "coef": beta[1:]}, diag


def _cell_index(keys, X):
    """Map rows of ``X`` to the matching row of ``keys`` (-1 if unseen)."""
    m = keys.shape[0]
    allrows = np.vstack([keys, X]) + 0.0
    _, inv = np.unique(allrows, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    lookup = np.full(inv.max() + 1, -1, dtype=np.int64)
    lookup[inv[:m]] = np.arange(m)
    return lookup[inv[m:]]


def _fit_saturated(spec, X, y, w, off):
    t = spec.tuning
    keys, cell = np.unique(X + 0.0, axis=0, return_inverse=True)
    cell = cell.reshape(-1)
    m = keys.shape[0]
    sw = np.bincount(cell, weights=w, minlength=m)
    swy = np.bincount(cell, weights=w * y, minlength=m)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = swy / sw
    # cells whose outcomes are all 0 (or all 1) have their MLE at -inf (+inf)
    beta = np.where(mean <= 0, -np.inf, np.where(mean >= 1, np.inf, 0.0))
    free = np.isfinite(beta) & (sw > 0)
    beta[sw <= 0] = 0.0
    inner = free[cell]
    beta[free] = logit(mean[free]) - np.bincount(cell[inner], weights=(w * off)[inner], minlength=m)[free] / sw[free]
    ci, wi, yi, oi = cell[inner], w[inner], y[inner], off[inner]

    def cell_loss(b):
        return np.bincount(ci, weights=wi * _nll_terms(yi, oi + b[ci]), minlength=m)

    cur = cell_loss(beta)
    converged = False
    it = 0
    for it in range(1, int(t["max_iter"]) + 1):
        mu = expit(oi + beta[ci])
        score = np.bincount(ci, weights=wi * (yi - mu), minlength=m)
        info = np.bincount(ci, weights=wi * mu * (1 - mu), minlength=m)
        if np.all(np.abs(score) <= 1e-12 * sw):
            converged = True
            break
        step = np.where(free & (info > 0), score / np.where(info > 0, info, 1.0), 0.0)
        scale = np.ones(m)
        for _ in range(40):
            cand = beta + scale * step
            new = cell_loss(cand)
            worse = new > cur + 1e-13 * np.abs(cur)
            if not worse.any():
                break
            scale = np.where(worse, scale / 2, scale)
        beta, cur = cand, new
    fallback = float(logit(np.clip(np.dot(w, y) / w.sum(), 1e-12, 1 - 1e-12)))
    params = {"keys": keys, "cell_logit": beta, "fallback": fallback}
    return params, {"converged": converged, "iterations": it, "final_loss": float(cur.sum() / len(y)), "n_cells": m}


# -- gradient boosted trees ------------------------------------------------------------

@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict_binned(self, B):
        node = np.zeros(B.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            idx = np.flatnonzero(internal)
            go_left = B[idx, feat[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
        return self.value[node]


def _bin_edges(X, n_bins):
    edges = []
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    for j in range(X.shape[1]):
        col = X[:, j]
        e = np.unique(np.quantile(col, qs)) if col.size else np.array([])
        edges.append(e)
    return edges


def _apply_bins(X, edges):
    B = np.empty(X.shape, dtype=np.int64)
    for j, e in enumerate(edges):
        B[:, j] = np.searchsorted(e, X[:, j], side="left")
    return B


def _build_tree(B, g, h, cols, n_bins, t):
    lam = t["lambda"]
    mcw = t["min_child_weight"]
    mds = t["max_delta_step"]
    max_depth = int(t["max_depth"])
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf_value(G, H):
        v = -G / (H + lam) if H + lam > 0 else 0.0
        if mds > 0:
            v = float(np.clip(v, -mds, mds))
        return v

    def new_node():
        feature.append(-1)
        threshold.append(0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    c = len(cols)
    offs = np.arange(c) * n_bins
    stack = [(new_node(), np.arange(B.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        gs, hs = g[rows], h[rows]
        G, H = gs.sum(), hs.sum()
        value[node] = leaf_value(G, H)
        if depth >= max_depth or rows.size < 2 or c == 0:
            continue
        flat = (B[np.ix_(rows, cols)] + offs).ravel()
        hg = np.bincount(flat, weights=np.repeat(gs, c), minlength=c * n_bins).reshape(c, n_bins)
        hh = np.bincount(flat, weights=np.repeat(hs, c), minlength=c * n_bins).reshape(c, n_bins)
        GL = np.cumsum(hg, axis=1)[:, :-1]
        HL = np.cumsum(hh, axis=1)[:, :-1]
        GR, HR = G - GL, H - HL
        ok = (HL >= mcw) & (HR >= mcw) & (HL > 0) & (HR > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam)
        gain = np.where(ok, gain, -np.inf)
        best = int(np.argmax(gain))
        if not np.isfinite(gain.flat[best]) or gain.flat[best] <= 1e-12:
            continue
        jj, b = divmod(best, n_bins - 1)
        f = cols[jj]
        mask = B[rows, f] <= b
        feature[node] = f
        threshold[node] = b
        li, ri = new_node(), new_node()
        left[node], right[node] = li, ri
        stack.append((ri, rows[~mask], depth + 1))
        stack.append((li, rows[mask], depth + 1))
    return _Tree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.int64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64), np.array(value, dtype=float),
    )


def _fit_gbt(spec, X, y, w, off):
    t = spec.tuning
    rng = np.random.default_rng(int(t["seed"]))
    n, p = X.shape
    n_bins = int(t["n_bins"])
    edges = _bin_edges(X, n_bins)
    B = _apply_bins(X, edges)
    base, _ = intercept_mle(y, w, off)
    margin = off + base

    def loss(m):
        return float(np.dot(w, _nll_terms(y, m)) / n)

    losses = [loss(margin)]
    trees = []
    n_cols = max(1, int(round(t["column_subsample_rate"] * p))) if p else 0
    for _ in range(int(t["n_trees"])):
        mu = expit(margin)
        g = w * (mu - y)
        h = w * mu * (1 - mu)
        if t["subsample_rate"] < 1:
            rows = np.flatnonzero(rng.random(n) < t["subsample_rate"])
            if rows.size < 2:
                rows = np.arange(n)
        else:
            rows = np.arange(n)
        cols = np.sort(rng.choice(p, size=n_cols, replace=False)) if p else np.array([], dtype=np.int64)
        tree = _build_tree(B[rows], g[rows], h[rows], cols, n_bins, t)
        tree.value *= t["learning_rate"]
        update = tree.predict_binned(B)
        # shrink the round until the full-data training loss does not increase
        scale, new = 1.0, loss(margin + update)
        while new > losses[-1] and scale > 1e-6:
            scale /= 2
            new = loss(margin + scale * update)
        if new > losses[-1]:
            break
        tree.value *= scale
        margin = margin + scale * update
        trees.append(tree)
        losses.append(new)
    params = {"base": float(base), "edges": edges, "trees": trees}
    return params, {"converged": True, "iterations": len(trees), "final_loss": losses[-1], "loss_path": losses}


_FITTERS = {"logistic-glm": _fit_glm, "l2-logistic": _fit_l2, "gbt": _fit_gbt}


def fit(spec: LearnerSpec, X, y, weights=None, offset=None) -> FittedModel:
    """Fit ``spec`` by minimizing the weighted negative (quasi-)log-likelihood."""
    Xp, yp, wp, op = _prepare(X, y, weights, offset)
    params, diag = _FITTERS[spec.family](spec, Xp, yp, wp, op)
    if not diag.get("converged", True):
        warnings.warn(f"{spec.label}: not converged after {diag['iterations']} iterations", ConvergenceWarning)
    diag["n_rows"] = int(yp.shape[0])
    return FittedModel(spec=spec, params=params, n_features=Xp.shape[1], diagnostics=diag)


def predict_margin(model: FittedModel, X, offset=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} columns, got {X.shape[1]}")
    off = np.zeros(X.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    prm = model.params
    fam = model.spec.family
    if fam == "gbt":
        m = np.full(X.shape[0], prm["base"])
        if prm["trees"]:
            B = _apply_bins(X, prm["edges"])
            for tree in prm["trees"]:
                m += tree.predict_binned(B)
        return off + m
    if "keys" in prm:
        idx = _cell_index(prm["keys"], X) if X.shape[0] else np.zeros(0, dtype=np.int64)
        m = np.where(idx >= 0, prm["cell_logit"][np.clip(idx, 0, None)], prm["fallback"])
        return off + m
    return off + prm["intercept"] + X @ prm["coef"]


def predict(model: FittedModel, X, offset=None, p_min: float = P_MIN) -> np.ndarray:
    """Probabilities bounded into ``[p_min, 1 - p_min]``."""
    return np.clip(expit(predict_margin(model, X, offset)), p_min, 1 - p_min)


def constant_model(rate: float, n_features: int, label: str = "constant", p_min: float = P_MIN) -> FittedModel:
    """Covariate-free model predicting ``rate`` (bounded by ``p_min``)."""
    rate = float(np.clip(rate, p_min, 1 - p_min))
    spec = LearnerSpec("logistic-glm", {}, label)
    return FittedModel(
        spec=spec,
        params={"intercept": float(logit(rate)), "coef": np.zeros(n_features)},
        n_features=n_features,
        diagnostics={"degenerate": True, "rate": rate},
    )


def expand_grid(family: str, label_prefix: str | None = None, **grid) -> list[LearnerSpec]:
    """One :class:`LearnerSpec` per point of the Cartesian tuning grid."""
    keys = sorted(grid)
    values = [v if isinstance(v, (list, tuple)) else [v] for v in (grid[k] for k in keys)]
    out = []
    for combo in itertools.product(*values):
        tuning = dict(zip(keys, combo))
        label = ""
        if label_prefix:
            label = label_prefix + "".join(f".{k}{v:g}" if isinstance(v, (int, float)) else f".{k}{v}"
                                           for k, v in tuning.items())
        out.append(LearnerSpec(family, tuning, label))
    return out


def default_q_library() -> list[LearnerSpec]:
    """Eight candidates: 3 boosted-tree, 1 GLM, 4 ridge-logistic."""
    return (
        expand_grid("gbt", "gbt", n_trees=[50, 100], max_depth=3, learning_rate=0.1)
        + [LearnerSpec("gbt", {"n_trees": 100, "max_depth": 4, "learning_rate": 0.05,
                               "subsample_rate": 0.8, "column_subsample_rate": 0.8})]
        + [LearnerSpec("logistic-glm")]
        + expand_grid("l2-logistic", "l2", **{"lambda": [1e-4, 1e-3, 1e-2, 1e-1]})
    )


def default_g_library() -> list[LearnerSpec]:
    """A representative treatment/censoring library mixing all three families."""
    forests = [
        LearnerSpec("gbt", {"n_trees": 50, "max_depth": d, "learning_rate": 0.3,
                            "subsample_rate": 0.632, "column_subsample_rate": 0.6, "seed": s})
        for d, s in ((4, 1), (6, 2))
    ]
    return (
        [LearnerSpec("logistic-glm")]
        + expand_grid("l2-logistic", "l2", **{"lambda": [1e-4, 1e-3, 1e-2, 1e-1]})
        + expand_grid("gbt", "gbt", n_trees=[50, 150], max_depth=[2, 4], learning_rate=0.1)
        + forests
    )
