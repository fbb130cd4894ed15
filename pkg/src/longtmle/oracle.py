"""Synthetic data with known counterfactual truth.

The generating law is Markov in the state ``(W, X(t), A(t-1))``: a binary
baseline covariate ``W``, a biomarker ``X`` on a discrete ladder (or
continuous), treatment intensification, three ordered censoring causes and a
binary failure outcome.  Treatment depends only on the generated past, so
sequential randomization holds by construction, and every conditional law is
logistic with bounded coefficients, so positivity holds too.

Truth is available by exact backward iteration over the finite state space
(:func:`gcomp_exact`) or by forced-regime simulation (:func:`gcomp_mc`).
:func:`empirical_gcomp` evaluates the same iterated-mean formula on the
empirical distribution of an observed dataset.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data_model import CensCause, LongDataset, SummaryMap
from .errors import StateSpaceError
from .learners import LearnerSpec
from .propensity import GPredictions
from .regimes import DEFAULT_THETAS, Regime, rule_path

CHUNK = 50_000
DEFAULT_LEVELS = (6.5, 7.0, 7.5, 8.0, 8.5, 9.0)


@dataclass(frozen=True)
class Logit:
    """``expit(intercept + w*W + x*(X - center) + a*A)``."""

    intercept: float
    w: float = 0.0
    x: float = 0.0
    a: float = 0.0

    def prob(self, w, x, a, center: float) -> np.ndarray:
        return expit(self.intercept + self.w * np.asarray(w, float)
                     + self.x * (np.asarray(x, float) - center) + self.a * np.asarray(a, float))


@dataclass(frozen=True)
class Dgp:
    """Structural laws of the simulated cohort.

    With ``levels`` set the biomarker lives on that ladder: the initial rung is
    Binomial(len(levels) - 1, ``x0``), and each interval it steps up with
    probability ``up`` or otherwise down with probability ``down`` (staying at
    the ends).  With ``levels=None`` it is Gaussian with a random-walk drift.
    In transition laws ``a`` is the previous treatment; in treatment,
    censoring and outcome laws it is the current one.  A censoring law of
    ``None`` means that cause never occurs.
    """

    tau: int = 7
    levels: tuple | None = DEFAULT_LEVELS
    center: float = 7.5
    p_w: float = 0.5
    x0: Logit = Logit(0.0, w=0.4)
    up: Logit = Logit(-1.2, w=0.3, a=-1.2)
    down: Logit = Logit(-1.5, a=1.5)
    x0_mean: float = 7.3
    x0_sd: float = 0.6
    drift: tuple = (0.05, -0.35, 0.05)
    noise_sd: float = 0.3
    init: Logit = Logit(-2.2, w=0.3, x=1.8)
    cont: Logit = Logit(3.0)
    disenroll: Logit | None = Logit(-3.8, x=0.3)
    death: Logit | None = Logit(-4.5, w=0.3, x=0.4)
    admin: Logit | None = Logit(-4.5)
    outcome: Logit = Logit(-3.2, w=0.3, x=1.0, a=-0.8)
    biomarker: str = "a1c"
    baseline: str = "w"
    seed: int = 0

    @property
    def discrete(self) -> bool:
        return self.levels is not None

    @property
    def covariate_names(self) -> list[str]:
        return [self.baseline, self.biomarker]

    def cens_laws(self):
        return [(c, law) for c, law in ((CensCause.DISENROLL, self.disenroll),
                                        (CensCause.DEATH, self.death),
                                        (CensCause.ADMIN, self.admin))]

    def to_dict(self) -> dict:
        return asdict(self)

    # transition helpers shared by the simulators and the exact oracle
    def step_probs(self, w, x, a_prev):
        up = self.up.prob(w, x, a_prev, self.center)
        down = self.down.prob(w, x, a_prev, self.center)
        return up, down

    def treat_prob(self, w, x, a_prev):
        return np.where(np.asarray(a_prev) == 1,
                        self.cont.prob(w, x, 1, self.center),
                        self.init.prob(w, x, 0, self.center))

    def cens_hazards(self, w, x, a) -> dict:
        shape = np.broadcast(np.asarray(w), np.asarray(x)).shape
        return {c: (np.zeros(shape) if law is None else law.prob(w, x, a, self.center) * np.ones(shape))
                for c, law in self.cens_laws()}


def _draw_initial(dgp: Dgp, rng, n):
    w = (rng.random(n) < dgp.p_w).astype(np.int64)
    if dgp.discrete:
        p = dgp.x0.prob(w, dgp.center, 0, dgp.center)
        idx = rng.binomial(len(dgp.levels) - 1, p)
        return w, idx
    return w, dgp.x0_mean + dgp.x0_sd * rng.standard_normal(n)


def _advance(dgp: Dgp, rng, w, state, a_prev):
    if dgp.discrete:
        lv = np.asarray(dgp.levels)
        x = lv[state]
        up, down = dgp.step_probs(w, x, a_prev)
        u = rng.random(state.shape[0])
        top = state == len(lv) - 1
        bottom = state == 0
        up = np.where(top, 0.0, up)
        down = np.where(bottom, 0.0, (1.0 - up) * down)
        return np.where(u < up, state + 1, np.where(u < up + down, state - 1, state))
    d0, da, dw = dgp.drift
    return state + d0 + da * a_prev + dw * w + dgp.noise_sd * rng.standard_normal(state.shape[0])


def _values(dgp: Dgp, state):
    return np.asarray(dgp.levels)[state] if dgp.discrete else state


def _simulate_chunk(dgp: Dgp, n: int, rng, offset: int):
    w, state = _draw_initial(dgp, rng, n)
    ids = np.arange(offset, offset + n)
    a_prev = np.zeros(n, dtype=np.int64)
    alive = np.arange(n)
    cols = {k: [] for k in ("sid", "t", "w", "x", "a", "c", "y")}
    for t in range(dgp.tau + 1):
        if t > 0:
            state[alive] = _advance(dgp, rng, w[alive], state[alive], a_prev[alive])
        m = alive.size
        if m == 0:
            break
        wa, xa = w[alive], _values(dgp, state[alive])
        u = rng.random((m, 5))
        a = (u[:, 0] < dgp.treat_prob(wa, xa, a_prev[alive])).astype(np.int64)
        c = np.zeros(m, dtype=np.int64)
        for j, (cause, h) in enumerate(dgp.cens_hazards(wa, xa, a).items()):
            c = np.where((c == 0) & (u[:, 1 + j] < h), int(cause), c)
        y = np.where(c == 0, (u[:, 4] < dgp.outcome.prob(wa, xa, a, dgp.center)).astype(float), np.nan)
        for key, val in (("sid", ids[alive]), ("t", np.full(m, t)), ("w", wa), ("x", xa),
                         ("a", a), ("c", c), ("y", y)):
            cols[key].append(val)
        a_prev[alive] = a
        keep = (c == 0) & (y == 0)
        alive = alive[keep]
    return {k: np.concatenate(v) for k, v in cols.items()}


def _chunk_rngs(seed: int, n: int):
    n_chunks = max(1, math.ceil(n / CHUNK))
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    for i, s in enumerate(seqs):
        lo = i * CHUNK
        yield lo, min(CHUNK, n - lo), np.random.default_rng(s)


def simulate(dgp: Dgp, n: int, seed: int | None = None) -> LongDataset:
    """Draw ``n`` subjects in interval-native long format.

    Subjects are generated in fixed-size blocks with independent seed streams
    spawned from ``seed``, so the output does not depend on scheduling.
    """
    if n < 1:
        raise ValueError("n must be positive")
    seed = dgp.seed if seed is None else seed
    parts = [_simulate_chunk(dgp, m, rng, lo) for lo, m, rng in _chunk_rngs(seed, n)]
    cols = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    order = np.lexsort((cols["t"], cols["sid"]))
    cols = {k: v[order] for k, v in cols.items()}
    return LongDataset(
        subject_id=cols["sid"], t=cols["t"], covariates=np.column_stack([cols["w"], cols["x"]]),
        a_treat=cols["a"], a_cens=cols["c"], y=cols["y"], covariate_names=dgp.covariate_names,
    )


def expand_to_daily(dataset: LongDataset, unit: int, seed: int = 0, horizon: int | None = None):
    """Daily event streams whose ``unit``-day coarsening reproduces ``dataset``.

    Covariates are measured on each interval's first day; treatment runs become
    episodes starting and ending on random days inside their first and last
    interval; failures and censoring land on a random day of their interval.
    Administrative censoring ends the data on that day.  Subjects still at
    risk after the last row end ``unit`` days past the ``horizon``.
    """
    from .coarsen import DailyCohort
    import pandas as pd

    u = int(unit)
    rng = np.random.default_rng(np.random.SeedSequence([seed, u]))
    horizon = dataset.max_t if horizon is None else horizon
    last = dataset.is_last
    t = dataset.t
    ids = dataset.subject_ids
    offs = rng.integers(0, u, size=dataset.n_rows)
    lrow = dataset.start + dataset.length - 1
    closes = (dataset.a_cens[lrow] != 0) | (dataset.y[lrow] == 1)
    stop_day = np.where(closes, t[lrow] * u + offs[lrow], (horizon + 2) * u - 1)
    fail = np.where(dataset.y[lrow] == 1, stop_day, np.nan)
    cens_mask = np.isin(dataset.a_cens[lrow], (1, 2))
    cens = np.where(cens_mask, stop_day, np.nan)
    cause = np.where(cens_mask, dataset.a_cens[lrow], 1)
    end = np.where(dataset.a_cens[lrow] == 3, stop_day, (horizon + 2) * u - 1)
    subjects = pd.DataFrame({"subject_id": ids, "entry": 0, "end": end, "fail": fail,
                             "cens": cens, "cause": cause})

    names = dataset.covariate_names
    day = np.repeat(t * u, len(names))
    cov = pd.DataFrame({"subject_id": np.repeat(ids[dataset.sid], len(names)), "day": day,
                        "name": np.tile(names, dataset.n_rows), "value": dataset.X.reshape(-1)})

    # runs of consecutive treated rows
    a = dataset.a_treat
    prev = dataset.lag(a)
    nxt = np.r_[a[1:], 0]
    nxt = np.where(last, 0, nxt)
    starts = np.flatnonzero((a == 1) & (prev == 0))
    ends = np.flatnonzero((a == 1) & (nxt == 0))
    stop_row = stop_day[dataset.sid]
    bin_last = np.minimum((t + 1) * u - 1, stop_row)
    s_day = t[starts] * u + np.floor(rng.random(starts.size) * (bin_last[starts] - t[starts] * u + 1)).astype(np.int64)
    lo = np.maximum(s_day, t[ends] * u)
    e_day = lo + np.floor(rng.random(ends.size) * (bin_last[ends] - lo + 1)).astype(np.int64)
    treat = pd.DataFrame({"subject_id": ids[dataset.sid[starts]], "start": s_day, "end": e_day})
    return DailyCohort(subjects, cov, treat)


def simulate_daily(dgp: Dgp, n: int, unit: int, seed: int | None = None):
    """Daily-resolution cohort for ``dgp`` whose intervals are ``unit`` days."""
    seed = dgp.seed if seed is None else seed
    return expand_to_daily(simulate(dgp, n, seed), unit, seed=seed, horizon=dgp.tau)


@dataclass(frozen=True, eq=False)
class KnownG:
    """The true treatment and censoring mechanism of ``dgp``, usable wherever
    a fitted :class:`~longtmle.propensity.GModel` is accepted."""

    dgp: Dgp

    def predict_rows(self, dataset: LongDataset) -> GPredictions:
        w = dataset.column(self.dgp.baseline)
        x = dataset.column(self.dgp.biomarker)
        a_prev = dataset.lag(dataset.a_treat)
        p1 = self.dgp.treat_prob(w, x, a_prev)
        return GPredictions(p_treat1=p1, cens_hazard=self.dgp.cens_hazards(w, x, dataset.a_treat))


# --------------------------------------------------------------------------- truth

def _regime_action(regime: Regime, x, a_prev):
    return regime.next_action(x, a_prev)


def gcomp_exact(dgp: Dgp, regime: Regime, t0: int, budget: int = 1_000_000) -> float:
    """Counterfactual risk ``P(Y^theta(t0) = 1)`` by backward iterated means.

    Censoring is set to none and treatment to the rule at every interval; the
    recursion runs over the state ``(W, X, A(t-1))``.
    """
    if not dgp.discrete:
        raise StateSpaceError("exact enumeration needs a discrete biomarker; use gcomp_mc")
    if t0 < 0 or t0 > dgp.tau:
        raise ValueError(f"t0={t0} outside [0, {dgp.tau}]")
    lv = np.asarray(dgp.levels, dtype=float)
    L = lv.size
    if 2 * L * 2 * (t0 + 1) > budget:
        raise StateSpaceError("state space exceeds the enumeration budget")
    W = np.array([0, 1])[:, None, None]
    X = lv[None, :, None]
    AP = np.array([0, 1])[None, None, :]
    a = _regime_action(regime, X, AP) * np.ones((2, L, 2), dtype=np.int64)
    h = dgp.outcome.prob(W, X, a, dgp.center) * np.ones((2, L, 2))
    up, down = dgp.step_probs(W, X, a)
    up = up * np.ones((2, L, 2))
    down = down * np.ones((2, L, 2))
    up[:, -1, :] = 0.0
    down = (1.0 - up) * down
    down[:, 0, :] = 0.0
    stay = 1.0 - up - down
    iw = np.arange(2)[:, None, None] * np.ones((2, L, 2), dtype=np.int64)
    ix = np.arange(L)[None, :, None] * np.ones((2, L, 2), dtype=np.int64)
    V = np.zeros((2, L, 2))
    for t in range(t0, -1, -1):
        if t == t0:
            V = h.copy()
            continue
        nxt_up = V[iw, np.minimum(ix + 1, L - 1), a]
        nxt_dn = V[iw, np.maximum(ix - 1, 0), a]
        nxt_st = V[iw, ix, a]
        cont = up * nxt_up + down * nxt_dn + stay * nxt_st
        V = h + (1.0 - h) * cont
    from scipy.stats import binom

    pw = np.array([1.0 - dgp.p_w, dgp.p_w])
    risk = 0.0
    for wv in (0, 1):
        p = float(dgp.x0.prob(wv, dgp.center, 0, dgp.center))
        px = binom.pmf(np.arange(L), L - 1, p)
        risk += pw[wv] * float(np.dot(px, V[wv, :, 0]))
    return float(risk)


@dataclass(frozen=True)
class McResult:
    risk: float
    se: float
    reps: int


def gcomp_mc(dgp: Dgp, regime: Regime, t0: int, reps: int, seed: int = 0) -> McResult:
    """Counterfactual risk by simulating ``reps`` forced-regime trajectories."""
    curve, n = gcomp_mc_curve(dgp, regime, t0, reps, seed)
    r = float(curve[t0])
    return McResult(risk=r, se=math.sqrt(max(r * (1 - r), 0.0) / n), reps=n)


def gcomp_mc_curve(dgp: Dgp, regime: Regime, t0: int, reps: int, seed: int = 0):
    if reps < 1:
        raise ValueError("reps must be >= 1")
    failed_by = np.zeros(t0 + 1)
    for _, m, rng in _chunk_rngs(seed, reps):
        w, state = _draw_initial(dgp, rng, m)
        a_prev = np.zeros(m, dtype=np.int64)
        alive = np.ones(m, dtype=bool)
        fails = 0
        for t in range(t0 + 1):
            if t > 0:
                state = _advance(dgp, rng, w, state, a_prev)
            x = _values(dgp, state)
            a = _regime_action(regime, x, a_prev).astype(np.int64)
            y = rng.random(m) < dgp.outcome.prob(w, x, a, dgp.center)
            new = alive & y
            fails += int(new.sum())
            alive &= ~y
            a_prev = a
            failed_by[t] += fails
    return failed_by / reps, reps


@dataclass(frozen=True)
class TruthEntry:
    regime: str
    t0: int
    risk: float
    method: str
    se: float = 0.0
    reps: int = 0


@dataclass
class TruthTable:
    entries: list = field(default_factory=list)

    def get(self, regime: str | Regime, t0: int) -> TruthEntry:
        label = regime.label if isinstance(regime, Regime) else regime
        for e in self.entries:
            if e.regime == label and e.t0 == t0:
                return e
        raise KeyError((label, t0))

    def risk(self, regime, t0) -> float:
        return self.get(regime, t0).risk

    def to_json(self) -> str:
        return json.dumps([asdict(e) for e in self.entries], indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TruthTable":
        return cls([TruthEntry(**d) for d in json.loads(text)])


def truth_table(dgp: Dgp, regimes, t0_grid, mc_reps: int = 1_000_000, seed: int = 0) -> TruthTable:
    """Exact truth when the state space is finite, Monte Carlo otherwise."""
    out = []
    for r in regimes:
        if dgp.discrete:
            out += [TruthEntry(r.label, int(t), gcomp_exact(dgp, r, int(t)), "exact-enumeration")
                    for t in t0_grid]
        else:
            curve, n = gcomp_mc_curve(dgp, r, int(max(t0_grid)), mc_reps, seed)
            for t in t0_grid:
                p = float(curve[t])
                out.append(TruthEntry(r.label, int(t), p, "monte-carlo", math.sqrt(p * (1 - p) / n), n))
    return TruthTable(out)


def full_history_map(dataset: LongDataset, depth: int) -> SummaryMap:
    """Summary holding the entire covariate history up to ``depth`` lags."""
    names = tuple(dataset.covariate_names)
    return SummaryMap(baseline=(), current=names,
                      lags=tuple((c, d) for d in range(1, depth + 1) for c in names),
                      lag_treatment=True)


def empirical_gcomp(dataset: LongDataset, regime: Regime, t0: int, summary_map: SummaryMap | None = None) -> float:
    """Iterated-mean g-computation on the empirical distribution.

    Each conditional mean is the plain average of the next-step target over
    uncensored rule-followers sharing the same history key.  The key defaults
    to the full observed covariate history, which for rule-followers also
    fixes the treatment history.
    """
    summary_map = summary_map or full_history_map(dataset, t0)
    Z = summary_map.transform(dataset)
    rp = rule_path(dataset, regime)
    prev_follow = dataset.lag(rp.follows, fill=1.0) == 1
    target = np.where(np.isnan(dataset.y), 0.0, dataset.y).astype(float)
    for k in range(t0, -1, -1):
        rows = dataset.rows_at(k)
        if rows.size == 0:
            raise StateSpaceError(f"no subjects at risk at k={k}")
        fit_rows = rows[(rp.follows[rows] == 1) & (dataset.a_cens[rows] == CensCause.NONE)]
        keys_fit = [tuple(r) for r in Z[fit_rows]]
        sums: dict = {}
        for key, v in zip(keys_fit, target[fit_rows]):
            s = sums.setdefault(key, [0.0, 0])
            s[0] += v
            s[1] += 1
        use = rows[prev_follow[rows]]
        q = np.empty(use.size)
        for i, r in enumerate(use):
            key = tuple(Z[r])
            if key not in sums:
                raise StateSpaceError(f"history {key} at k={k} has no uncensored rule-follower")
            s = sums[key]
            q[i] = s[0] / s[1]
        if k == 0:
            return float(q.mean())
        target[use - 1] = q
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    """A DGP plus the analyst-facing model choices used in simulation studies.

    ``q_correct`` is a saturated GLM on the current state, which is the true
    form of every iterated mean under this DGP.  The ``*_wrong`` choices omit
    the biomarker, the only confounder that varies over time.
    """

    dgp: Dgp
    regimes: tuple
    t0_grid: tuple
    q_map_correct: SummaryMap
    q_learner_correct: LearnerSpec
    q_map_wrong: SummaryMap
    q_learner_wrong: LearnerSpec
    g_map_correct: SummaryMap
    g_map_wrong: SummaryMap

    def q_choice(self, correct: bool):
        return (self.q_map_correct, self.q_learner_correct) if correct else (self.q_map_wrong, self.q_learner_wrong)

    def g_map(self, correct: bool) -> SummaryMap:
        return self.g_map_correct if correct else self.g_map_wrong


def default_scenario(**overrides) -> Scenario:
    dgp = replace(Dgp(), **overrides)
    b, x = dgp.baseline, dgp.biomarker
    return Scenario(
        dgp=dgp,
        regimes=tuple(Regime(th, biomarker=x) for th in DEFAULT_THETAS),
        t0_grid=tuple(range(dgp.tau + 1)),
        q_map_correct=SummaryMap(baseline=(), current=(b, x), lag_treatment=False),
        q_learner_correct=LearnerSpec("logistic-glm", {"saturated": True}),
        q_map_wrong=SummaryMap(baseline=(), current=(b,), lag_treatment=False),
        q_learner_wrong=LearnerSpec("logistic-glm"),
        g_map_correct=SummaryMap(baseline=(), current=(b, x), lag_treatment=False),
        g_map_wrong=SummaryMap(baseline=(), current=(b,), lag_treatment=False),
    )


def continuous_scenario(**overrides) -> Scenario:
    """Gaussian-biomarker variant; truth only by Monte Carlo."""
    base = default_scenario(levels=None, **overrides)
    main = LearnerSpec("logistic-glm")
    return replace(base, q_learner_correct=main)


def binary_world(tau: int = 2, **overrides) -> Dgp:
    """Binary baseline and binary time-varying covariate, no censoring.

    Transitions are balanced and adherence to the threshold rule is high, so
    every history cell of a few thousand subjects is well populated.
    """
    kw = dict(
        tau=tau, levels=(7.0, 8.0), center=7.5, x0=Logit(0.0, w=0.4),
        up=Logit(-0.3, w=0.3, a=-0.5), down=Logit(-0.3, a=0.5),
        init=Logit(-0.5, w=0.3, x=4.0), cont=Logit(2.5),
        disenroll=None, death=None, admin=None,
        outcome=Logit(-0.7, w=0.4, x=0.5, a=-0.5),
    )
    kw.update(overrides)
    return Dgp(**kw)
