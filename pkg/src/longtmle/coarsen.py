"""Daily event streams to interval-level person-time rows.

Day ``d`` (counted from entry) falls in interval ``floor(d / u)``.  A subject's
rows stop at the first of failure, censoring, end of data, or the interval
horizon.  Covariates are carried forward from the last value observed on or
before an interval's first day, with an indicator flagging values that were
not refreshed during the preceding ``u`` days.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np
import pandas as pd

from .data_model import CensCause, LongDataset, require_valid
from .errors import SchemaError

AGGREGATIONS = ("any", "first-day", "majority")
CAUSES = {"disenroll": CensCause.DISENROLL, "death": CensCause.DEATH, "admin": CensCause.ADMIN}
RECORD_TYPES = ("entry", "end", "cov", "treat", "fail", "cens")


@dataclass
class DailyEventStream:
    """One subject's follow-up at daily resolution.

    Days are absolute indices; coarsening measures time from ``entry_day``.
    """

    subject_id: Hashable
    end_day: int
    entry_day: int = 0
    covariates: list = field(default_factory=list)
    treatments: list = field(default_factory=list)
    failure_day: int | None = None
    censor_day: int | None = None
    censor_cause: int = CensCause.DISENROLL

    def violations(self) -> list[str]:
        out = []
        lo, hi = self.entry_day, self.end_day
        if hi < lo:
            out.append("end_day before entry_day")
        for d, name, _ in self.covariates:
            if not lo <= d <= hi:
                out.append(f"covariate {name!r} observed on day {d} outside follow-up")
        for s, e in self.treatments:
            if e < s:
                out.append(f"treatment episode ({s}, {e}) ends before it starts")
            if s < lo or e > hi:
                out.append(f"treatment episode ({s}, {e}) outside follow-up")
        for label, d in (("failure", self.failure_day), ("censoring", self.censor_day)):
            if d is not None and not lo <= d <= hi:
                out.append(f"{label} day {d} outside follow-up")
        if self.censor_day is not None and int(self.censor_cause) not in (1, 2, 3):
            out.append(f"unknown censoring cause {self.censor_cause!r}")
        return out


@dataclass(frozen=True)
class CoarsenConfig:
    """Interval width in days, interval horizon, and aggregation policies.

    ``aggregation`` decides when an interval counts as treated: ``any`` day
    covered, the ``first-day`` covered, or a strict ``majority`` of observed
    days covered.  Ties between failure and censoring days go to failure.
    """

    time_unit_days: int
    max_intervals: int
    covariate_names: tuple | None = None
    aggregation: str = "any"
    impute_indicators: bool = True

    def __post_init__(self):
        if int(self.time_unit_days) < 1:
            raise ValueError("time_unit_days must be >= 1")
        if int(self.max_intervals) < 1:
            raise ValueError("max_intervals must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class DailyCohort:
    """Column-oriented collection of daily streams.

    ``subjects`` has ``subject_id, entry, end, fail, cens, cause`` (missing days
    as NaN); ``cov`` has ``subject_id, day, name, value``; ``treat`` has
    ``subject_id, start, end``.  Days are absolute; entry is subtracted when
    coarsening.
    """

    subjects: pd.DataFrame
    cov: pd.DataFrame
    treat: pd.DataFrame

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_records(self) -> int:
        return 2 * len(self.subjects) + len(self.cov) + len(self.treat) + int(
            self.subjects["fail"].notna().sum() + self.subjects["cens"].notna().sum())

    @classmethod
    def from_streams(cls, streams: Iterable[DailyEventStream]) -> "DailyCohort":
        subj, cov, treat = [], [], []
        for s in streams:
            bad = s.violations()
            if bad:
                raise SchemaError(f"subject {s.subject_id!r}: {bad[0]}")
            subj.append((s.subject_id, s.entry_day, s.end_day,
                         np.nan if s.failure_day is None else s.failure_day,
                         np.nan if s.censor_day is None else s.censor_day, int(s.censor_cause)))
            cov += [(s.subject_id, d, n, v) for d, n, v in s.covariates]
            treat += [(s.subject_id, a, b) for a, b in s.treatments]
        if not subj:
            raise SchemaError("no event streams")
        return cls(
            pd.DataFrame(subj, columns=["subject_id", "entry", "end", "fail", "cens", "cause"]),
            pd.DataFrame(cov, columns=["subject_id", "day", "name", "value"]),
            pd.DataFrame(treat, columns=["subject_id", "start", "end"]),
        )

    def streams(self) -> list[DailyEventStream]:
        cov = {k: g for k, g in self.cov.groupby("subject_id", sort=False)}
        trt = {k: g for k, g in self.treat.groupby("subject_id", sort=False)}
        out = []
        for r in self.subjects.itertuples(index=False):
            c = cov.get(r.subject_id)
            t = trt.get(r.subject_id)
            out.append(DailyEventStream(
                subject_id=r.subject_id, entry_day=int(r.entry), end_day=int(r.end),
                covariates=[] if c is None else [(int(d), n, float(v)) for d, n, v in
                                                 zip(c["day"], c["name"], c["value"])],
                treatments=[] if t is None else [(int(a), int(b)) for a, b in zip(t["start"], t["end"])],
                failure_day=None if pd.isna(r.fail) else int(r.fail),
                censor_day=None if pd.isna(r.cens) else int(r.cens),
                censor_cause=int(r.cause),
            ))
        return out

    def covariate_names(self) -> list[str]:
        return list(pd.unique(self.cov["name"]))


def _stop_and_event(sub: pd.DataFrame):
    """Relative stop day and event code (0 none/horizon, 1 failure, 2 censoring, 3 end of data)."""
    entry = sub["entry"].to_numpy(dtype=float)
    fail = sub["fail"].to_numpy(dtype=float) - entry
    cens = sub["cens"].to_numpy(dtype=float) - entry
    end = sub["end"].to_numpy(dtype=float) - entry
    inf = np.inf
    f = np.where(np.isnan(fail), inf, fail)
    c = np.where(np.isnan(cens), inf, cens)
    # earliest day wins; failure before censoring before end of data on ties
    stop = np.minimum(np.minimum(f, c), end)
    event = np.where(f == stop, 1, np.where(c == stop, 2, 3))
    return stop.astype(np.int64), event


def _merge_episodes(treat: pd.DataFrame) -> pd.DataFrame:
    if treat.empty:
        return treat
    t = treat.sort_values(["sid", "start", "end"], kind="stable")
    sid = t["sid"].to_numpy()
    s = t["start"].to_numpy()
    e = t["end"].to_numpy()
    new_sub = np.r_[True, sid[1:] != sid[:-1]]
    groups = np.cumsum(new_sub) - 1
    # running maximum of episode ends, restarted per subject
    run_end = pd.Series(e).groupby(groups).cummax().to_numpy()
    prev_end = np.r_[-np.inf, run_end[:-1]]
    new_block = new_sub | (s > prev_end + 1)
    block = np.cumsum(new_block) - 1
    out = pd.DataFrame({"sid": sid, "start": s, "end": e, "block": block})
    return out.groupby("block", sort=True).agg(sid=("sid", "first"), start=("start", "min"),
                                                end=("end", "max")).reset_index(drop=True)


def _expand_ranges(lo: np.ndarray, hi: np.ndarray):
    """Concatenated integer ranges ``[lo_i, hi_i]`` and their source index."""
    n = np.maximum(hi - lo + 1, 0)
    src = np.repeat(np.arange(lo.size), n)
    start = np.repeat(lo, n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    return start + offs, src


def coarsen_cohort(cohort: DailyCohort, cfg: CoarsenConfig) -> LongDataset:
    """Vectorized coarsening of every subject in ``cohort``."""
    u = int(cfg.time_unit_days)
    sub = cohort.subjects.reset_index(drop=True)
    if sub.empty:
        raise SchemaError("no event streams")
    if sub["subject_id"].duplicated().any():
        raise SchemaError(f"duplicate subject {sub['subject_id'][sub['subject_id'].duplicated()].iloc[0]!r}")
    n = len(sub)
    entry = sub["entry"].to_numpy(dtype=np.int64)
    stop, event = _stop_and_event(sub)
    if np.any(stop < 0):
        bad = sub["subject_id"].iloc[int(np.argmax(stop < 0))]
        raise SchemaError(f"subject {bad!r}: follow-up ends before entry")
    stop_bin = stop // u
    horizon = cfg.max_intervals - 1
    last = np.minimum(stop_bin, horizon)
    reached = stop_bin > horizon
    length = last + 1

    sid = np.repeat(np.arange(n), length)
    t = np.arange(length.sum()) - np.repeat(np.cumsum(length) - length, length)
    n_rows = sid.size
    row_start = np.cumsum(length) - length
    is_last = np.zeros(n_rows, dtype=bool)
    is_last[row_start + length - 1] = True
    closing = is_last & ~reached[sid]
    ev = event[sid]
    y = np.zeros(n_rows)
    a_cens = np.zeros(n_rows, dtype=np.int64)
    y[closing & (ev == 1)] = 1.0
    cause = sub["cause"].to_numpy(dtype=np.int64)[sid]
    a_cens = np.where(closing & (ev == 2), cause, a_cens)
    a_cens = np.where(closing & (ev == 3), int(CensCause.ADMIN), a_cens)
    y[a_cens != 0] = np.nan

    # treatment exposure per row
    idx = pd.Series(np.arange(n), index=sub["subject_id"])
    a_treat = np.zeros(n_rows, dtype=np.int64)
    tr = cohort.treat
    if not tr.empty:
        tr = tr[tr["subject_id"].isin(idx.index)]
        tsid = idx.loc[tr["subject_id"]].to_numpy()
        ep = pd.DataFrame({"sid": tsid,
                           "start": np.maximum(tr["start"].to_numpy(dtype=np.int64) - entry[tsid], 0),
                           "end": np.minimum(tr["end"].to_numpy(dtype=np.int64) - entry[tsid], stop[tsid])})
        ep = ep[ep["end"] >= ep["start"]]
        ep = _merge_episodes(ep)
        es, ee, esid = ep["start"].to_numpy(), ep["end"].to_numpy(), ep["sid"].to_numpy()
        if cfg.aggregation == "any":
            lo, hi = es // u, ee // u
        elif cfg.aggregation == "first-day":
            lo, hi = -(-es // u), ee // u
        else:
            lo, hi = es // u, ee // u
        bins, src = _expand_ranges(lo, hi)
        bsid = esid[src]
        ok = bins <= last[bsid]
        bins, src, bsid = bins[ok], src[ok], bsid[ok]
        rows = row_start[bsid] + bins
        if cfg.aggregation == "majority":
            first = bins * u
            final = np.minimum((bins + 1) * u - 1, stop[bsid])
            covered = np.minimum(ee[src], final) - np.maximum(es[src], first) + 1
            cov_days = np.bincount(rows, weights=np.maximum(covered, 0), minlength=n_rows)
            observed = np.minimum((t + 1) * u - 1, stop[sid]) - t * u + 1
            a_treat = (2 * cov_days > observed).astype(np.int64)
        else:
            a_treat[rows] = 1

    names = list(cfg.covariate_names) if cfg.covariate_names is not None else cohort.covariate_names()
    values = np.zeros((n_rows, len(names)))
    imputed = np.ones((n_rows, len(names)))
    cov = cohort.cov
    if len(names) and not cov.empty:
        cov = cov[cov["subject_id"].isin(idx.index) & cov["name"].isin(names)]
        csid = idx.loc[cov["subject_id"]].to_numpy()
        rec = pd.DataFrame({"sid": csid, "day": cov["day"].to_numpy(dtype=np.int64) - entry[csid],
                            "name": cov["name"].to_numpy(), "value": cov["value"].to_numpy(dtype=float),
                            "order": np.arange(len(cov))})
        grid = pd.DataFrame({"sid": sid, "day": t * u, "row": np.arange(n_rows)})
        grid = grid.sort_values("day", kind="stable")
        for j, name in enumerate(names):
            r = rec[rec["name"] == name].sort_values(["day", "order"], kind="stable")
            if r.empty:
                continue
            r = r.assign(obs_day=r["day"])[["sid", "day", "value", "obs_day"]]
            m = pd.merge_asof(grid, r, on="day", by="sid", direction="backward")
            rows = m["row"].to_numpy()
            v = m["value"].to_numpy()
            seen = ~np.isnan(v)
            values[rows, j] = np.where(seen, v, 0.0)
            fresh = seen & (m["obs_day"].to_numpy() > m["day"].to_numpy() - u)
            imputed[rows, j] = np.where(fresh, 0.0, 1.0)
    cols = [values]
    cov_names = list(names)
    if cfg.impute_indicators:
        cols.append(imputed)
        cov_names += [f"{c}_imp" for c in names]
    X = np.hstack(cols) if cov_names else np.zeros((n_rows, 0))
    ids = sub["subject_id"].to_numpy()
    ds = LongDataset(subject_id=ids[sid], t=t, covariates=X, a_treat=a_treat, a_cens=a_cens, y=y,
                     covariate_names=cov_names)
    require_valid(ds)
    return ds


def coarsen(stream: DailyEventStream, cfg: CoarsenConfig) -> LongDataset:
    """Rows of a single subject."""
    bad = stream.violations()
    if bad:
        raise SchemaError(f"subject {stream.subject_id!r}: {bad[0]}")
    return coarsen_cohort(DailyCohort.from_streams([stream]), cfg)


def coarsen_dataset(streams, cfg: CoarsenConfig) -> LongDataset:
    """Coarsen a collection of streams (or a :class:`DailyCohort`)."""
    cohort = streams if isinstance(streams, DailyCohort) else DailyCohort.from_streams(streams)
    return coarsen_cohort(cohort, cfg)


# --------------------------------------------------------------------------- I/O

DAILY_COLUMNS = ["subject_id", "record", "day", "name", "value", "day_end", "cause"]


def write_daily_csv(cohort: DailyCohort, path) -> None:
    """One record per line: ``entry``, ``end``, ``cov``, ``treat``, ``fail``, ``cens``."""
    s = cohort.subjects
    parts = [
        pd.DataFrame({"subject_id": s["subject_id"], "record": "entry", "day": s["entry"]}),
        pd.DataFrame({"subject_id": s["subject_id"], "record": "end", "day": s["end"]}),
        pd.DataFrame({"subject_id": cohort.cov["subject_id"], "record": "cov", "day": cohort.cov["day"],
                      "name": cohort.cov["name"], "value": cohort.cov["value"]}),
        pd.DataFrame({"subject_id": cohort.treat["subject_id"], "record": "treat",
                      "day": cohort.treat["start"], "day_end": cohort.treat["end"]}),
    ]
    f = s[s["fail"].notna()]
    parts.append(pd.DataFrame({"subject_id": f["subject_id"], "record": "fail", "day": f["fail"]}))
    c = s[s["cens"].notna()]
    inv = {int(v): k for k, v in CAUSES.items()}
    parts.append(pd.DataFrame({"subject_id": c["subject_id"], "record": "cens", "day": c["cens"],
                               "cause": [inv[int(x)] for x in c["cause"]]}))
    df = pd.concat([p for p in parts if len(p)], ignore_index=True).reindex(columns=DAILY_COLUMNS)
    for col in ("day", "day_end"):
        df[col] = df[col].astype("Int64")
    df.to_csv(path, index=False)


def read_daily_csv(path) -> DailyCohort:
    df = pd.read_csv(path, dtype={"subject_id": str, "record": str, "name": str, "cause": str},
                     float_precision="round_trip")
    missing = [c for c in ("subject_id", "record", "day") if c not in df.columns]
    if missing:
        raise SchemaError(f"daily file lacks column(s) {missing}")
    unknown = set(df["record"].unique()) - set(RECORD_TYPES)
    if unknown:
        raise SchemaError(f"unknown record type(s) {sorted(unknown)}")
    ids = pd.unique(df["subject_id"])
    by = {r: df[df["record"] == r] for r in RECORD_TYPES}

    def first_day(r):
        d = by[r].drop_duplicates("subject_id").set_index("subject_id")["day"]
        return d.reindex(ids)

    entry = first_day("entry").fillna(0)
    end = first_day("end")
    if end.isna().any():
        raise SchemaError(f"subject {end.index[end.isna()][0]!r} has no end record")
    cens = by["cens"].drop_duplicates("subject_id").set_index("subject_id")
    bad = set(cens["cause"].dropna()) - set(CAUSES)
    if bad:
        raise SchemaError(f"unknown censoring cause(s) {sorted(bad)}")
    subjects = pd.DataFrame({
        "subject_id": ids, "entry": entry.to_numpy(dtype=np.int64), "end": end.to_numpy(dtype=np.int64),
        "fail": first_day("fail").to_numpy(dtype=float),
        "cens": cens["day"].reindex(ids).to_numpy(dtype=float),
        "cause": [int(CAUSES.get(c, CensCause.DISENROLL)) if isinstance(c, str) else int(CensCause.DISENROLL)
                  for c in cens["cause"].reindex(ids)],
    })
    cov = by["cov"][["subject_id", "day", "name", "value"]].astype({"day": np.int64, "value": float})
    treat = by["treat"].rename(columns={"day": "start", "day_end": "end"})[["subject_id", "start", "end"]]
    treat = treat.astype({"start": np.int64, "end": np.int64})
    return DailyCohort(subjects, cov.reset_index(drop=True), treat.reset_index(drop=True))
