"""Long-format person-time data and the reduced summary representation.

A :class:`LongDataset` stores one row per (subject, interval) in columnar
numpy arrays sorted by subject and then by interval.  Rows past a subject's
last observed interval are never materialized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from .errors import SchemaError

REQUIRED_COLUMNS = ("subject_id", "t", "a_treat", "a_cens", "y")


class CensCause(IntEnum):
    NONE = 0
    DISENROLL = 1
    DEATH = 2
    ADMIN = 3


@dataclass(frozen=True)
class PersonTimeRow:
    subject_id: Hashable
    t: int
    covariates: tuple
    a_treat: int
    a_cens: int = 0
    y: float | None = 0.0


@dataclass(frozen=True)
class Violation:
    subject_id: Hashable
    t: int
    message: str


def _within_subject_cumsum(values: np.ndarray, start: np.ndarray, sid: np.ndarray) -> np.ndarray:
    """Cumulative sum of ``values`` restarting at each subject's first row."""
    cs = np.cumsum(values)
    offset = np.concatenate(([0], cs))[start]
    return cs - offset[sid]


class LongDataset:
    """Immutable long-format person-time table.

    Parameters
    ----------
    subject_id : array-like
        Subject identifier per row (any hashable values).
    t : array-like of int
        Interval index per row.
    covariates : array-like, shape (n_rows, p)
        Dense real-valued covariates ``L(t)``.
    a_treat, a_cens : array-like of int
        Treatment ``A^T(t)`` and censoring code (see :class:`CensCause`).
    y : array-like of float
        Outcome ``Y(t)``; NaN where the row is censored.
    covariate_names : sequence of str
    """

    def __init__(self, subject_id, t, covariates, a_treat, a_cens, y, covariate_names):
        subject_id = np.asarray(subject_id)
        n = subject_id.shape[0]
        if n == 0:
            raise SchemaError("dataset has no rows")
        if len(covariate_names) == 0:
            covariates = np.zeros((n, 0))
        covariates = np.asarray(covariates, dtype=float).reshape(n, -1)
        if covariates.shape[1] != len(covariate_names):
            raise SchemaError(
                f"covariate matrix has {covariates.shape[1]} columns but "
                f"{len(covariate_names)} names were given"
            )
        arrays = [np.asarray(a) for a in (t, a_treat, a_cens, y)]
        if any(a.shape != (n,) for a in arrays):
            raise SchemaError("all row-level columns must have the same length")

        codes, uniques = pd.factorize(pd.Series(subject_id), sort=False)
        t = np.asarray(t)
        if not np.issubdtype(t.dtype, np.integer):
            t_float = t.astype(float)
            if np.any(t_float != np.round(t_float)):
                raise SchemaError("interval index t must be integer valued")
        t = t.astype(np.int64)
        order = np.lexsort((t, codes))

        self.covariate_names = tuple(covariate_names)
        self.sid = codes[order].astype(np.int64)
        self.subject_ids = np.asarray(uniques, dtype=object)
        self.t = t[order]
        self.X = covariates[order]
        self.a_treat = np.asarray(a_treat)[order].astype(np.int64)
        self.a_cens = np.asarray(a_cens)[order].astype(np.int64)
        self.y = np.asarray(y, dtype=float)[order]
        for arr in (self.sid, self.t, self.X, self.a_treat, self.a_cens, self.y):
            arr.setflags(write=False)

        counts = np.bincount(self.sid, minlength=len(self.subject_ids))
        self.length = counts
        self.start = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.length.setflags(write=False)
        self.start.setflags(write=False)

    # -- shape ---------------------------------------------------------------
    @property
    def n_rows(self) -> int:
        return self.sid.shape[0]

    @property
    def n_subjects(self) -> int:
        return self.subject_ids.shape[0]

    @property
    def last_row(self) -> np.ndarray:
        return self.start + self.length - 1

    @property
    def t_tilde(self) -> np.ndarray:
        """Last observed interval per subject."""
        return self.t[self.last_row]

    @property
    def max_t(self) -> int:
        return int(self.t.max())

    @cached_property
    def first_row_of_row(self) -> np.ndarray:
        return self.start[self.sid]

    @cached_property
    def is_first(self) -> np.ndarray:
        out = np.zeros(self.n_rows, dtype=bool)
        out[self.start] = True
        return out

    @cached_property
    def is_last(self) -> np.ndarray:
        out = np.zeros(self.n_rows, dtype=bool)
        out[self.last_row] = True
        return out

    def rows_at(self, k: int) -> np.ndarray:
        """Row indices of interval ``k`` (one per subject with ``T~ >= k``).

        Relies on consecutive intervals starting at 0, i.e. a valid dataset.
        """
        return (self.start + k)[self.t_tilde >= k]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown covariate column {name!r}") from None
        return self.X[:, j]

    def within_subject_cumsum(self, values) -> np.ndarray:
        return _within_subject_cumsum(np.asarray(values), self.start, self.sid)

    def lag(self, values, fill=0.0) -> np.ndarray:
        """Shift a row-aligned array by one interval within subject."""
        values = np.asarray(values, dtype=float)
        out = np.empty_like(values)
        out[1:] = values[:-1]
        out[self.is_first] = fill
        return out

    @cached_property
    def violations(self) -> list[Violation]:
        return _validate(self)

    # -- construction / io -----------------------------------------------------
    @classmethod
    def from_rows(cls, rows: Iterable[PersonTimeRow], covariate_names: Sequence[str]) -> "LongDataset":
        rows = list(rows)
        if not rows:
            raise SchemaError("dataset has no rows")
        p = len(covariate_names)
        for r in rows:
            if len(r.covariates) != p:
                raise SchemaError(
                    f"subject {r.subject_id!r} t={r.t}: expected {p} covariates, got {len(r.covariates)}"
                )
        return cls(
            subject_id=np.array([r.subject_id for r in rows], dtype=object),
            t=[r.t for r in rows],
            covariates=np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), p),
            a_treat=[r.a_treat for r in rows],
            a_cens=[int(r.a_cens) for r in rows],
            y=[np.nan if r.y is None else r.y for r in rows],
            covariate_names=covariate_names,
        )

    def iter_rows(self) -> Iterator[PersonTimeRow]:
        for i in range(self.n_rows):
            yi = self.y[i]
            yield PersonTimeRow(
                subject_id=self.subject_ids[self.sid[i]],
                t=int(self.t[i]),
                covariates=tuple(float(v) for v in self.X[i]),
                a_treat=int(self.a_treat[i]),
                a_cens=int(self.a_cens[i]),
                y=None if np.isnan(yi) else float(yi),
            )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, covariate_names: Sequence[str] | None = None) -> "LongDataset":
        missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
        if missing:
            raise SchemaError(f"missing required columns: {', '.join(missing)}")
        if covariate_names is None:
            covariate_names = [c for c in df.columns if c not in REQUIRED_COLUMNS]
        for c in covariate_names:
            if c not in df.columns:
                raise SchemaError(f"unknown covariate column {c!r}")
        y = pd.to_numeric(df["y"].replace("", np.nan), errors="raise").to_numpy(dtype=float)
        return cls(
            subject_id=df["subject_id"].to_numpy(dtype=object),
            t=df["t"].to_numpy(),
            covariates=df[list(covariate_names)].to_numpy(dtype=float).reshape(len(df), len(covariate_names)),
            a_treat=df["a_treat"].to_numpy(),
            a_cens=df["a_cens"].to_numpy(),
            y=y,
            covariate_names=covariate_names,
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "subject_id": self.subject_ids[self.sid],
                "t": self.t,
                "a_treat": self.a_treat,
                "a_cens": self.a_cens,
                "y": pd.array(np.where(np.isnan(self.y), 0, self.y).astype(int), dtype="Int64"),
            }
        )
        df.loc[np.isnan(self.y), "y"] = pd.NA
        for j, name in enumerate(self.covariate_names):
            df[name] = self.X[:, j]
        return df

    def equals(self, other: "LongDataset") -> bool:
        return (
            self.covariate_names == other.covariate_names
            and [str(s) for s in self.subject_ids] == [str(s) for s in other.subject_ids]
            and np.array_equal(self.sid, other.sid)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.a_treat, other.a_treat)
            and np.array_equal(self.a_cens, other.a_cens)
            and np.array_equal(self.y, other.y, equal_nan=True)
        )

    def subset_subjects(self, subjects: np.ndarray) -> "LongDataset":
        """Dataset restricted to the given subject indices (in the given order)."""
        subjects = np.asarray(subjects, dtype=np.int64)
        rows = np.concatenate([np.arange(self.start[s], self.start[s] + self.length[s]) for s in subjects])
        return LongDataset(
            self.subject_ids[self.sid[rows]], self.t[rows], self.X[rows], self.a_treat[rows],
            self.a_cens[rows], self.y[rows], self.covariate_names,
        )

    def __repr__(self) -> str:
        return (
            f"LongDataset(n_subjects={self.n_subjects}, n_rows={self.n_rows}, "
            f"max_t={self.max_t}, covariates={list(self.covariate_names)})"
        )


def read_csv(path) -> LongDataset:
    """Parse the comma-separated long format (``y`` empty when censored)."""
    df = pd.read_csv(path, dtype={"subject_id": str}, keep_default_na=False, na_values={"y": [""]},
                     float_precision="round_trip")
    return LongDataset.from_frame(df)


def write_csv(dataset: LongDataset, path) -> None:
    df = dataset.to_frame()
    df["subject_id"] = df["subject_id"].astype(str)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, na_rep="")


def validate(dataset: LongDataset) -> list[Violation]:
    """Every invariant violation in ``dataset``; an empty list means well-formed."""
    return list(dataset.violations)


def _validate(ds: LongDataset) -> list[Violation]:
    out: list[tuple[int, int, str]] = []
    sid, t = ds.sid, ds.t
    first, last = ds.is_first, ds.is_last

    def flag(mask, message):
        for i in np.flatnonzero(mask):
            out.append((int(sid[i]), int(t[i]), message))

    flag(first & (t != 0), "t does not start at 0")
    dt = np.diff(t)
    same = sid[1:] == sid[:-1]
    flag(np.concatenate(([False], same & (dt == 0))), "duplicate t")
    flag(np.concatenate(([False], same & (dt > 1))), "non-consecutive t")
    flag(~np.isin(ds.a_treat, (0, 1)), "a_treat not binary")
    flag(~np.isin(ds.a_cens, [c.value for c in CensCause]), "unknown censoring code")
    censored = ds.a_cens != CensCause.NONE
    flag(censored & ~last, "row after censoring")
    y = ds.y
    has_y = ~np.isnan(y)
    flag(has_y & ~np.isin(np.where(has_y, y, 0.0), (0.0, 1.0)), "y not binary")
    flag((y == 1) & ~last, "row after failure")
    flag(censored & has_y, "outcome present on censored row")
    flag(~censored & ~has_y, "outcome missing on uncensored row")
    flag(~np.all(np.isfinite(ds.X), axis=1), "non-finite covariate")
    out.sort()
    return [Violation(ds.subject_ids[s], k, msg) for s, k, msg in out]


def require_valid(dataset: LongDataset) -> None:
    v = dataset.violations
    if v:
        head = "; ".join(f"subject {x.subject_id!r} t={x.t}: {x.message}" for x in v[:5])
        raise SchemaError(f"dataset has {len(v)} invariant violation(s): {head}")


@dataclass(frozen=True)
class SummaryMap:
    """Declarative choice of the fixed-dimension history summary ``f_k``.

    ``baseline`` columns are taken at ``t = 0``, ``current`` columns at ``t = k``,
    each ``(name, depth)`` in ``lags`` gives ``L(k - depth)`` (0 before entry),
    and ``lag_treatment`` appends ``A(k-1)`` with ``A(-1) = 0``.  ``None`` for
    ``baseline``/``current`` means all covariates.
    """

    baseline: tuple | None = None
    current: tuple | None = None
    lags: tuple = ()
    lag_treatment: bool = True

    def columns(self, covariate_names: Sequence[str]) -> list[str]:
        base = list(covariate_names) if self.baseline is None else list(self.baseline)
        cur = list(covariate_names) if self.current is None else list(self.current)
        cols = [f"{c}_0" for c in base] + list(cur)
        cols += [f"{c}_lag{d}" for c, d in self.lags]
        if self.lag_treatment:
            cols.append("a_treat_lag1")
        return cols

    def transform(self, dataset: LongDataset) -> np.ndarray:
        """Row-aligned summary matrix for every row of ``dataset``."""
        names = dataset.covariate_names
        base = list(names) if self.baseline is None else list(self.baseline)
        cur = list(names) if self.current is None else list(self.current)
        for c in base + cur + [c for c, _ in self.lags]:
            if c not in names:
                raise SchemaError(f"unknown covariate column {c!r} in summary map")
        blocks = []
        if base:
            idx = [names.index(c) for c in base]
            blocks.append(dataset.X[dataset.first_row_of_row][:, idx])
        if cur:
            blocks.append(dataset.X[:, [names.index(c) for c in cur]])
        for c, depth in self.lags:
            col = dataset.X[:, names.index(c)]
            src = np.arange(dataset.n_rows) - depth
            ok = dataset.t >= depth
            blocks.append(np.where(ok, col[np.clip(src, 0, None)], 0.0)[:, None])
        if self.lag_treatment:
            blocks.append(dataset.lag(dataset.a_treat)[:, None])
        if not blocks:
            return np.zeros((dataset.n_rows, 0))
        return np.hstack(blocks).astype(float)


@dataclass(frozen=True)
class SummaryBlock:
    k: int
    rows: np.ndarray
    subjects: np.ndarray
    values: np.ndarray
    columns: list = field(default_factory=list)


def build_summary(dataset: LongDataset, summary_map: SummaryMap, k: int) -> SummaryBlock:
    """Design matrix ``f_k(L'(k))`` for every subject with ``T~ >= k``."""
    if k < 0 or k > dataset.max_t:
        raise ValueError(f"k={k} outside [0, {dataset.max_t}]")
    rows = dataset.rows_at(k)
    full = summary_map.transform(dataset)
    return SummaryBlock(
        k=k,
        rows=rows,
        subjects=dataset.sid[rows],
        values=full[rows],
        columns=summary_map.columns(dataset.covariate_names),
    )
