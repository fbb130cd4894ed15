import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import overwrite_toy

from longtmle import (LongDataset, PersonTimeRow, SchemaError, SummaryMap, build_summary, read_csv, validate,
                      write_csv)


def frame(rows):
    return pd.DataFrame(rows, columns=["subject_id", "t", "a_treat", "a_cens", "y", "x"])


def test_wellformed_subject_has_no_violations():
    ds = LongDataset.from_frame(frame([(1, 0, 0, 0, 0, 7.0), (1, 1, 0, 0, 0, 7.1), (1, 2, 0, 0, 1, 7.2)]))
    assert validate(ds) == []


def test_gap_is_one_violation():
    ds = LongDataset.from_frame(frame([(1, 0, 0, 0, 0, 7.0), (1, 2, 0, 0, 0, 7.1)]))
    v = validate(ds)
    assert [x.message for x in v] == ["non-consecutive t"]
    assert v[0].subject_id == 1 and v[0].t == 2


def test_row_after_failure_is_one_violation():
    ds = LongDataset.from_frame(frame([(1, 0, 0, 0, 1, 7.0), (1, 1, 0, 0, 0, 7.1)]))
    assert [x.message for x in validate(ds)] == ["row after failure"]


def test_row_after_censoring_and_missing_outcome():
    ds = LongDataset.from_frame(frame([(1, 0, 0, 2, np.nan, 7.0), (1, 1, 0, 0, np.nan, 7.1)]))
    msgs = sorted(x.message for x in validate(ds))
    assert msgs == ["outcome missing on uncensored row", "row after censoring"]


def test_empty_dataset_rejected():
    with pytest.raises(SchemaError):
        LongDataset.from_rows([], ["x"])


def test_covariate_length_mismatch_rejected():
    rows = [PersonTimeRow(1, 0, (1.0,), 0), PersonTimeRow(1, 1, (1.0, 2.0), 0)]
    with pytest.raises(SchemaError, match="expected 1 covariates"):
        LongDataset.from_rows(rows, ["x"])


def test_missing_required_column():
    with pytest.raises(SchemaError, match="a_cens"):
        LongDataset.from_frame(pd.DataFrame({"subject_id": [1], "t": [0], "a_treat": [0], "y": [0]}))


def test_n_subjects_counts_distinct_ids():
    ds = overwrite_toy()
    assert ds.n_subjects == 3 and ds.n_rows == 5


def test_build_summary_k0_default_map():
    ds = overwrite_toy()
    block = build_summary(ds, SummaryMap(), 0)
    assert block.columns == ["l_0", "l", "a_treat_lag1"]
    # at k = 0 baseline and current coincide and A(-1) = 0
    np.testing.assert_array_equal(block.values[:, 0], block.values[:, 1])
    assert np.all(block.values[:, 2] == 0)


def test_build_summary_toy_at_risk_rows():
    ds = overwrite_toy()
    block = build_summary(ds, SummaryMap(), 1)
    assert block.values.shape[0] == 2
    assert [ds.subject_ids[s] for s in block.subjects] == [2, 3]


def test_build_summary_unknown_column():
    with pytest.raises(SchemaError, match="nope"):
        build_summary(overwrite_toy(), SummaryMap(current=("nope",)), 0)


def test_summary_map_lags_pad_with_zero():
    ds = LongDataset.from_frame(frame([(1, 0, 1, 0, 0, 7.0), (1, 1, 1, 0, 0, 8.0), (1, 2, 0, 0, 0, 9.0)]))
    Z = SummaryMap(baseline=(), current=("x",), lags=(("x", 1), ("x", 2))).transform(ds)
    np.testing.assert_array_equal(Z, [[7, 0, 0, 0], [8, 7, 0, 1], [9, 8, 7, 1]])


@st.composite
def datasets(draw):
    n = draw(st.integers(1, 12))
    rows = []
    for s in range(n):
        length = draw(st.integers(1, 5))
        end = draw(st.sampled_from(["fail", "cens", "open"]))
        for t in range(length):
            last = t == length - 1
            a = draw(st.integers(0, 1))
            x = draw(st.floats(-5, 5, allow_nan=False, width=32))
            if last and end == "cens":
                rows.append((f"s{s}", t, a, draw(st.integers(1, 3)), np.nan, x))
            else:
                rows.append((f"s{s}", t, a, 0, float(last and end == "fail"), x))
    return LongDataset.from_frame(frame(rows))


@given(datasets())
def test_csv_round_trip(tmp_path_factory, ds):
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, path)
    back = read_csv(path)
    assert validate(back) == []
    assert back.equals(ds)


@given(datasets())
def test_summary_rows_non_increasing_in_k(ds):
    counts = [build_summary(ds, SummaryMap(), k).values.shape[0] for k in range(ds.max_t + 1)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    m = SummaryMap(lags=(("x", 2),))
    assert len({build_summary(ds, m, k).values.shape[1] for k in range(ds.max_t + 1)}) == 1
