import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from longtmle import LongDataset, Regime, rule_path


def one_subject(x, a):
    n = len(x)
    df = pd.DataFrame({"subject_id": 1, "t": range(n), "a_treat": a, "a_cens": 0, "y": 0.0, "a1c": x})
    return LongDataset.from_frame(df)


def test_rule_reproduced_exactly():
    rp = rule_path(one_subject([7.2, 6.8, 9.0], [0, 0, 1]), Regime(8.5))
    np.testing.assert_array_equal(rp.a_theta, [0, 0, 1])
    np.testing.assert_array_equal(rp.follows, [1, 1, 1])


def test_immediate_deviation():
    rp = rule_path(one_subject([9.0, 9.1, 8.0], [0, 0, 0]), Regime(7.0))
    np.testing.assert_array_equal(rp.follows, [0, 0, 0])


def test_always_treat():
    rp = rule_path(one_subject([5.0, 12.0, 7.0], [1, 1, 1]), Regime(-np.inf))
    np.testing.assert_array_equal(rp.follows, [1, 1, 1])
    assert Regime(-np.inf).label == "always" and Regime(np.inf).label == "never"


def test_strict_versus_inclusive_threshold():
    ds = one_subject([7.0, 7.0], [0, 0])
    assert rule_path(ds, Regime(7.0)).a_theta.tolist() == [0, 0]
    assert rule_path(ds, Regime(7.0, threshold_inclusive=True)).a_theta.tolist() == [1, 1]


def test_intensification_is_absorbing():
    rp = rule_path(one_subject([8.0, 6.0, 6.0], [1, 1, 0]), Regime(7.5))
    np.testing.assert_array_equal(rp.a_theta, [1, 1, 1])
    np.testing.assert_array_equal(rp.follows, [1, 1, 0])


def test_missing_biomarker():
    ds = one_subject([7.0], [0])
    with pytest.raises(Exception, match="hba1c"):
        rule_path(ds, Regime(7.0, biomarker="hba1c"))


def test_from_config():
    r = Regime.from_config({"theta": 7.5, "biomarker": "a1c"})
    assert r == Regime(7.5) and r.label == "d7.5"


paths = st.lists(st.tuples(st.floats(5, 11, allow_nan=False), st.integers(0, 1)), min_size=1, max_size=10)


@given(st.lists(paths, min_size=1, max_size=6), st.floats(5, 11), st.floats(5, 11))
def test_monotonicity_and_dominance(subjects, th1, th2):
    rows = [(s, t, a, 0, 0.0, x) for s, p in enumerate(subjects) for t, (x, a) in enumerate(p)]
    ds = LongDataset.from_frame(pd.DataFrame(rows, columns=["subject_id", "t", "a_treat", "a_cens", "y", "a1c"]))
    lo, hi = sorted((th1, th2))
    r_lo, r_hi = rule_path(ds, Regime(lo)), rule_path(ds, Regime(hi))
    same = ds.sid[1:] == ds.sid[:-1]
    for rp in (r_lo, r_hi):
        assert np.all(np.diff(rp.a_theta)[same] >= 0)
        assert np.all(np.diff(rp.follows)[same] <= 0)
    assert np.all(r_lo.a_theta >= r_hi.a_theta)
