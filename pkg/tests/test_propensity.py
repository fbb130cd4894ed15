import numpy as np
import pandas as pd
import pytest
from conftest import FIXTURE_NAMES, load_fixture
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit

from longtmle import CensCause, GConfig, LongDataset, Regime, SummaryMap, compute_weights, fit_g, weight_summary
from longtmle.learners import P_MIN, LearnerSpec
from longtmle.oracle import Dgp, Logit, default_scenario, simulate
from longtmle.propensity import GPredictions
from longtmle.superlearner import DslResult


class ConstG:
    """Every treatment probability is ``p``; no censoring hazards."""

    def __init__(self, p):
        self.p = p

    def predict_rows(self, ds):
        return GPredictions(np.full(ds.n_rows, self.p), {})


def frame(rows, names=("a1c",)):
    return LongDataset.from_frame(pd.DataFrame(rows, columns=["subject_id", "t", "a_treat", "a_cens", "y", *names]))


def test_two_points_half_probabilities_give_four():
    ds = frame([(1, 0, 0, 0, 0.0, 7.0), (1, 1, 1, 0, 0.0, 8.0)])
    wt = compute_weights(ds, ConstG(0.5), Regime(7.5))
    np.testing.assert_allclose(wt.weight, [2.0, 4.0])


def test_deviation_at_zero_kills_all_weights():
    ds = frame([(1, 0, 1, 0, 0.0, 7.0), (1, 1, 1, 0, 0.0, 8.0), (1, 2, 1, 0, 0.0, 8.0)])
    wt = compute_weights(ds, ConstG(0.5), Regime(7.5))
    np.testing.assert_array_equal(wt.weight, 0)


def test_truncation_caps_cumulative_weight():
    # three intervals, each followed with probability 350 ** (-1/3): raw weight 350
    rows = [(1, k, 0, 0, 0.0, 7.0) for k in range(3)]
    ds = frame(rows)
    p_follow = 1 / 350 ** (1 / 3)
    wt = compute_weights(ds, ConstG(1 - p_follow), Regime(7.5), truncation=200)
    assert wt.cum_weight[-1] == pytest.approx(350)
    assert wt.weight[-1] == 200
    assert wt.n_truncated == 1
    assert np.all(wt.weight <= 200)


def test_censoring_row_has_zero_weight():
    ds = frame([(1, 0, 0, 0, 0.0, 7.0), (1, 1, 0, CensCause.DEATH, np.nan, 7.0)])
    wt = compute_weights(ds, ConstG(0.5), Regime(7.5))
    assert wt.weight[0] == 2 and wt.weight[1] == 0


def test_factor_truncation_mode():
    ds = frame([(1, k, 0, 0, 0.0, 7.0) for k in range(4)])
    wt = compute_weights(ds, ConstG(0.9), Regime(7.5), truncation=5, truncation_mode="factor")
    np.testing.assert_allclose(wt.weight, [5, 25, 125, 625])
    with pytest.raises(ValueError):
        compute_weights(ds, ConstG(0.9), Regime(7.5), truncation_mode="row")


def test_fair_coin_treatment_models_near_half():
    dgp = Dgp(init=Logit(0.0), cont=Logit(0.0), disenroll=None, death=None, admin=None)
    ds = simulate(dgp, 5000, seed=1)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    p = g.predict_rows(ds).p_treat1
    assert np.mean(np.abs(p - 0.5)) < 0.02


def test_no_death_events_gives_p_min():
    ds = simulate(Dgp(death=None), 2000, seed=2)
    assert not np.any(ds.a_cens == CensCause.DEATH)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    h = g.predict_rows(ds).cens_hazard[CensCause.DEATH]
    np.testing.assert_allclose(h, P_MIN)
    assert "cens_death" in g.diagnostics


def test_admin_intercept_hazard_near_ten_percent():
    dgp = Dgp(disenroll=None, death=None, admin=Logit(float(logit(0.1))),
              outcome=Logit(-6.0), init=Logit(0.0), cont=Logit(0.0))
    ds = simulate(dgp, 5000, seed=3)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    h = g.predict_rows(ds).cens_hazard[CensCause.ADMIN]
    rate = np.mean(ds.a_cens == CensCause.ADMIN)
    np.testing.assert_allclose(h, rate, rtol=1e-9)
    assert abs(rate - 0.1) < 3 * np.sqrt(0.09 / ds.n_rows)


def test_empty_continuation_stratum_is_constant():
    ds = frame([(1, 0, 0, 0, 0.0, 7.0), (1, 1, 0, 0, 0.0, 7.0), (2, 0, 1, 0, 1.0, 8.0), (3, 0, 0, 0, 0.0, 6.0)])
    g = fit_g(ds, SummaryMap(baseline=(), current=("a1c",)))
    assert g.diagnostics["cont"].startswith("empty stratum")
    assert g.selections()["cont"] == "cont.constant"


def test_dsl_strategy_selects_from_library():
    ds = simulate(default_scenario().dgp, 600, seed=4)
    cfg = GConfig(strategy="dsl", library=(LearnerSpec("logistic-glm"), LearnerSpec("gbt", {"n_trees": 10})))
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")), cfg)
    assert isinstance(g.init_model, DslResult)
    assert set(g.selections().values()) <= {"glm", "gbt.n10.d3.lr0.1.ss1.cs1", "cens_death.constant",
                                            "cens_disenroll.constant", "admin.intercept"}


def test_weight_summary_shape():
    ds = simulate(default_scenario().dgp, 500, seed=5)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    wt = compute_weights(ds, g, Regime(7.5), truncation=200)
    s = weight_summary(ds, wt)
    assert list(s["k"]) == list(range(ds.max_t + 1))
    assert {"min", "p01", "median", "p99", "max", "mean"} <= set(s.columns)
    assert np.all(s["max"] <= 200)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from([7.0, 7.5, 8.0, 8.5]))
def test_positive_weight_support_shrinks(seed, theta):
    ds = simulate(default_scenario().dgp, 150, seed=seed)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    wt = compute_weights(ds, g, Regime(theta))
    pos = (wt.weight > 0).astype(int)
    same = ds.sid[1:] == ds.sid[:-1]
    assert np.all(np.diff(pos)[same] <= 0)
    # zero exactly when not following or censored
    np.testing.assert_array_equal(wt.weight > 0, wt.indicator == 1)


SUITE = [n for n in FIXTURE_NAMES if n != "overwrite_toy.csv"] + ["sim0", "sim1", "sim2"]


def _suite_dataset(name):
    if name.startswith("sim"):
        return simulate(default_scenario().dgp, 1000, seed=100 + int(name[3:]))
    return load_fixture(name)


@pytest.mark.parametrize("name", SUITE)
def test_stabilized_variance_not_larger(name):
    ds = _suite_dataset(name)
    g = fit_g(ds, SummaryMap(baseline=(), current=("w", "a1c")))
    for theta in (7.0, 7.5, 8.0, 8.5):
        r = Regime(theta)
        raw = compute_weights(ds, g, r)
        stab = compute_weights(ds, g, r, stabilize=True)
        assert np.var(stab.weight) <= np.var(raw.weight)
