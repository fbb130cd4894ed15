from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longtmle import PositivityError, Regime, compute_weights, fit_g, ipw_estimate
from longtmle.oracle import default_scenario, simulate
from test_tmle import ConstG, ObservedIsCertain, _adherent_cohort


@pytest.fixture(scope="module")
def sim():
    sc = default_scenario()
    ds = simulate(sc.dgp, 600, seed=3)
    return sc, ds, fit_g(ds, sc.g_map_correct)


def test_unit_weights_give_empirical_hazards():
    ds = _adherent_cohort()
    r = Regime(7.5)
    wt = compute_weights(ds, ObservedIsCertain(), r)
    fit = ipw_estimate(ds, r, wt, ds.max_t)
    at_risk = np.bincount(ds.t)
    fails = np.bincount(ds.t, weights=(ds.y == 1))
    np.testing.assert_allclose(fit.hazards, fails / at_risk, rtol=0, atol=1e-14)
    failed_by = np.cumsum(fails) / ds.n_subjects
    np.testing.assert_allclose(fit.risk_curve, failed_by, atol=1e-12)


def test_inactive_truncation_is_identity(sim):
    sc, ds, g = sim
    r = sc.regimes[1]
    raw = compute_weights(ds, g, r)
    cap = float(raw.weight.max()) * 2
    capped = compute_weights(ds, g, r, truncation=cap)
    a = ipw_estimate(ds, r, raw, 7)
    b = ipw_estimate(ds, r, capped, 7)
    np.testing.assert_array_equal(a.risk_curve, b.risk_curve)


@settings(max_examples=60)
@given(seed=st.integers(0, 10_000), spread=st.floats(0.0, 6.0))
def test_risk_bounded_and_monotone_for_any_weights(sim, seed, spread):
    sc, ds, g = sim
    r = sc.regimes[2]
    base = compute_weights(ds, g, r)
    rng = np.random.default_rng(seed)
    w = base.indicator * np.exp(spread * rng.standard_normal(ds.n_rows))
    fit = ipw_estimate(ds, r, replace(base, weight=w), 7)
    assert np.all((fit.hazards >= 0) & (fit.hazards <= 1))
    assert np.all((fit.risk_curve >= 0) & (fit.risk_curve <= 1))
    assert np.all(np.diff(fit.risk_curve) >= -1e-15)


def test_zero_mass_raises_positivity(sim):
    sc, ds, g = sim
    r = sc.regimes[0]
    wt = compute_weights(ds, g, r)
    w = wt.weight.copy()
    w[ds.t == 4] = 0.0
    with pytest.raises(PositivityError) as exc:
        ipw_estimate(ds, r, replace(wt, weight=w), 6)
    assert exc.value.k == 4
    assert ipw_estimate(ds, r, replace(wt, weight=w), 3).psi_hat >= 0


def test_bootstrap_reproducible_and_paired(sim):
    sc, ds, g = sim
    r1, r2 = sc.regimes[0], sc.regimes[3]
    w1 = compute_weights(ds, g, r1, truncation=40, stabilize=True)
    w2 = compute_weights(ds, g, r2, truncation=40, stabilize=True)
    a = ipw_estimate(ds, r1, w1, 7, n_boot=60, seed=9)
    b = ipw_estimate(ds, r1, w1, 7, n_boot=60, seed=9)
    np.testing.assert_array_equal(a.boot_risks, b.boot_risks)
    assert a.se > 0 and np.isfinite(a.se)
    c = ipw_estimate(ds, r2, w2, 7, n_boot=60, seed=9)
    # same seed, same multinomial resample counts for every regime
    counts = np.random.default_rng(9).multinomial(ds.n_subjects, np.full(ds.n_subjects, 1 / ds.n_subjects))
    unc = ds.a_cens == 0
    for fit, wt in ((a, w1), (c, w2)):
        w = wt.weight * counts[ds.sid] * unc
        num = np.bincount(ds.t, weights=w * (ds.y == 1))
        den = np.bincount(ds.t, weights=w)
        np.testing.assert_allclose(fit.boot_risks[0], 1 - np.cumprod(1 - num / den), rtol=1e-12)
    assert ipw_estimate(ds, r1, w1, 7).se is None


def test_argument_checks(sim):
    sc, ds, g = sim
    wt = compute_weights(ds, ConstG(0.5), sc.regimes[0])
    with pytest.raises(ValueError):
        ipw_estimate(ds, sc.regimes[1], wt, 3)
    with pytest.raises(ValueError):
        ipw_estimate(ds, sc.regimes[0], wt, ds.max_t + 1)
