import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from longtmle import EstimateReport, Regime, SummaryMap, fit_g, risk_difference, tmle_estimate, wald
from longtmle.inference import eic, plugin_se
from longtmle.oracle import default_scenario, simulate


@pytest.fixture(scope="module")
def fits():
    sc = default_scenario()
    ds = simulate(sc.dgp, 700, seed=8)
    g = fit_g(ds, sc.g_map_correct)
    return sc, ds, {r.label: tmle_estimate(ds, r, g, SummaryMap(), 5) for r in sc.regimes}


def test_plugin_se_examples():
    assert plugin_se(np.zeros(50)) == 0.0
    v = np.tile([1.0, -1.0], 50)
    assert plugin_se(v) == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ValueError):
        plugin_se(np.zeros(1))


def test_wald_clipping_and_level():
    w = wald(0.02, None, se=0.05)
    assert w.ci_lo == 0.0 and w.ci_lo_raw == pytest.approx(0.02 - 1.959963984540054 * 0.05)
    assert w.ci_hi == pytest.approx(w.ci_hi_raw)
    w90 = wald(0.5, None, level=0.9, se=0.1)
    assert w90.ci_hi - w90.ci_lo == pytest.approx(2 * 1.6448536269514722 * 0.1)
    unclipped = wald(0.99, None, se=0.1, clip=False)
    assert unclipped.ci_hi > 1


def test_regime_against_itself(fits):
    _, _, f = fits
    fit = next(iter(f.values()))
    rd = risk_difference(fit, fit)
    assert rd.rd == 0.0 and rd.se == 0.0


def test_rd_variance_bounds_and_identity(fits):
    _, _, f = fits
    labels = sorted(f)
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            e1, e2 = f[a].eic.values, f[b].eic.values
            rd = risk_difference(f[a], f[b])
            s1, s2 = plugin_se(e1), plugin_se(e2)
            assert rd.se <= s1 + s2 + 1e-15
            n = e1.size
            cov = np.mean(e1 * e2) / n
            assert rd.se ** 2 == pytest.approx(s1 ** 2 + s2 ** 2 - 2 * cov, rel=1e-10, abs=1e-15)
            assert rd.rd == pytest.approx(f[a].psi_hat - f[b].psi_hat)


def test_centered_variance_identity(fits):
    _, _, f = fits
    for fit in f.values():
        d = fit.eic.values
        assert abs(np.mean(d * d) - np.var(d)) < 1e-12


def test_eic_structure(fits):
    _, ds, f = fits
    fit = next(iter(f.values()))
    e = fit.eic
    assert e.n == ds.n_subjects and e.components.shape == (ds.n_subjects, 6)
    np.testing.assert_allclose(e.d0.mean(), 0.0, atol=1e-12)
    full = np.zeros(ds.n_rows)
    full[fit.rows] = fit.row_weight
    np.testing.assert_array_equal(eic(fit, full).values, e.values)


@given(arrays(np.float64, st.integers(2, 200), elements=st.floats(-50, 50)))
def test_se_scales_with_eic(v):
    assert plugin_se(3 * v) == pytest.approx(3 * plugin_se(v), rel=1e-12, abs=1e-300)
    assert plugin_se(v) >= 0


def test_rd_requires_matching_horizons(fits):
    sc, ds, f = fits
    fit = next(iter(f.values()))
    other = tmle_estimate(ds, fit.regime, fit_g(ds), SummaryMap(), 4)
    with pytest.raises(ValueError):
        risk_difference(fit, other)


def test_report_round_trip_and_tables(fits, tmp_path):
    _, ds, f = fits
    rep = EstimateReport(metadata={"time_unit": "90 days"})
    fl = list(f.values())
    for fit in fl:
        rep.add_estimate("tmle", fit.regime, fit.t0, wald(fit.psi_hat, fit.eic), ds.n_subjects)
    rep.add_rd("tmle", fl[0].regime, fl[1].regime, 5, risk_difference(fl[0], fl[1]))
    text = rep.to_json(tmp_path / "e.json")
    back = EstimateReport.from_json(tmp_path / "e.json")
    assert back.to_json() == text
    assert json.loads(text)["estimates"][0]["se_method"] == "eic"
    paths = rep.write_tables(tmp_path / "tables")
    names = {p.name for p in paths}
    assert {"estimates.csv", "risk_differences.csv"} <= names
    assert sum(n.startswith("tmle_rd_") for n in names) == 1
    est = rep.estimates_frame()
    np.testing.assert_allclose(est["survival"], 1 - est["psi_hat"])
    assert Regime(7.5).label in set(est["regime"])
