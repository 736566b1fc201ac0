import logging
import math
from datetime import date

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coco_at1p import data_path
from coco_at1p.at1p import At1pParams, PathGrid, VolTermStructure, simulate_paths
from coco_at1p.capital import (CapitalRatioModel, RegressionResult, average_params, capital_ratio_proxy,
                               decorrelated_capital_ratio, estimate_x_std_profile, leverage_on_paths, ols_fit,
                               regress_panel)
from coco_at1p.errors import DegenerateError, DomainError, InsufficientDataError, ValidationError
from coco_at1p.market import BalanceSheetRecord, load_balance_sheet_panel

D = date(2009, 12, 31)


def records_for(X, c):
    # total assets 100, liabilities chosen so that A / (A - L) = X
    return [BalanceSheetRecord(f"e{i}", D, "C", ci, 100.0, 100.0 - 100.0 / xi) for i, (xi, ci) in enumerate(zip(X, c))]


def model(**kw):
    base = dict(rating_class="C", alpha_bar=0.2, beta_bar=-0.01)
    base.update(kw)
    return CapitalRatioModel(**base)


def test_noiseless_line():
    X = [5.0, 10.0, 15.0, 22.0, 30.0]
    res = ols_fit(records_for(X, [0.3 - 0.02 * x for x in X]))
    assert res.alpha == pytest.approx(0.3, abs=1e-12)
    assert res.beta == pytest.approx(-0.02, abs=1e-12)
    assert res.n_obs == 5 and res.rating_class == "C" and res.date == D


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(1.5, 80.0), st.floats(0.01, 0.5)), min_size=3, max_size=30,
                unique_by=lambda t: round(t[0], 3)))
def test_matches_normal_equations_and_orthogonal_residuals(rows):
    X = [x for x, _ in rows]
    c = [y for _, y in rows]
    recs = records_for(X, c)
    Xr = [r.leverage for r in recs]
    res = ols_fit(recs)
    a, b = oracles.normal_equations_ols(Xr, c)
    assert res.alpha == pytest.approx(a, abs=1e-10)
    assert res.beta == pytest.approx(b, abs=1e-10)
    eps = [ci - res.alpha - res.beta * xi for xi, ci in zip(Xr, c)]
    scale_c = sum(abs(v) for v in c)
    scale_xc = sum(abs(x * v) for x, v in zip(Xr, c))
    assert abs(float(mpmath.fsum(eps))) <= 1e-9 * scale_c
    assert abs(float(mpmath.fsum(e * x for e, x in zip(eps, Xr)))) <= 1e-9 * scale_xc


def test_singular_design():
    with pytest.raises(DegenerateError):
        ols_fit(records_for([10.0, 10.0], [0.1, 0.2]))


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        ols_fit(records_for([10.0], [0.1]))


def test_average_single_and_pair():
    r = RegressionResult("C", D, 0.25, -0.004, 5)
    assert average_params([r]) == (0.25, -0.004)
    a, b = average_params([RegressionResult("C", D, 0.2, -0.01, 3), RegressionResult("C", D, 0.4, -0.03, 3)])
    assert a == pytest.approx(0.3, abs=1e-15) and b == pytest.approx(-0.02, abs=1e-15)


def test_average_matches_summation_oracle():
    rng = np.random.default_rng(5)
    res = [RegressionResult("C", D, float(a), float(b), 4) for a, b in zip(rng.uniform(0.1, 0.3, 10),
                                                                            rng.uniform(-0.02, 0.0, 10))]
    a, b = average_params(res)
    assert a == pytest.approx(float(mpmath.fsum(r.alpha for r in res) / 10), abs=1e-14)
    assert b == pytest.approx(float(mpmath.fsum(r.beta for r in res) / 10), abs=1e-14)


def test_average_empty():
    with pytest.raises(InsufficientDataError):
        average_params([])


def test_panel_regression():
    panel = load_balance_sheet_panel(data_path("synthetic_panel.csv"))
    out = regress_panel(panel)
    assert set(out) == {"A", "C"}
    assert all(len(v) == 5 for v in out.values())
    a, b = average_params(out["C"])
    assert b < 0 and 0.1 < a < 0.3


def test_proxy_examples():
    m = model()
    assert capital_ratio_proxy(m, 0.5, 1.0) == 0.0
    assert capital_ratio_proxy(m, 2.0, 1.0) == pytest.approx(0.18, abs=1e-15)
    assert capital_ratio_proxy(m, 1.001, 1.0) == pytest.approx(-9.81, rel=1e-9)


def test_proxy_unbounded_below_near_barrier():
    m = model()
    vals = capital_ratio_proxy(m, 1.0 + np.geomspace(1e-1, 1e-8, 8), 1.0)
    assert np.all(np.diff(vals) < 0) and vals[-1] < -1e5


def test_decorrelated_special_cases():
    m1 = model(eta=1.0)
    assert decorrelated_capital_ratio(m1, 12.0, 3.0, 1.7) == 0.2 - 0.01 * 12.0
    m0 = model(eta=0.0)
    assert decorrelated_capital_ratio(m0, 12.0, 3.0, 1.7) == pytest.approx(0.2 - 0.01 * 3.0 * 1.7, abs=1e-15)
    assert decorrelated_capital_ratio(m0, 50.0, 3.0, 1.7) == decorrelated_capital_ratio(m0, 12.0, 3.0, 1.7)


def test_decorrelated_needs_dispersion():
    with pytest.raises(DegenerateError):
        decorrelated_capital_ratio(model(eta=0.5), 12.0, 0.0, 0.3)


def test_decorrelated_correlation_half():
    rng = np.random.default_rng(2)
    X = 10.0 + 2.0 * rng.standard_normal(100_000)
    C = decorrelated_capital_ratio(model(eta=0.5), X, X.std(ddof=1), rng.standard_normal(X.size))
    assert abs(np.corrcoef(C, X)[0, 1] - (-0.5)) < 0.05


def test_model_invariants():
    with pytest.raises(ValidationError):
        model(eta=1.2)
    with pytest.raises(ValidationError):
        model(trigger_cbar=0.0)
    with pytest.raises(ValidationError):
        model(std_mode="weekly")


def test_trigger_hypothesis():
    p = At1pParams(B=0.0, H=0.95, vol=VolTermStructure.flat(0.02))
    model(alpha_bar=0.2031, beta_bar=-0.005).check_trigger_hypothesis(p)  # 0.2031 - 0.005 * 20 > 0.05
    with pytest.raises(DomainError):
        model(alpha_bar=0.1, beta_bar=-0.005).check_trigger_hypothesis(p)


def test_std_profile_degenerate_dispersion():
    p = At1pParams(B=0.0, H=0.5, vol=VolTermStructure.flat(1e-200), r=0.01)
    grid = PathGrid(0.5, 2.0)
    prof = estimate_x_std_profile(simulate_paths(p, grid, 200, 0), p, grid)
    np.testing.assert_array_equal(prof, np.zeros(len(grid.times)))


def test_std_profile_two_paths_by_hand():
    p = At1pParams(B=0.0, H=0.5, vol=VolTermStructure.flat(0.2))
    grid = PathGrid(1.0, 1.0)
    paths = np.array([[1.0, 1.0], [1.0, 1.5]])
    prof = estimate_x_std_profile(paths, p, grid)
    X1 = 1.0 / (1.0 - 0.5)
    X2 = 1.5 / (1.5 - 0.5)
    assert prof[0] == 0.0
    assert prof[1] == pytest.approx(abs(X1 - X2) / math.sqrt(2.0), rel=1e-15)


def test_std_profile_matches_two_pass_oracle():
    p = At1pParams(B=0.3, H=0.6, vol=VolTermStructure((1.0, 2.0), (0.25, 0.15)), r=0.02)
    grid = PathGrid(0.5, 2.0)
    paths = simulate_paths(p, grid, 10_000, 9)
    prof = estimate_x_std_profile(paths, p, grid)
    X, mask = leverage_on_paths(paths, p.H * np.exp(0.02 * grid.times - 0.3 * p.vol.cumulative_variance(grid.times)))
    for k in range(1, len(grid.times)):
        expected = oracles.two_pass_std(X[mask[:, k], k])
        assert prof[k] == pytest.approx(expected, rel=1e-10)


def test_std_profile_carries_forward(caplog):
    p = At1pParams(B=0.0, H=0.5, vol=VolTermStructure.flat(0.2))
    grid = PathGrid(1.0, 3.0)
    paths = np.array([[1.0, 1.0, 0.4, 0.4], [1.0, 2.0, 0.45, 0.3]])
    with caplog.at_level(logging.WARNING):
        prof = estimate_x_std_profile(paths, p, grid)
    assert "carrying" in caplog.text
    assert prof[2] == prof[1] and prof[3] == prof[1]


def test_std_profile_shape_check():
    p = At1pParams(B=0.0, H=0.5, vol=VolTermStructure.flat(0.2))
    with pytest.raises(ValidationError):
        estimate_x_std_profile(np.ones((3, 5)), p, PathGrid(1.0, 3.0))
