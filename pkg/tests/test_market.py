import math
from datetime import date

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coco_at1p import data_path
from coco_at1p.errors import InvalidIntervalError, ParseError, SchemaError, ValidationError
from coco_at1p.market import (CdsQuote, MarketSnapshot, discount_factor, load_balance_sheet_panel,
                              load_cds_quotes, save_cds_quotes, year_fraction)

HEADER = "entity_id,date,rating_class,tier1_ratio,total_assets,total_liabilities\n"


def test_discount_identity():
    assert discount_factor(0.0054, 0.0, 0.0) == 1.0


def test_discount_one_year():
    assert discount_factor(0.0054, 0, 1) == pytest.approx(0.994615, abs=5e-7)


def test_discount_against_high_precision():
    expected = float(mpmath.exp(-mpmath.mpf("0.0054") * 9))
    assert discount_factor(0.0054, 1, 10) == pytest.approx(expected, rel=1e-15)


def test_discount_rejects_reversed_interval():
    with pytest.raises(InvalidIntervalError):
        discount_factor(0.01, 2.0, 1.0)


def test_discount_vectorised():
    T = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(discount_factor(0.03, 0.0, T), np.exp(-0.03 * T), rtol=1e-15)


@given(r=st.floats(-0.05, 0.2), t=st.floats(0, 30), a=st.floats(0, 30), b=st.floats(0, 30))
def test_discount_semigroup(r, t, a, b):
    T, U = t + a, t + a + b
    lhs = discount_factor(r, t, T) * discount_factor(r, T, U)
    assert lhs == pytest.approx(discount_factor(r, t, U), rel=1e-14)


def test_year_fraction_act365():
    assert year_fraction(date(2010, 12, 15), date(2011, 12, 15)) == 1.0
    assert year_fraction(date(2011, 1, 1), date(2010, 12, 31)) == -1 / 365


def test_lloyds_quotes():
    quotes = load_cds_quotes(data_path("lloyds_cds.csv"))
    assert len(quotes) == 7
    five = [q for q in quotes if q.tenor_years == 5][0]
    assert five.spread == pytest.approx(0.0436386, abs=1e-7)


def test_empty_quote_file(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        load_cds_quotes(p)


def test_header_only_quote_file(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("tenor_years,spread_bps\n")
    with pytest.raises(ParseError):
        load_cds_quotes(p)


def test_unsorted_quotes_come_back_sorted(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("tenor_years,spread_bps\n5,400\n1,300\n3,350\n")
    assert [q.tenor_years for q in load_cds_quotes(p)] == [1, 3, 5]


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("tenor_years,spread_bps\n1,300\n2,abc\n")
    with pytest.raises(ParseError, match="line 3"):
        load_cds_quotes(p)


def test_duplicate_tenor(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("tenor_years,spread_bps\n1,300\n1,310\n")
    with pytest.raises(ValidationError, match="duplicate"):
        load_cds_quotes(p)


def test_missing_quote_column(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("tenor,spread_bps\n1,300\n")
    with pytest.raises(SchemaError):
        load_cds_quotes(p)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 50), st.floats(0.01, 5000)), min_size=1, max_size=12,
                unique_by=lambda t: t[0]))
def test_quote_round_trip(tmp_path_factory, rows):
    quotes = sorted((CdsQuote(t, s / 1e4) for t, s in rows), key=lambda q: q.tenor_years)
    p = tmp_path_factory.mktemp("rt") / "q.csv"
    save_cds_quotes(quotes, p)
    back = load_cds_quotes(p)
    assert [q.tenor_years for q in back] == [q.tenor_years for q in quotes]
    for a, b in zip(back, quotes):
        assert a.spread == pytest.approx(b.spread, rel=1e-12)


def test_quote_invariants():
    with pytest.raises(ValidationError):
        CdsQuote(0.0, 0.01)
    with pytest.raises(ValidationError):
        CdsQuote(1.0, 0.0)


def test_snapshot_invariants():
    q = [CdsQuote(1, 0.01)]
    with pytest.raises(ValidationError):
        MarketSnapshot(date(2010, 1, 1), 0.01, [])
    with pytest.raises(ValidationError):
        MarketSnapshot(date(2010, 1, 1), 0.01, q, recovery_R=1.0)
    with pytest.raises(ValidationError):
        MarketSnapshot(date(2010, 1, 1), 0.01, q, reported_capital_ratio=0.0)
    with pytest.raises(ValidationError):
        MarketSnapshot(date(2010, 1, 1), 0.01, [CdsQuote(2, 0.01), CdsQuote(1, 0.01)])


def test_snapshot_shifts():
    s = MarketSnapshot(date(2010, 1, 1), 0.01, [CdsQuote(1, 0.01), CdsQuote(2, 0.02)],
                       equity_observable=0.05, share_price=0.6)
    np.testing.assert_allclose(s.shift_cds(0.3).spreads, [0.013, 0.026])
    e = s.shift_equity(-0.1)
    assert e.equity_observable == pytest.approx(0.045)
    assert e.share_price == pytest.approx(0.54)
    assert e.spreads.tolist() == s.spreads.tolist()


def test_panel_three_rows(tmp_path):
    p = tmp_path / "bs.csv"
    p.write_text(HEADER + "a,2009-12-31,C,0.1,100,90\nb,2009-12-31,C,0.12,200,185\nc,2009-12-31,C,0.09,50,47\n")
    panel = load_balance_sheet_panel(p)
    assert len(panel) == 3 and not panel.rejects


def test_panel_rejects_zero_equity(tmp_path):
    p = tmp_path / "bs.csv"
    p.write_text(HEADER + "a,2009-12-31,C,0.1,100,90\nb,2009-12-31,C,0.12,200,200\n")
    panel = load_balance_sheet_panel(p)
    assert len(panel) == 1
    assert len(panel.rejects) == 1 and panel.rejects[0][0] == 3


def test_panel_grouping(tmp_path):
    rows = ["a,2009-12-31,A,0.1,100,90", "b,2009-12-31,C,0.1,100,91", "c,2009-12-31,C,0.1,100,92",
            "d,2010-12-31,C,0.1,100,93", "e,2010-12-31,A,0.1,100,94"]
    p = tmp_path / "bs.csv"
    p.write_text(HEADER + "\n".join(rows) + "\n")
    panel = load_balance_sheet_panel(p)
    assert len(panel.by_class("A")) == 2 and len(panel.by_class("C")) == 3
    counts = {k: len(v) for k, v in panel.groups().items()}
    assert counts == {("A", date(2009, 12, 31)): 1, ("A", date(2010, 12, 31)): 1,
                      ("C", date(2009, 12, 31)): 2, ("C", date(2010, 12, 31)): 1}
    assert sum(counts.values()) == len(rows)


def test_panel_missing_column(tmp_path):
    p = tmp_path / "bs.csv"
    p.write_text("entity_id,date,rating_class,tier1_ratio,total_assets\na,2009-12-31,C,0.1,100\n")
    with pytest.raises(SchemaError):
        load_balance_sheet_panel(p)


def test_panel_bad_date(tmp_path):
    p = tmp_path / "bs.csv"
    p.write_text(HEADER + "a,31/12/2009,C,0.1,100,90\n")
    with pytest.raises(ParseError, match="line 2"):
        load_balance_sheet_panel(p)


def test_leverage():
    p = data_path("synthetic_panel.csv")
    panel = load_balance_sheet_panel(p)
    for rec in panel:
        assert rec.leverage == pytest.approx(rec.total_assets / (rec.total_assets - rec.total_liabilities))
        assert math.isfinite(rec.leverage) and rec.leverage > 1
