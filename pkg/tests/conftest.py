from __future__ import annotations

import json
import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from coco_at1p import data_path  # noqa: E402
from coco_at1p.config import RunConfig  # noqa: E402
from coco_at1p.market import MarketSnapshot, load_cds_quotes  # noqa: E402

DATA = Path(__file__).resolve().parent / "data"

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {title}" +
                            (f" | {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def lloyds_cfg() -> RunConfig:
    return RunConfig.load(data_path("lloyds.cfg"))


@pytest.fixture(scope="session")
def lloyds_snapshot(lloyds_cfg) -> MarketSnapshot:
    return lloyds_cfg.snapshot()


@pytest.fixture(scope="session")
def cds_only_snapshot() -> MarketSnapshot:
    return MarketSnapshot(date(2010, 12, 15), 0.0054, load_cds_quotes(data_path("lloyds_cds.csv")))


@pytest.fixture(scope="session")
def lloyds_full_report(lloyds_cfg, lloyds_snapshot):
    from coco_at1p.calibration import calibrate_full
    return calibrate_full(lloyds_snapshot, lloyds_cfg.coco(), lloyds_cfg.capital_model(), seed=0)


@pytest.fixture(scope="session")
def lloyds_params(lloyds_full_report):
    return lloyds_full_report.params


@pytest.fixture(scope="session")
def oracle_mc() -> dict:
    return json.loads((DATA / "oracle_mc.json").read_text())


SYNTHETIC_TRUE = dict(B=0.5, H=0.6, sigmas=(0.2, 0.15, 0.18, 0.2, 0.22, 0.18, 0.2))


@pytest.fixture(scope="session")
def synthetic_case(lloyds_cfg):
    """Snapshot whose CDS strip, capital ratio and equity value come from known parameters."""
    from coco_at1p.at1p import At1pParams, VolTermStructure
    from coco_at1p.capital import capital_ratio_proxy
    from coco_at1p.cds import par_spreads
    from coco_at1p.equity import equity_value
    from coco_at1p.market import CdsQuote

    tenors = (1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 10.0)
    val = date(2010, 12, 15)
    coco, cap = lloyds_cfg.coco(), lloyds_cfg.capital_model()
    true = At1pParams(B=SYNTHETIC_TRUE["B"], H=SYNTHETIC_TRUE["H"],
                      vol=VolTermStructure(tenors, SYNTHETIC_TRUE["sigmas"]), r=0.0054)
    spreads = par_spreads(true, tenors, 0.4)
    T = (coco.maturity_date - val).days / 365.0
    snap = MarketSnapshot(val, 0.0054, [CdsQuote(t, float(s)) for t, s in zip(tenors, spreads)],
                          equity_observable=float(equity_value(true, 0.0, 1.0, T)), share_price=0.65,
                          reported_capital_ratio=float(capital_ratio_proxy(cap, 1.0, true.H)), recovery_R=0.4)
    return true, snap, coco, cap


@pytest.fixture(scope="session")
def synthetic_full_report(synthetic_case):
    from coco_at1p.calibration import calibrate_full
    _, snap, coco, cap = synthetic_case
    return calibrate_full(snap, coco, cap, seed=0)
