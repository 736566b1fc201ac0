"""Market and balance-sheet inputs, flat-rate discounting and file loaders."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidIntervalError, ParseError, SchemaError, ValidationError

DAYS_PER_YEAR = 365.0
DEFAULT_RECOVERY = 0.40

CDS_HEADER = ("tenor_years", "spread_bps")
BALANCE_SHEET_HEADER = (
    "entity_id",
    "date",
    "rating_class",
    "tier1_ratio",
    "total_assets",
    "total_liabilities",
)


def year_fraction(start: date, end: date) -> float:
    """ACT/365 fixed year fraction between two dates (negative if end < start)."""
    return (end - start).days / DAYS_PER_YEAR


def discount_factor(r: float, t, T):
    """Risk-free discount factor ``exp(-r (T - t))`` under a flat continuous rate.

    Works elementwise on arrays. Raises :class:`InvalidIntervalError` if any
    ``T < t``.
    """
    t_arr = np.asarray(t, dtype=float)
    T_arr = np.asarray(T, dtype=float)
    if np.any(T_arr < t_arr):
        raise InvalidIntervalError(f"discount interval ends before it starts: t={t}, T={T}")
    out = np.exp(-r * (T_arr - t_arr))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CdsQuote:
    tenor_years: float
    spread: float  # decimal per annum

    def __post_init__(self):
        if not self.tenor_years > 0:
            raise ValidationError(f"CDS tenor must be positive, got {self.tenor_years}")
        if not self.spread > 0:
            raise ValidationError(f"CDS spread must be positive, got {self.spread}")

    @property
    def spread_bps(self) -> float:
        return self.spread * 1e4


def _check_quote_strip(quotes: Sequence[CdsQuote]) -> None:
    if not quotes:
        raise ValidationError("at least one CDS quote is required")
    tenors = [q.tenor_years for q in quotes]
    if any(b <= a for a, b in zip(tenors, tenors[1:])):
        raise ValidationError(f"CDS tenors must be strictly increasing: {tenors}")


@dataclass(frozen=True)
class MarketSnapshot:
    """Everything observed on the valuation date.

    ``equity_observable`` is market capitalisation over total assets, so it is
    on the same scale as a firm value normalised to one. ``share_price`` is
    the per-share price used in the CoCo conversion ratio.
    """

    valuation_date: date
    r: float
    cds_quotes: tuple[CdsQuote, ...]
    equity_observable: float | None = None
    share_price: float | None = None
    reported_capital_ratio: float | None = None
    recovery_R: float = DEFAULT_RECOVERY

    def __post_init__(self):
        object.__setattr__(self, "cds_quotes", tuple(self.cds_quotes))
        _check_quote_strip(self.cds_quotes)
        if not 0.0 <= self.recovery_R < 1.0:
            raise ValidationError(f"recovery must lie in [0, 1), got {self.recovery_R}")
        if self.reported_capital_ratio is not None and not 0 < self.reported_capital_ratio < 1:
            raise ValidationError("reported capital ratio must lie in (0, 1)")
        if self.equity_observable is not None and not self.equity_observable > 0:
            raise ValidationError("equity observable must be positive")
        if self.share_price is not None and not self.share_price > 0:
            raise ValidationError("share price must be positive")

    @property
    def tenors(self) -> np.ndarray:
        return np.array([q.tenor_years for q in self.cds_quotes])

    @property
    def spreads(self) -> np.ndarray:
        return np.array([q.spread for q in self.cds_quotes])

    def time_to(self, when: date) -> float:
        return year_fraction(self.valuation_date, when)

    def shift_cds(self, rel: float) -> "MarketSnapshot":
        """Scale every CDS spread by ``1 + rel``."""
        quotes = tuple(CdsQuote(q.tenor_years, q.spread * (1.0 + rel)) for q in self.cds_quotes)
        return replace(self, cds_quotes=quotes)

    def shift_equity(self, rel: float) -> "MarketSnapshot":
        """Scale the equity observable and the share price by ``1 + rel``."""
        eq = None if self.equity_observable is None else self.equity_observable * (1.0 + rel)
        sp = None if self.share_price is None else self.share_price * (1.0 + rel)
        return replace(self, equity_observable=eq, share_price=sp)


@dataclass(frozen=True)
class BalanceSheetRecord:
    entity_id: str
    date: date
    rating_class: str
    tier1_ratio: float
    total_assets: float
    total_liabilities: float

    @property
    def leverage(self) -> float:
        """Asset/equity ratio ``A / (A - L)``."""
        return self.total_assets / (self.total_assets - self.total_liabilities)


@dataclass
class BalanceSheetPanel:
    """Admitted records plus the rows rejected for non-positive book equity."""

    records: list[BalanceSheetRecord]
    rejects: list[tuple[int, BalanceSheetRecord, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def rating_classes(self) -> list[str]:
        return sorted({r.rating_class for r in self.records})

    def by_class(self, rating_class: str) -> list[BalanceSheetRecord]:
        return [r for r in self.records if r.rating_class == rating_class]

    def groups(self) -> dict[tuple[str, date], list[BalanceSheetRecord]]:
        """Records keyed by (rating class, balance-sheet date), sorted keys."""
        out: dict[tuple[str, date], list[BalanceSheetRecord]] = defaultdict(list)
        for rec in self.records:
            out[(rec.rating_class, rec.date)].append(rec)
        return dict(sorted(out.items()))


def _read_rows(path: Path, header: Iterable[str]) -> list[tuple[int, dict[str, str]]]:
    header = tuple(header)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: file is empty")
    names = tuple(c.strip() for c in rows[0][1])
    missing = [h for h in header if h not in names]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    out = []
    for lineno, row in rows[1:]:
        if len(row) != len(names):
            raise ParseError(f"expected {len(names)} fields, got {len(row)}", line=lineno)
        out.append((lineno, {n: v.strip() for n, v in zip(names, row)}))
    return out


def _parse_float(text: str, lineno: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line=lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", line=lineno)
    return value


def load_cds_quotes(path) -> list[CdsQuote]:
    """Read a ``tenor_years,spread_bps`` file into quotes sorted by tenor."""
    rows = _read_rows(Path(path), CDS_HEADER)
    if not rows:
        raise ParseError(f"{path}: no CDS quotes")
    quotes = []
    seen: dict[float, int] = {}
    for lineno, row in rows:
        tenor = _parse_float(row["tenor_years"], lineno, "tenor")
        bps = _parse_float(row["spread_bps"], lineno, "spread")
        if tenor in seen:
            raise ValidationError(f"line {lineno}: duplicate tenor {tenor} (first on line {seen[tenor]})")
        seen[tenor] = lineno
        try:
            quotes.append(CdsQuote(tenor, bps / 1e4))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    quotes.sort(key=lambda q: q.tenor_years)
    return quotes


def save_cds_quotes(quotes: Sequence[CdsQuote], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDS_HEADER)
        for q in quotes:
            w.writerow([repr(q.tenor_years), repr(q.spread * 1e4)])


def load_balance_sheet_panel(path) -> BalanceSheetPanel:
    rows = _read_rows(Path(path), BALANCE_SHEET_HEADER)
    admitted, rejects = [], []
    for lineno, row in rows:
        try:
            when = date.fromisoformat(row["date"])
        except ValueError:
            raise ParseError(f"bad ISO date {row['date']!r}", line=lineno) from None
        rec = BalanceSheetRecord(
            entity_id=row["entity_id"],
            date=when,
            rating_class=row["rating_class"],
            tier1_ratio=_parse_float(row["tier1_ratio"], lineno, "tier1_ratio"),
            total_assets=_parse_float(row["total_assets"], lineno, "total_assets"),
            total_liabilities=_parse_float(row["total_liabilities"], lineno, "total_liabilities"),
        )
        if not rec.total_liabilities > 0:
            rejects.append((lineno, rec, "non-positive liabilities"))
        elif not rec.total_assets > rec.total_liabilities:
            rejects.append((lineno, rec, "assets do not exceed liabilities"))
        elif not 0 < rec.tier1_ratio < 1:
            rejects.append((lineno, rec, "tier-1 ratio outside (0, 1)"))
        else:
            admitted.append(rec)
    return BalanceSheetPanel(admitted, rejects)
