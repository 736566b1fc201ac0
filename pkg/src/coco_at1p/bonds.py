"""Fixed-coupon bond terms, cash-flow schedules and yield-to-maturity."""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np
from dateutil.relativedelta import relativedelta
from scipy.optimize import brentq

from .at1p import At1pParams, survival_probability
from .errors import NumericalError, ValidationError
from .market import MarketSnapshot, year_fraction

COMPOUNDING = ("annual", "semiannual", "continuous")
PRICE_BASIS = ("clean", "dirty")

# Convention picked by `select_ytm_convention` against the reference price/yield pairs.
DEFAULT_COMPOUNDING = "continuous"
DEFAULT_BASIS = "clean"

YTM_BRACKET = (-0.5, 2.0)


def coupon_dates(issue_date: date | None, maturity_date: date, frequency: int) -> list[date]:
    """Coupon dates generated backward from maturity, ascending, stopping at the issue date.

    Without an issue date the roll stops after 200 years of dates.
    """
    if frequency not in (1, 2, 4, 12):
        raise ValidationError(f"unsupported coupon frequency {frequency}")
    step = 12 // frequency
    out = []
    k = 0
    while True:
        d = maturity_date - relativedelta(months=step * k)
        if issue_date is not None and d <= issue_date:
            out.append(d)
            break
        out.append(d)
        k += 1
        if k > 200 * frequency:
            break
    return out[::-1]


@dataclass(frozen=True)
class Cashflows:
    """Future cash flows seen from a valuation date.

    ``times`` are ACT/365F year fractions used for model discounting.
    ``yield_times`` count coupon periods, ``(k + w) / frequency`` with ``w`` the
    unexpired fraction of the current period; yields are quoted on them.
    ``accrued`` is the coupon accrued since the previous coupon date, linear in
    calendar days over the current period.
    """

    times: np.ndarray
    amounts: np.ndarray
    accrued: float = 0.0
    coupon_times: np.ndarray | None = None
    coupon_amounts: np.ndarray | None = None
    yield_times: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.amounts, dtype=float)
        if t.ndim != 1 or t.shape != a.shape or t.size == 0:
            raise ValidationError("need at least one future cash flow")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValidationError("cash-flow times must be positive and increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "amounts", a)
        if self.coupon_times is None:
            object.__setattr__(self, "coupon_times", t)
            object.__setattr__(self, "coupon_amounts", a)
        if self.yield_times is None:
            object.__setattr__(self, "yield_times", t)

    @property
    def maturity(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True)
class BondSpec:
    """Fixed-rate bullet bond with unit notional by default."""

    maturity_date: date
    coupon_rate: float
    frequency: int = 1
    recovery_R: float = 0.0
    issue_date: date | None = None
    notional: float = 1.0

    def __post_init__(self):
        if not self.coupon_rate >= 0:
            raise ValidationError("coupon rate must be non-negative")
        if not 0.0 <= self.recovery_R < 1.0:
            raise ValidationError("recovery must lie in [0, 1)")
        if not self.notional > 0:
            raise ValidationError("notional must be positive")

    def cashflows(self, valuation_date: date) -> Cashflows:
        return _cashflows(self.issue_date, self.maturity_date, self.coupon_rate, self.frequency,
                          self.notional, valuation_date)


@dataclass(frozen=True)
class CocoSpec:
    """Contingent convertible: fixed coupons, equity conversion below a capital-ratio trigger."""

    issue_date: date | None
    maturity_date: date
    coupon_rate: float = 0.1104
    frequency: int = 2
    conversion_price: float = 0.59
    trigger_cbar: float = 0.05
    notional: float = 1.0

    def __post_init__(self):
        if not self.coupon_rate > 0:
            raise ValidationError("coupon rate must be positive")
        if not self.conversion_price > 0:
            raise ValidationError("conversion price must be positive")
        if not 0.0 < self.trigger_cbar < 1.0:
            raise ValidationError("trigger must lie in (0, 1)")

    def cashflows(self, valuation_date: date) -> Cashflows:
        return _cashflows(self.issue_date, self.maturity_date, self.coupon_rate, self.frequency,
                          self.notional, valuation_date)

    def stripped(self, recovery_R: float = 0.0) -> BondSpec:
        """Same cash flows without the conversion feature."""
        return BondSpec(self.maturity_date, self.coupon_rate, self.frequency, recovery_R,
                        self.issue_date, self.notional)


def _cashflows(issue_date, maturity_date, rate, frequency, notional, valuation_date) -> Cashflows:
    if maturity_date <= valuation_date:
        raise ValidationError("bond has matured before the valuation date")
    dates = coupon_dates(None, maturity_date, frequency)
    future = [d for d in dates if d > valuation_date]
    past = [d for d in dates if d <= valuation_date]
    coupon = rate / frequency * notional
    prev = past[-1] if past else None
    if issue_date is not None and (prev is None or issue_date > prev):
        prev = issue_date if issue_date <= valuation_date else None
    period_start = past[-1] if past else future[0] - relativedelta(months=12 // frequency)
    w = (future[0] - valuation_date).days / (future[0] - period_start).days
    accrued = 0.0
    if prev is not None:
        accrued = coupon * (valuation_date - prev).days / (future[0] - prev).days
    ct = np.array([year_fraction(valuation_date, d) for d in future])
    ca = np.full(len(future), coupon)
    amounts = ca.copy()
    amounts[-1] += notional
    yt = (np.arange(len(future)) + w) / frequency
    return Cashflows(ct, amounts, accrued, ct, ca, yt)


def discount_at_yield(y: float, t, compounding: str = DEFAULT_COMPOUNDING):
    t = np.asarray(t, dtype=float)
    if compounding == "continuous":
        return np.exp(-y * t)
    if compounding == "annual":
        return (1.0 + y) ** (-t)
    if compounding == "semiannual":
        return (1.0 + 0.5 * y) ** (-2.0 * t)
    raise ValidationError(f"unknown compounding {compounding!r}")


def present_value(y: float, cf: Cashflows, compounding: str = DEFAULT_COMPOUNDING) -> float:
    return float(np.dot(cf.amounts, discount_at_yield(y, cf.yield_times, compounding)))


def ytm_from_price(price: float, cf: Cashflows, compounding: str = DEFAULT_COMPOUNDING,
                   basis: str = DEFAULT_BASIS, tol: float = 1e-12) -> float:
    """Flat yield equating discounted cash flows to ``price``.

    With ``basis="clean"`` the accrued coupon is added to ``price`` first.
    Brent's method on ``YTM_BRACKET`` with absolute tolerance ``tol`` on the yield.
    """
    if not price > 0:
        raise ValidationError("price must be positive")
    if compounding not in COMPOUNDING:
        raise ValidationError(f"unknown compounding {compounding!r}")
    if basis not in PRICE_BASIS:
        raise ValidationError(f"unknown price basis {basis!r}")
    target = price + (cf.accrued if basis == "clean" else 0.0)

    def f(y):
        return present_value(y, cf, compounding) - target

    lo, hi = YTM_BRACKET
    if f(lo) * f(hi) > 0:
        raise NumericalError(f"no yield in [{lo}, {hi}] reproduces price {price}")
    y, info = brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=200, full_output=True)
    if not info.converged:
        raise NumericalError(f"yield iteration failed for price {price}: {info.flag}")
    return y


def select_ytm_convention(pairs: Sequence[tuple[float, float]], cf: Cashflows,
                          bases: Sequence[str] = PRICE_BASIS) -> tuple[str, str, float, dict]:
    """Pick the (compounding, basis) with the smallest worst-case yield error on ``pairs``.

    Returns the pick, its worst error, and the error of every candidate.
    """
    errors = {}
    for comp in COMPOUNDING:
        for basis in bases:
            errs = [abs(ytm_from_price(p, cf, comp, basis) - y) for p, y in pairs]
            errors[(comp, basis)] = max(errs)
    best = min(errors, key=lambda k: (errors[k], COMPOUNDING.index(k[0]), k[1]))
    return best[0], best[1], errors[best], errors


def price_pdb_analytic(params: At1pParams, bond: BondSpec, market: MarketSnapshot) -> float:
    """Zero-recovery defaultable bond from closed-form survival probabilities.

    ``sum_i c_i D(T_i) Q(tau > T_i) + N D(T_N) Q(tau > T_N)``; any recovery on
    ``bond`` is ignored.
    """
    cf = bond.cashflows(market.valuation_date)
    Q = survival_probability(params, cf.times)
    D = np.exp(-params.r * cf.times)
    return float(np.dot(cf.amounts * D, Q))


def risk_free_price(cf: Cashflows, r: float) -> float:
    return float(np.dot(cf.amounts, np.exp(-r * cf.times)))


def ytm_or_nan(price: float, cf: Cashflows, compounding: str = DEFAULT_COMPOUNDING,
               basis: str = DEFAULT_BASIS) -> float:
    try:
        return ytm_from_price(price, cf, compounding, basis)
    except (NumericalError, ValidationError):
        return math.nan
