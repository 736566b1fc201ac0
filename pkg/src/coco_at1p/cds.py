"""CDS valuation under AT1P survival probabilities.

Premium accrual on default is approximated by half the period premium and
the protection leg is discretised on the premium grid, optionally refined.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .at1p import At1pParams, survival_probability
from .errors import DegenerateError, ValidationError


@dataclass(frozen=True)
class CdsSchedule:
    start: float
    payment_times: tuple[float, ...]

    def __post_init__(self):
        pts = tuple(float(t) for t in self.payment_times)
        object.__setattr__(self, "payment_times", pts)
        grid = (self.start,) + pts
        if not pts or self.start < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValidationError(f"invalid CDS schedule start={self.start} payments={pts}")

    @classmethod
    def regular(cls, maturity: float, start: float = 0.0, frequency: int = 4) -> "CdsSchedule":
        """Payments every ``1/frequency`` years ending at ``maturity``; a short first period if needed."""
        n = int(np.ceil((maturity - start) * frequency - 1e-9))
        pts = maturity - np.arange(n)[::-1] / frequency
        return cls(start, tuple(float(t) for t in pts if t > start))

    @property
    def grid(self) -> np.ndarray:
        return np.array((self.start,) + self.payment_times)

    @property
    def accruals(self) -> np.ndarray:
        return np.diff(self.grid)


@dataclass(frozen=True)
class CdsLegs:
    premium_annuity: float  # value of 1/yr paid on schedule while alive
    accrual_annuity: float  # value of premium accrued into the default period
    protection: float  # value of a unit payment at default (before the 1 - R factor)

    @property
    def risky_annuity(self) -> float:
        return self.premium_annuity + self.accrual_annuity


def _refined(grid: np.ndarray, refinement: int) -> tuple[np.ndarray, np.ndarray]:
    """Subdivide each period into ``refinement`` parts; also return each point's period start."""
    if refinement < 1:
        raise ValidationError("refinement must be >= 1")
    frac = np.arange(1, refinement + 1) / refinement
    lo, hi = grid[:-1], grid[1:]
    pts = (lo[:, None] + (hi - lo)[:, None] * frac[None, :]).ravel()
    period_start = np.repeat(lo, refinement)
    return pts, period_start


def _survival_lookup(params: At1pParams, times: np.ndarray):
    """Survival evaluated once on ``times`` (sorted, unique), looked up exactly afterwards."""
    q = survival_probability(params, times)
    return lambda t: q[np.searchsorted(times, t)]


def _legs_from_survival(r: float, grid: np.ndarray, q_at, refinement: int) -> CdsLegs:
    alphas = np.diff(grid)
    pay = grid[1:]
    premium = float(np.sum(np.exp(-r * pay) * alphas * q_at(pay)))
    pts, period_start = _refined(grid, refinement)
    prev = np.concatenate(([grid[0]], pts[:-1]))
    dq = q_at(prev) - q_at(pts)
    disc = np.exp(-r * pts)
    mid = 0.5 * (prev + pts)
    accrual = float(np.sum(disc * (mid - period_start) * dq))
    protection = float(np.sum(disc * dq))
    return CdsLegs(premium, accrual, protection)


def cds_legs(params: At1pParams, schedule: CdsSchedule, refinement: int = 1) -> CdsLegs:
    grid = schedule.grid
    times = np.unique(np.concatenate([grid, _refined(grid, refinement)[0]]))
    return _legs_from_survival(params.r, grid, _survival_lookup(params, times), refinement)


def cds_price(params: At1pParams, schedule: CdsSchedule, S: float, R: float, refinement: int = 1) -> float:
    """Time-zero value of (premium leg - protection leg) per unit notional, running spread ``S``."""
    if not 0.0 <= R < 1.0:
        raise ValidationError(f"recovery must lie in [0, 1), got {R}")
    legs = cds_legs(params, schedule, refinement)
    return S * legs.risky_annuity - (1.0 - R) * legs.protection


def par_spread(params: At1pParams, schedule: CdsSchedule, R: float, refinement: int = 1) -> float:
    """Running spread that makes :func:`cds_price` zero."""
    if not 0.0 <= R < 1.0:
        raise ValidationError(f"recovery must lie in [0, 1), got {R}")
    legs = cds_legs(params, schedule, refinement)
    if not legs.risky_annuity > 0:
        raise DegenerateError("risky annuity is not positive: all survival mass is gone before the schedule")
    return (1.0 - R) * legs.protection / legs.risky_annuity


class CdsStrip:
    """Par spreads for a strip of spot-starting contracts with one survival evaluation.

    Index bookkeeping is done once at construction; :meth:`par_spreads` is the
    hot path used inside calibration.
    """

    def __init__(self, maturities: Sequence[float], frequency: int = 4, refinement: int = 1):
        self.maturities = tuple(float(m) for m in maturities)
        schedules = [CdsSchedule.regular(m, 0.0, frequency) for m in self.maturities]
        pay, alpha, pay_owner = [], [], []
        pts, prev, pstart, pt_owner = [], [], [], []
        for k, sch in enumerate(schedules):
            grid = sch.grid
            pay.append(grid[1:])
            alpha.append(np.diff(grid))
            pay_owner.append(np.full(len(grid) - 1, k))
            p, ps = _refined(grid, refinement)
            pts.append(p)
            prev.append(np.concatenate(([grid[0]], p[:-1])))
            pstart.append(ps)
            pt_owner.append(np.full(len(p), k))
        pay, alpha = np.concatenate(pay), np.concatenate(alpha)
        pts, prev, pstart = np.concatenate(pts), np.concatenate(prev), np.concatenate(pstart)
        self.times = np.unique(np.concatenate([pay, pts, prev]))
        self._pay_idx = np.searchsorted(self.times, pay)
        self._pt_idx = np.searchsorted(self.times, pts)
        self._prev_idx = np.searchsorted(self.times, prev)
        self._alpha = alpha
        self._pay_owner = np.concatenate(pay_owner)
        self._pt_owner = np.concatenate(pt_owner)
        self._pay = pay
        self._pts = pts
        self._accr = 0.5 * (prev + pts) - pstart

    def legs(self, params: At1pParams) -> tuple[np.ndarray, np.ndarray]:
        """Risky annuity and unit protection value per contract."""
        q = survival_probability(params, self.times)
        n = len(self.maturities)
        premium = np.bincount(self._pay_owner, np.exp(-params.r * self._pay) * self._alpha * q[self._pay_idx], n)
        dq = q[self._prev_idx] - q[self._pt_idx]
        disc = np.exp(-params.r * self._pts)
        accrual = np.bincount(self._pt_owner, disc * self._accr * dq, n)
        protection = np.bincount(self._pt_owner, disc * dq, n)
        return premium + accrual, protection

    def par_spreads(self, params: At1pParams, R: float) -> np.ndarray:
        annuity, protection = self.legs(params)
        if np.any(~(annuity > 0)):
            raise DegenerateError("risky annuity is not positive for at least one maturity")
        return (1.0 - R) * protection / annuity


def par_spreads(params: At1pParams, maturities: Sequence[float], R: float, frequency: int = 4,
                refinement: int = 1) -> np.ndarray:
    """Par spreads of spot-starting contracts for several maturities."""
    return CdsStrip(maturities, frequency, refinement).par_spreads(params, R)
