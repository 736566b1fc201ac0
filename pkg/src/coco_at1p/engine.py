"""Monte Carlo pricing of CoCo and plain defaultable bonds on a discrete monitoring grid.

Paths are simulated in blocks of ``BLOCK_SIZE`` with one random stream per
block, so a result depends only on ``(seed, config)``. Blocks may run on a
thread pool; per-block partial sums are always reduced in block order.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .at1p import (SHOCK_STREAM, At1pParams, PathGrid, barrier, block_normals, block_ranges,
                   simulate_log_block)
from .bonds import (BondSpec, Cashflows, CocoSpec, DEFAULT_BASIS, DEFAULT_COMPOUNDING,
                    price_pdb_analytic, risk_free_price, ytm_or_nan)
from .capital import CapitalRatioModel, XStdAccumulator
from .equity import equity_value
from .errors import DegenerateError, NumericalError, ValidationError
from .market import MarketSnapshot

log = logging.getLogger(__name__)

Z_95 = 1.959963984540054
MAX_EXCLUDED_FRACTION = 1e-3


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 500.0
    n_paths: int = 100_000
    seed: int = 0
    antithetic: bool = False
    threads: int = 1
    accrue_on_event: bool = False
    compounding: str = DEFAULT_COMPOUNDING
    price_basis: str = DEFAULT_BASIS

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if self.n_paths < 100:
            raise ValidationError("need at least 100 paths")
        if self.threads < 1:
            raise ValidationError("threads must be at least 1")


@dataclass(frozen=True)
class PriceResult:
    estimate: float
    std_error: float
    ci_low: float
    ci_high: float
    ytm: float
    n_paths: int
    dt: float
    n_excluded: int = 0

    def row(self) -> dict:
        return {"price": self.estimate, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "ytm": self.ytm, "std_error": self.std_error, "n_paths": self.n_paths,
                "dt": self.dt, "n_excluded": self.n_excluded}


@dataclass
class _Sums:
    """Per-block payoff moments; merged in block order."""

    n: int = 0
    s1: float = 0.0
    s2: float = 0.0
    excluded: int = 0

    def add(self, x: np.ndarray) -> None:
        ok = np.isfinite(x)
        self.excluded += int((~ok).sum())
        x = x[ok]
        self.n += x.size
        self.s1 += float(x.sum())
        self.s2 += float(np.dot(x, x))

    def merge(self, other: "_Sums") -> None:
        self.n += other.n
        self.s1 += other.s1
        self.s2 += other.s2
        self.excluded += other.excluded


def _mean_se(sums: _Sums) -> tuple[float, float]:
    mean = sums.s1 / sums.n
    var = max(sums.s2 / sums.n - mean * mean, 0.0) * sums.n / max(sums.n - 1, 1)
    return mean, math.sqrt(var / sums.n)


def _result(sums: _Sums, sim: SimConfig, dt: float, cf: Cashflows) -> PriceResult:
    total = sums.n + sums.excluded
    if sums.excluded > MAX_EXCLUDED_FRACTION * total:
        raise NumericalError(f"{sums.excluded} of {total} paths produced non-finite payoffs")
    if sums.excluded:
        log.warning("excluded %d non-finite paths", sums.excluded)
    mean, se = _mean_se(sums)
    ytm = ytm_or_nan(mean, cf, sim.compounding, sim.price_basis)
    return PriceResult(mean, se, mean - Z_95 * se, mean + Z_95 * se, ytm, sums.n, dt, sums.excluded)


def _map_blocks(fn: Callable[[int, int, int], object], n_paths: int, threads: int) -> list:
    blocks = list(block_ranges(n_paths))
    if threads == 1 or len(blocks) == 1:
        return [fn(*b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


def _grid(maturity: float, dt: float) -> PathGrid:
    return PathGrid(min(dt, maturity), maturity)


def _coupon_leg(cf: Cashflows, times: np.ndarray, event_idx: np.ndarray, r: float) -> np.ndarray:
    """Discounted coupons and principal paid strictly before each path's event.

    ``event_idx`` indexes ``times``; ``-1`` means no event, in which case
    every flow including the principal is received.
    """
    disc = cf.amounts * np.exp(-r * cf.times)
    csum = np.concatenate([[0.0], np.cumsum(disc)])
    ev = np.where(event_idx < 0, len(times) - 1, event_idx)
    tau = times[ev]
    # flows strictly before tau
    n_before = np.searchsorted(cf.times, tau, side="left")
    paid = csum[n_before]
    paid = np.where(event_idx < 0, csum[-1], paid)
    return paid


def _accrued_at(cf: Cashflows, tau: np.ndarray) -> np.ndarray:
    """Coupon accrued at ``tau`` since the last flow before it."""
    ct = cf.coupon_times
    k = np.searchsorted(ct, tau, side="left")
    k = np.minimum(k, len(ct) - 1)
    start = np.where(k > 0, ct[np.maximum(k - 1, 0)], 0.0)
    end = ct[k]
    frac = np.clip((tau - start) / (end - start), 0.0, 1.0)
    return cf.coupon_amounts[k] * frac


def _first_true(mask: np.ndarray) -> np.ndarray:
    idx = np.argmax(mask, axis=1)
    return np.where(mask.any(axis=1), idx, -1)


@dataclass
class _BlockEvents:
    """Event bookkeeping for one block on one monitoring grid (column 0 is ``t = 0``)."""

    default_idx: np.ndarray
    trigger_idx: np.ndarray
    log_v: np.ndarray = field(repr=False)


def _block_log_paths(params, times, seed, b, n, antithetic):
    out = np.empty((n, len(times)))
    out[:, 0] = math.log(params.V0)
    out[:, 1:] = simulate_log_block(params, times, seed, b, n, antithetic)
    return out


def _x_profile_pass(params: At1pParams, times: np.ndarray, sim: SimConfig) -> np.ndarray:
    """First pass: cross-sectional std of ``X_t`` over paths above the barrier."""
    log_h = np.log(barrier(params, times))
    h = np.exp(log_h)

    def work(b, start, stop):
        lv = _block_log_paths(params, times, sim.seed, b, stop - start, sim.antithetic)
        alive = np.logical_and.accumulate(lv > log_h, axis=1)
        V = np.exp(lv)
        with np.errstate(divide="ignore", invalid="ignore"):
            X = np.where(alive, V / (V - h), 0.0)
        acc = XStdAccumulator(len(times))
        acc.add(X, alive)
        return acc

    total = XStdAccumulator(len(times))
    for acc in _map_blocks(work, sim.n_paths, sim.threads):
        tot = total.n + acc.n
        delta = acc.mean - total.mean
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(tot > 0, acc.n / tot, 0.0)
        total.mean = total.mean + delta * w
        total.m2 = total.m2 + acc.m2 + delta * delta * total.n * w
        total.n = tot
    return total.std()


def x_std_for_grid(params: At1pParams, cap: CapitalRatioModel, times: np.ndarray,
                   sim: SimConfig) -> np.ndarray | None:
    """``std(X_t)`` on ``times`` as used by the trigger, ``None`` when ``eta == 1``."""
    if cap.eta == 1.0:
        return None
    if cap.x_std_profile is not None:
        prof = np.asarray(cap.x_std_profile, dtype=float)
        if prof.shape != times.shape:
            raise ValidationError("x_std_profile does not match the monitoring grid")
    else:
        prof = _x_profile_pass(params, times, sim)
    if cap.std_mode == "constant":
        # the profile is 0 at t = 0, so its average over later times stands in for a constant
        prof = np.full_like(prof, float(np.mean(prof[1:])) if len(prof) > 1 else 0.0)
    return prof


def _events(params: At1pParams, cap: CapitalRatioModel | None, times: np.ndarray, lv: np.ndarray,
            x_std: np.ndarray | None, shocks: np.ndarray | None) -> _BlockEvents:
    log_h = np.log(barrier(params, times))
    dflt = lv <= log_h
    dflt[:, 0] = False
    default_idx = _first_true(dflt)
    if cap is None:
        return _BlockEvents(default_idx, np.full_like(default_idx, -1), lv)
    V = np.exp(lv)
    h = np.exp(log_h)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        X = V / (V - h)
        if x_std is None:
            C = cap.alpha_bar + cap.beta_bar * X
        else:
            eta = cap.eta
            C = cap.alpha_bar + cap.beta_bar * (eta * X + math.sqrt(1.0 - eta * eta) * x_std * shocks)
    trig = (C <= cap.trigger_cbar) & ~dflt
    trig[:, 0] = False
    trigger_idx = _first_true(trig)
    return _BlockEvents(default_idx, trigger_idx, lv)


def _check_std(x_std: np.ndarray | None) -> None:
    if x_std is not None and np.any(x_std[1:] <= 0):
        raise DegenerateError("std(X_t) must be positive on the monitoring grid when eta < 1")


def _coco_payoffs(params: At1pParams, coco: CocoSpec, cap: CapitalRatioModel, cf: Cashflows,
                  share_ratio: float, f0: float, times: np.ndarray, ev: _BlockEvents,
                  accrue_on_event: bool, collect: list | None = None) -> np.ndarray:
    T = times[-1]
    d, c = ev.default_idx, ev.trigger_idx
    # default is tested before the trigger on each date, so a same-date joint event is a default
    conv_by_trigger = (c >= 0) & ((d < 0) | (c < d))
    event = np.where(conv_by_trigger, c, d)
    pay = _coupon_leg(cf, times, event, params.r)
    has_event = event >= 0
    tau = times[np.where(has_event, event, len(times) - 1)]
    ratio = np.zeros(len(event))
    rows = np.flatnonzero(conv_by_trigger)
    if rows.size:
        tc = times[c[rows]]
        Vc = np.exp(ev.log_v[rows, c[rows]])
        eq = np.empty(rows.size)
        at_T = tc >= T
        if at_T.any():
            eq[at_T] = np.maximum(Vc[at_T] - barrier(params, T), 0.0)
        live = ~at_T
        if live.any():
            eq[live] = equity_value(params, tc[live], Vc[live], T)
        ratio[rows] = np.maximum(share_ratio * eq / f0, 0.0)
    disc_tau = np.exp(-params.r * tau)
    pay = pay + np.where(has_event, ratio * coco.notional * disc_tau, 0.0)
    if accrue_on_event:
        pay = pay + np.where(has_event, _accrued_at(cf, tau) * disc_tau, 0.0)
    if collect is not None:
        collect.append((conv_by_trigger, np.where(conv_by_trigger, tau, np.nan), ratio,
                        (d >= 0) & ~conv_by_trigger, np.where((d >= 0) & ~conv_by_trigger, tau, np.nan)))
    return pay


def _pdb_payoffs(params: At1pParams, cf: Cashflows, recovery: float, notional: float,
                 times: np.ndarray, ev: _BlockEvents, accrue_on_event: bool) -> np.ndarray:
    d = ev.default_idx
    pay = _coupon_leg(cf, times, d, params.r)
    has = d >= 0
    tau = times[np.where(has, d, len(times) - 1)]
    disc = np.exp(-params.r * tau)
    pay = pay + np.where(has, recovery * notional * disc, 0.0)
    if accrue_on_event:
        pay = pay + np.where(has, _accrued_at(cf, tau) * disc, 0.0)
    return pay


def _coco_setup(params, coco, cap, market):
    if market.share_price is None:
        raise ValidationError("share price is required to price conversion")
    cap.check_trigger_hypothesis(params)
    if cap.trigger_cbar != coco.trigger_cbar:
        log.info("using trigger %.6g from the capital model (contract says %.6g)",
                 cap.trigger_cbar, coco.trigger_cbar)
    cf = coco.cashflows(market.valuation_date)
    T = cf.maturity
    f0 = float(equity_value(params, 0.0, params.V0, T))
    if not f0 > 0:
        raise DegenerateError("model equity value at the valuation date is zero")
    return cf, T, f0, market.share_price / coco.conversion_price


def _subgrid_indices(fine: np.ndarray, dt_fine: float, dt: float) -> np.ndarray:
    m = dt / dt_fine
    k = int(round(m))
    if abs(m - k) > 1e-9 * max(1.0, m) or k < 1:
        raise ValidationError(f"dt={dt} is not a multiple of the finest step {dt_fine}")
    idx = np.arange(0, len(fine), k)
    if idx[-1] != len(fine) - 1:
        idx = np.append(idx, len(fine) - 1)
    return idx


def price_coco_frequencies(params: At1pParams, coco: CocoSpec, cap: CapitalRatioModel,
                           market: MarketSnapshot, dts: Sequence[float], sim: SimConfig,
                           stats: dict | None = None,
                           paired: dict | None = None) -> dict[float, PriceResult]:
    """CoCo prices for several monitoring steps on the same paths.

    Every step must be an integer multiple of the smallest one; coarser grids
    are subsamples of the finest, which makes the estimates paired. If
    ``paired`` is a dict it receives ``(dt_a, dt_b) -> (mean, std_error)`` of
    the per-path payoff difference for consecutive entries of ``dts``.
    """
    cf, T, f0, share_ratio = _coco_setup(params, coco, cap, market)
    dt_min = min(dts)
    fine = _grid(T, dt_min).times
    subs = {dt: _subgrid_indices(fine, min(dt_min, T), min(dt, T)) for dt in dts}
    x_std_fine = x_std_for_grid(params, cap, fine, sim)
    _check_std(x_std_fine)

    def work(b, start, stop):
        n = stop - start
        lv = _block_log_paths(params, fine, sim.seed, b, n, sim.antithetic)
        shocks = None
        if x_std_fine is not None:
            shocks = np.zeros((n, len(fine)))
            shocks[:, 1:] = block_normals(sim.seed, b, n, len(fine) - 1, SHOCK_STREAM, sim.antithetic)
        out, pays = {}, {}
        for dt, idx in subs.items():
            times = fine[idx]
            ev = _events(params, cap, times, lv[:, idx], None if x_std_fine is None else x_std_fine[idx],
                         None if shocks is None else shocks[:, idx])
            collect = [] if stats is not None else None
            pays[dt] = _coco_payoffs(params, coco, cap, cf, share_ratio, f0, times, ev, sim.accrue_on_event,
                                     collect)
            s = _Sums()
            s.add(pays[dt])
            out[dt] = (s, collect)
        diffs = {}
        for a, b in zip(dts, dts[1:]):
            s = _Sums()
            s.add(pays[a] - pays[b])
            diffs[(a, b)] = s
        return out, diffs

    totals = {dt: _Sums() for dt in dts}
    diff_totals: dict = {}
    for part, diffs in _map_blocks(work, sim.n_paths, sim.threads):
        for dt, (s, collect) in part.items():
            totals[dt].merge(s)
            if stats is not None:
                stats.setdefault(dt, []).extend(collect)
        for key, s in diffs.items():
            diff_totals.setdefault(key, _Sums()).merge(s)
    if paired is not None:
        for key, s in diff_totals.items():
            paired[key] = _mean_se(s)
    return {dt: _result(totals[dt], sim, dt, cf) for dt in dts}


def price_coco(params: At1pParams, coco: CocoSpec, cap: CapitalRatioModel, market: MarketSnapshot,
               sim: SimConfig) -> PriceResult:
    """CoCo price with conversion at the first grid date where the capital ratio is at or below the trigger.

    Default (firm value at or below the barrier) is tested first and pays no
    conversion value. Coupons are received on schedule dates strictly before
    the event.
    """
    return price_coco_frequencies(params, coco, cap, market, [sim.dt], sim)[sim.dt]


def _price_defaultable(params: At1pParams, cf: Cashflows, recovery: float, notional: float,
                       sim: SimConfig, dts: Sequence[float] | None = None) -> dict[float, PriceResult]:
    dts = list(dts or [sim.dt])
    T = cf.maturity
    dt_min = min(dts)
    fine = _grid(T, dt_min).times
    subs = {dt: _subgrid_indices(fine, min(dt_min, T), min(dt, T)) for dt in dts}

    def work(b, start, stop):
        lv = _block_log_paths(params, fine, sim.seed, b, stop - start, sim.antithetic)
        out = {}
        for dt, idx in subs.items():
            times = fine[idx]
            ev = _events(params, None, times, lv[:, idx], None, None)
            s = _Sums()
            s.add(_pdb_payoffs(params, cf, recovery, notional, times, ev, sim.accrue_on_event))
            out[dt] = s
        return out

    totals = {dt: _Sums() for dt in dts}
    for part in _map_blocks(work, sim.n_paths, sim.threads):
        for dt, s in part.items():
            totals[dt].merge(s)
    return {dt: _result(totals[dt], sim, dt, cf) for dt in dts}


def price_pdb_mc(params: At1pParams, bond: BondSpec, market: MarketSnapshot, sim: SimConfig) -> PriceResult:
    """Defaultable bond paying ``recovery_R`` times notional at the discrete default time."""
    cf = bond.cashflows(market.valuation_date)
    return _price_defaultable(params, cf, bond.recovery_R, bond.notional, sim)[sim.dt]


def price_coco_stripped(params: At1pParams, coco: CocoSpec, market: MarketSnapshot, sim: SimConfig,
                        recovery_R: float = 0.0) -> PriceResult:
    """The CoCo's cash flows as a plain defaultable bond, with no conversion."""
    return price_pdb_mc(params, coco.stripped(recovery_R), market, sim)


@dataclass(frozen=True)
class SamplingCheckRow:
    dt: float
    analytic: float
    mc: PriceResult

    @property
    def passed(self) -> bool:
        return self.mc.ci_low <= self.analytic <= self.mc.ci_high


@dataclass(frozen=True)
class SamplingCheckReport:
    rows: tuple[SamplingCheckRow, ...]

    @property
    def recommended_dt(self) -> float | None:
        """Coarsest step whose confidence interval contains the closed-form price."""
        ok = [row.dt for row in self.rows if row.passed]
        return max(ok) if ok else None


def sampling_frequency_check(params: At1pParams, bond: BondSpec, market: MarketSnapshot,
                             dts: Sequence[float], sim: SimConfig) -> SamplingCheckReport:
    """Compare zero-recovery MC bond prices with the closed form for each monitoring step.

    The steps are simulated independently on the same seed.
    """
    if not dts:
        raise ValidationError("need at least one monitoring step")
    cf = bond.cashflows(market.valuation_date)
    analytic = price_pdb_analytic(params, bond, market)
    rows = []
    for dt in dts:
        res = _price_defaultable(params, cf, 0.0, bond.notional, SimConfig(
            dt=dt, n_paths=sim.n_paths, seed=sim.seed, antithetic=sim.antithetic, threads=sim.threads,
            compounding=sim.compounding, price_basis=sim.price_basis))[dt]
        rows.append(SamplingCheckRow(dt, analytic, res))
    return SamplingCheckReport(tuple(rows))


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def rows(self):
        return [(float(a), float(b), int(c)) for a, b, c in zip(self.edges[:-1], self.edges[1:], self.counts)]


@dataclass(frozen=True)
class PathStatistics:
    n_paths: int
    n_conversions: int
    n_defaults: int
    mean_conversion_ratio: float
    conversion_ratio: Histogram
    conversion_time: Histogram
    default_time: Histogram


def _hist(x: np.ndarray, bins: int, rng: tuple[float, float] | None = None) -> Histogram:
    if x.size == 0:
        return Histogram(np.linspace(0.0, 1.0, bins + 1), np.zeros(bins, dtype=int))
    counts, edges = np.histogram(x, bins=bins, range=rng)
    return Histogram(edges, counts)


def path_statistics(params: At1pParams, coco: CocoSpec, cap: CapitalRatioModel, market: MarketSnapshot,
                    sim: SimConfig, bins: int = 50) -> PathStatistics:
    """Distributions of the conversion ratio and of conversion and default times."""
    stats: dict = {}
    price_coco_frequencies(params, coco, cap, market, [sim.dt], sim, stats)
    parts = stats.get(sim.dt, [])
    conv = np.concatenate([p[0] for p in parts])
    tconv = np.concatenate([p[1] for p in parts])[conv]
    ratio = np.concatenate([p[2] for p in parts])[conv]
    dflt = np.concatenate([p[3] for p in parts])
    tdef = np.concatenate([p[4] for p in parts])[dflt]
    if conv.sum() == 0:
        warnings.warn("no conversion events: histograms are empty", stacklevel=2)
    T = coco.cashflows(market.valuation_date).maturity
    return PathStatistics(
        n_paths=len(conv),
        n_conversions=int(conv.sum()),
        n_defaults=int(dflt.sum()),
        mean_conversion_ratio=float(ratio.mean()) if ratio.size else math.nan,
        conversion_ratio=_hist(ratio, bins),
        conversion_time=_hist(tconv, bins, (0.0, T)),
        default_time=_hist(tdef, bins, (0.0, T)),
    )


def risk_free_bond_price(cf: Cashflows, r: float) -> float:
    return risk_free_price(cf, r)
