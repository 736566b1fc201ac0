"""Capital-ratio proxy: cross-sectional regression of tier-1 ratio on the
asset/equity ratio ``X = A / (A - L)``, and the trigger process built from it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from datetime import date
from typing import Sequence

import numpy as np

from .at1p import At1pParams, PathGrid, barrier
from .errors import DegenerateError, DomainError, InsufficientDataError, ValidationError
from .market import BalanceSheetPanel, BalanceSheetRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegressionResult:
    rating_class: str
    date: date | None
    alpha: float
    beta: float
    n_obs: int


@dataclass(frozen=True)
class CapitalRatioModel:
    """Averaged regression coefficients of one rating class plus trigger terms.

    ``eta`` is the correlation parameter: 1 gives the plain proxy
    ``alpha_bar + beta_bar X``, lower values blend in an independent shock.
    ``x_std_profile`` holds ``std(X_t)`` on the monitoring grid when known.
    ``std_mode`` is ``"profile"`` (time-varying) or ``"constant"`` (one value,
    the time-average of the profile).
    """

    rating_class: str
    alpha_bar: float
    beta_bar: float
    eta: float = 1.0
    trigger_cbar: float = 0.05
    x_std_profile: tuple[float, ...] | None = None
    std_mode: str = "profile"

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.trigger_cbar > 0:
            raise ValidationError("trigger level must be positive")
        if self.std_mode not in ("profile", "constant"):
            raise ValidationError(f"unknown std_mode {self.std_mode!r}")

    def replace(self, **changes) -> "CapitalRatioModel":
        return replace(self, **changes)

    def ratio_at_leverage(self, X):
        return self.alpha_bar + self.beta_bar * np.asarray(X)

    def initial_ratio(self, params: At1pParams) -> float:
        return float(capital_ratio_proxy(self, params.V0, params.H))

    def check_trigger_hypothesis(self, params: At1pParams) -> None:
        """Require the starting proxy to sit strictly above the trigger."""
        c0 = self.initial_ratio(params)
        if not c0 > self.trigger_cbar:
            raise DomainError(
                f"initial capital ratio {c0:.6g} is not above the trigger {self.trigger_cbar:.6g}"
            )


def leverage(total_assets, total_liabilities):
    A = np.asarray(total_assets, dtype=float)
    L = np.asarray(total_liabilities, dtype=float)
    return A / (A - L)


def ols_fit(records: Sequence[BalanceSheetRecord]) -> RegressionResult:
    """Least-squares ``c = alpha + beta X`` over one class and date."""
    if len(records) < 2:
        raise InsufficientDataError(f"need at least 2 records, got {len(records)}")
    X = leverage([r.total_assets for r in records], [r.total_liabilities for r in records])
    c = np.array([r.tier1_ratio for r in records])
    xm, cm = X.mean(), c.mean()
    dx = X - xm
    sxx = float(dx @ dx)
    if sxx <= 1e-14 * max(1.0, float(X @ X)):
        raise DegenerateError("all leverage values are equal: regression design is singular")
    beta = float(dx @ (c - cm)) / sxx
    alpha = float(cm - beta * xm)
    classes = {r.rating_class for r in records}
    dates = {r.date for r in records}
    return RegressionResult(
        rating_class=classes.pop() if len(classes) == 1 else ",".join(sorted(classes)),
        date=dates.pop() if len(dates) == 1 else None,
        alpha=alpha,
        beta=beta,
        n_obs=len(records),
    )


def regress_panel(panel: BalanceSheetPanel, min_obs: int = 2) -> dict[str, list[RegressionResult]]:
    """One regression per (class, date) group with enough distinct observations."""
    out: dict[str, list[RegressionResult]] = {}
    for (cls, when), recs in panel.groups().items():
        if len(recs) < min_obs:
            log.warning("skipping %s %s: only %d records", cls, when, len(recs))
            continue
        try:
            out.setdefault(cls, []).append(ols_fit(recs))
        except DegenerateError as exc:
            log.warning("skipping %s %s: %s", cls, when, exc)
    return out


def average_params(results: Sequence[RegressionResult]) -> tuple[float, float]:
    """Unweighted means of alpha and beta across dates."""
    if not results:
        raise InsufficientDataError("no regression results to average")
    n = len(results)
    return sum(r.alpha for r in results) / n, sum(r.beta for r in results) / n


def capital_ratio_proxy(model: CapitalRatioModel, Vt, Ht):
    """``alpha_bar + beta_bar V / (V - Hhat)`` above the barrier, 0 below it."""
    V = np.asarray(Vt, dtype=float)
    H = np.asarray(Ht, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = model.alpha_bar + model.beta_bar * V / (V - H)
    # at V == Hhat the ratio diverges to -inf for beta_bar < 0
    out = np.where(V >= H, c, 0.0)
    return float(out) if out.ndim == 0 else out


def decorrelated_capital_ratio(model: CapitalRatioModel, Xt, x_std_t, eps):
    """``alpha_bar + beta_bar (eta X + sqrt(1 - eta^2) std(X) eps)``."""
    X = np.asarray(Xt, dtype=float)
    s = np.asarray(x_std_t, dtype=float)
    e = np.asarray(eps, dtype=float)
    eta = model.eta
    if eta == 1.0:
        out = model.alpha_bar + model.beta_bar * X
    else:
        if np.any(s <= 0):
            raise DegenerateError("std(X_t) must be positive when eta < 1")
        out = model.alpha_bar + model.beta_bar * (eta * X + math.sqrt(1.0 - eta * eta) * s * e)
    return float(out) if np.ndim(out) == 0 else out


class XStdAccumulator:
    """Streaming per-time mean/variance of ``X_t`` over paths above the barrier.

    Blocks are merged with the pairwise (Chan) update, in the order they are
    added.
    """

    def __init__(self, n_times: int):
        self.n = np.zeros(n_times)
        self.mean = np.zeros(n_times)
        self.m2 = np.zeros(n_times)

    def add(self, X: np.ndarray, mask: np.ndarray) -> None:
        nb = mask.sum(axis=0).astype(float)
        # shift by one member per column so identical values give exactly zero spread
        first = np.argmax(mask, axis=0)
        ref = np.where(nb > 0, X[first, np.arange(X.shape[1])], 0.0)
        D = np.where(mask, X - ref, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            md = np.where(nb > 0, D.sum(axis=0) / nb, 0.0)
        m2b = np.where(mask, (D - md) ** 2, 0.0).sum(axis=0)
        mb = ref + md
        tot = self.n + nb
        delta = mb - self.mean
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(tot > 0, nb / tot, 0.0)
        self.mean = self.mean + delta * w
        self.m2 = self.m2 + m2b + delta * delta * self.n * w
        self.n = tot

    def std(self) -> np.ndarray:
        """Sample std (ddof 1); times with fewer than two paths carry the last valid value forward."""
        out = np.full(len(self.n), np.nan)
        ok = self.n >= 2
        out[ok] = np.sqrt(self.m2[ok] / (self.n[ok] - 1))
        if not ok.all():
            log.warning("fewer than 2 surviving paths at %d grid time(s); carrying std forward", int((~ok).sum()))
            last = 0.0
            for i in range(len(out)):
                if np.isnan(out[i]):
                    out[i] = last
                else:
                    last = out[i]
        return out


def leverage_on_paths(V: np.ndarray, Hb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``X = V / (V - Hhat)`` and the mask of paths strictly above the barrier."""
    mask = V > Hb
    with np.errstate(divide="ignore", invalid="ignore"):
        X = np.where(mask, V / (V - Hb), np.nan)
    return X, mask


def estimate_x_std_profile(paths: np.ndarray, params: At1pParams, grid: PathGrid) -> np.ndarray:
    """Cross-sectional std of ``X_t`` per grid time over paths with ``V_t > Hhat(t)``."""
    paths = np.asarray(paths, dtype=float)
    times = grid.times
    if paths.shape[-1] != len(times):
        raise ValidationError("ensemble does not match the grid")
    X, mask = leverage_on_paths(paths, barrier(params, times))
    acc = XStdAccumulator(len(times))
    acc.add(X, mask)
    return acc.std()
