"""Two-stage calibration of AT1P parameters ``(B, H, sigma_1..sigma_n)``.

Stage 1 anneals over a bounded box to find a starting point; stage 2 runs
Levenberg-Marquardt on transformed coordinates (log for ``B`` and the
volatilities, logit for ``H``). The cost is the weighted sum of squared
relative errors between model and market observables.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .at1p import At1pParams, VolTermStructure
from .capital import CapitalRatioModel, capital_ratio_proxy
from .cds import CdsStrip
from .equity import equity_value
from .errors import CocoError, DomainError, ValidationError
from .market import MarketSnapshot
from .optim import levenberg_marquardt, simulated_annealing

log = logging.getLogger(__name__)

STAGE1_B_MAX = 5.0
_B_FLOOR = 1e-12
# exp(50) is far outside any sensible B or sigma and keeps sigma**2 finite
_LOG_MAX = 50.0


def param_names(n_sigmas: int) -> list[str]:
    return ["B", "H"] + [f"sigma_{i + 1}" for i in range(n_sigmas)]


def params_from_vector(x, node_times: Sequence[float], r: float, q: float, V0: float = 1.0) -> At1pParams:
    x = np.asarray(x, dtype=float)
    return At1pParams(B=float(x[0]), H=float(x[1]), vol=VolTermStructure(tuple(node_times), tuple(x[2:])),
                      V0=V0, r=r, q=q)


def vector_from_params(params: At1pParams) -> np.ndarray:
    return np.array([params.B, params.H, *params.sigmas])


@dataclass
class ObservableModel:
    """Model side of the calibration: maps parameters to observable values.

    Produces the CDS par spreads for ``cds_tenors``, then optionally the
    capital-ratio proxy at time zero and the equity value ``f(0, V0)`` with
    maturity ``equity_maturity``.
    """

    r: float
    q: float
    recovery: float
    cds_tenors: tuple[float, ...]
    capital: CapitalRatioModel | None = None
    equity_maturity: float | None = None
    frequency: int = 4
    refinement: int = 1
    V0: float = 1.0

    @property
    def labels(self) -> tuple[str, ...]:
        out = [f"CDS_{t:g}Y" for t in self.cds_tenors]
        if self.capital is not None:
            out.append("capital_ratio")
        if self.equity_maturity is not None:
            out.append("equity")
        return tuple(out)

    def __post_init__(self):
        self.cds_tenors = tuple(float(t) for t in self.cds_tenors)
        self._strip = CdsStrip(self.cds_tenors, self.frequency, self.refinement)

    def params(self, x, node_times) -> At1pParams:
        return params_from_vector(x, node_times, self.r, self.q, self.V0)

    def values(self, params: At1pParams) -> np.ndarray:
        out = list(self._strip.par_spreads(params, self.recovery))
        if self.capital is not None:
            out.append(capital_ratio_proxy(self.capital, params.V0, params.H))
        if self.equity_maturity is not None:
            out.append(equity_value(params, 0.0, params.V0, self.equity_maturity))
        return np.asarray(out, dtype=float)


@dataclass
class CalibrationSpec:
    labels: tuple[str, ...]
    market: np.ndarray
    node_times: tuple[float, ...]
    weights: np.ndarray | None = None
    fixed: dict[str, float] = field(default_factory=dict)
    stage1_lower: np.ndarray | None = None
    stage1_upper: np.ndarray | None = None

    def __post_init__(self):
        self.market = np.asarray(self.market, dtype=float)
        self.node_times = tuple(float(t) for t in self.node_times)
        if len(self.labels) != self.market.size:
            raise ValidationError("one label per market observable")
        zero = [lab for lab, v in zip(self.labels, self.market) if v == 0]
        if zero:
            raise ValidationError(f"relative error undefined for zero market value: {', '.join(zero)}")
        if self.weights is None:
            self.weights = np.full(self.market.size, 1.0 / self.market.size)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != self.market.shape or np.any(self.weights <= 0):
            raise ValidationError("weights must be positive, one per observable")
        unknown = set(self.fixed) - set(self.names)
        if unknown:
            raise ValidationError(f"unknown fixed parameter(s): {sorted(unknown)}")
        n = len(self.names)
        if self.stage1_lower is None:
            self.stage1_lower = np.zeros(n)
        if self.stage1_upper is None:
            self.stage1_upper = np.array([STAGE1_B_MAX] + [1.0] * (n - 1))
        self.stage1_lower = np.asarray(self.stage1_lower, dtype=float)
        self.stage1_upper = np.asarray(self.stage1_upper, dtype=float)

    @property
    def names(self) -> list[str]:
        return param_names(len(self.node_times))

    @property
    def free(self) -> np.ndarray:
        return np.array([n not in self.fixed for n in self.names])

    def pin(self, x) -> np.ndarray:
        x = np.array(x, dtype=float)
        for i, n in enumerate(self.names):
            if n in self.fixed:
                x[i] = self.fixed[n]
        return x


@dataclass
class CalibrationReport:
    labels: tuple[str, ...]
    names: list[str]
    x0: np.ndarray
    x: np.ndarray
    params: At1pParams
    cost: float
    market: np.ndarray
    model: np.ndarray
    iterations: int
    evaluations: int
    converged: bool
    message: str
    warnings: list[str] = field(default_factory=list)

    @property
    def relative_errors(self) -> np.ndarray:
        return (self.model - self.market) / self.market

    def table(self) -> str:
        lines = ["parameter        start           calibrated"]
        for n, a, b in zip(self.names, self.x0, self.x):
            lines.append(f"{n:<10} {a:>14.8f} {b:>18.10f}")
        lines.append("")
        lines.append("observable       market             model       rel. error")
        for lab, m, v, e in zip(self.labels, self.market, self.model, self.relative_errors):
            lines.append(f"{lab:<14} {m:>12.8g} {v:>16.10g} {e:>14.3e}")
        lines.append("")
        lines.append(f"cost {self.cost:.6e}  iterations {self.iterations}  evaluations {self.evaluations}"
                     f"  converged {self.converged} ({self.message})")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def _model_values(x, spec: CalibrationSpec, context: ObservableModel) -> np.ndarray:
    try:
        return context.values(context.params(x, spec.node_times))
    except CocoError:
        return np.full(spec.market.size, np.nan)


def residual_vector(x, spec: CalibrationSpec, context: ObservableModel) -> np.ndarray:
    """``sqrt(w_i) (phi_i(x) - phi_i^M) / phi_i^M``; the cost is its squared norm."""
    phi = _model_values(x, spec, context)
    return np.sqrt(spec.weights) * (phi - spec.market) / spec.market


def cost(x, spec: CalibrationSpec, context: ObservableModel) -> float:
    """Weighted sum of squared relative errors; ``inf`` where the model is undefined."""
    res = residual_vector(x, spec, context)
    c = float(res @ res)
    return c if math.isfinite(c) else math.inf


_LOG_COST_FLOOR = 1e-300


def stage1_anneal(spec: CalibrationSpec, context: ObservableModel, seed: int, **options) -> np.ndarray:
    """Coarse global search over the stage-1 box; returns the full parameter vector.

    The chain runs on ``log(cost)``: the cost spans many decades across the
    box, and a temperature tuned to the high end never resolves the basin.
    The minimiser is unchanged.
    """
    lo = spec.pin(spec.stage1_lower)
    hi = spec.pin(spec.stage1_upper)

    def log_cost(x):
        c = cost(x, spec, context)
        return math.log(c + _LOG_COST_FLOOR) if math.isfinite(c) else math.inf

    res = simulated_annealing(log_cost, lo, hi, seed, **options)
    return spec.pin(res.x)


class _Transform:
    """Unconstrained coordinates for the free parameters: log for B and sigmas, logit for H."""

    def __init__(self, spec: CalibrationSpec):
        self.spec = spec
        self.free_idx = np.flatnonzero(spec.free)
        self.kinds = ["logit" if spec.names[i] == "H" else "log" for i in self.free_idx]

    def to_u(self, x) -> np.ndarray:
        u = []
        for i, kind in zip(self.free_idx, self.kinds):
            v = x[i]
            if kind == "logit":
                v = min(max(v, 1e-15), 1 - 1e-15)
                u.append(math.log(v / (1 - v)))
            else:
                u.append(math.log(max(v, _B_FLOOR)))
        return np.array(u)

    def to_x(self, u) -> np.ndarray:
        x = self.spec.pin(np.zeros(len(self.spec.names)))
        for i, kind, ui in zip(self.free_idx, self.kinds, u):
            x[i] = 1.0 / (1.0 + math.exp(-ui)) if kind == "logit" else math.exp(min(ui, _LOG_MAX))
        return x


def stage2_lm(x0, spec: CalibrationSpec, context: ObservableModel, **options) -> CalibrationReport:
    """Local Levenberg-Marquardt refinement from ``x0``."""
    x0 = spec.pin(x0)
    tr = _Transform(spec)
    if tr.free_idx.size == 0:
        return _report(spec, context, x0, x0, 0, 1, True, "all parameters fixed")
    if not math.isfinite(cost(x0, spec, context)):
        raise DomainError(f"cost is not finite at the starting point {x0}")
    res = levenberg_marquardt(lambda u: residual_vector(tr.to_x(u), spec, context), tr.to_u(x0), **options)
    x = tr.to_x(res.x)
    return _report(spec, context, x0, x, res.n_iter, res.n_evals, res.converged, res.message)


def _report(spec, context, x0, x, iterations, evaluations, converged, message) -> CalibrationReport:
    return CalibrationReport(
        labels=spec.labels,
        names=spec.names,
        x0=np.asarray(x0, dtype=float),
        x=np.asarray(x, dtype=float),
        params=context.params(x, spec.node_times),
        cost=cost(x, spec, context),
        market=spec.market.copy(),
        model=_model_values(x, spec, context),
        iterations=iterations,
        evaluations=evaluations,
        converged=converged,
        message=message,
    )


def calibrate(spec: CalibrationSpec, context: ObservableModel, seed: int = 0, x0=None,
              anneal_options: Mapping | None = None, lm_options: Mapping | None = None) -> CalibrationReport:
    """Stage 1 (unless ``x0`` is given) followed by stage 2."""
    if x0 is None:
        x0 = stage1_anneal(spec, context, seed, **(anneal_options or {}))
    return stage2_lm(x0, spec, context, **(lm_options or {}))


def cds_spec(snapshot: MarketSnapshot, fixed: Mapping[str, float] | None = None) -> CalibrationSpec:
    tenors = tuple(snapshot.tenors)
    labels = tuple(f"CDS_{t:g}Y" for t in tenors)
    return CalibrationSpec(labels, snapshot.spreads, tenors, fixed=dict(fixed or {}))


def cds_context(snapshot: MarketSnapshot, q: float = 0.0, **kwargs) -> ObservableModel:
    return ObservableModel(r=snapshot.r, q=q, recovery=snapshot.recovery_R, cds_tenors=tuple(snapshot.tenors),
                           **kwargs)


def calibrate_cds(snapshot: MarketSnapshot, q: float = 0.0, fixed: Mapping[str, float] | None = None,
                  seed: int = 0, x0=None, refinement: int = 1, **kwargs) -> CalibrationReport:
    """Fit to the CDS strip only (the problem is over-parametrised unless ``B``/``H`` are pinned)."""
    context = cds_context(snapshot, q, refinement=refinement)
    return calibrate(cds_spec(snapshot, fixed), context, seed, x0, **kwargs)


def calibrate_cds_from_start(snapshot: MarketSnapshot, H_start: float, q: float = 0.0, B: float = 0.0,
                             seed: int = 0, refinement: int = 1,
                             anneal_options: Mapping | None = None,
                             lm_options: Mapping | None = None) -> CalibrationReport:
    """CDS-only fit with ``B`` pinned and ``H`` free, started from ``H_start``.

    The volatilities are annealed with ``H`` held at ``H_start``; the local
    stage then frees ``H``. CDS spreads alone do not identify ``H``, so the
    answer depends on the start.
    """
    context = cds_context(snapshot, q, refinement=refinement)
    x0 = stage1_anneal(cds_spec(snapshot, {"B": B, "H": H_start}), context, seed, **(anneal_options or {}))
    return stage2_lm(x0, cds_spec(snapshot, {"B": B}), context, **(lm_options or {}))


def full_problem(snapshot: MarketSnapshot, equity_maturity: float, capital_model: CapitalRatioModel,
                 q: float = 0.0, fixed: Mapping[str, float] | None = None,
                 refinement: int = 1) -> tuple[CalibrationSpec, ObservableModel, list[str]]:
    """Spec and context for CDS + capital ratio + equity, degrading to CDS-only without equity."""
    notes: list[str] = []
    tenors = tuple(snapshot.tenors)
    c0 = snapshot.reported_capital_ratio
    if snapshot.equity_observable is None or c0 is None:
        msg = "equity observable or capital ratio missing: calibrating to CDS spreads only"
        warnings.warn(msg, stacklevel=3)
        log.warning(msg)
        notes.append(msg)
        return cds_spec(snapshot, fixed), cds_context(snapshot, q, refinement=refinement), notes
    if not c0 > capital_model.trigger_cbar:
        raise DomainError(
            f"reported capital ratio {c0} is not above the trigger {capital_model.trigger_cbar}: "
            "conversion would precede the valuation date"
        )
    context = ObservableModel(r=snapshot.r, q=q, recovery=snapshot.recovery_R, cds_tenors=tenors,
                              capital=capital_model, equity_maturity=equity_maturity,
                              refinement=refinement)
    market = np.concatenate([snapshot.spreads, [c0, snapshot.equity_observable]])
    spec = CalibrationSpec(context.labels, market, tenors, fixed=dict(fixed or {}))
    return spec, context, notes


def calibrate_full(snapshot: MarketSnapshot, coco, capital_model: CapitalRatioModel, seed: int = 0,
                   q: float = 0.0, x0=None, fixed: Mapping[str, float] | None = None,
                   refinement: int = 1, **kwargs) -> CalibrationReport:
    """Calibrate to CDS spreads, the last reported capital ratio and the equity observable.

    Equity is priced as a knock-out call maturing with the CoCo.
    """
    T = snapshot.time_to(coco.maturity_date)
    spec, context, notes = full_problem(snapshot, T, capital_model, q, fixed, refinement)
    report = calibrate(spec, context, seed, x0, **kwargs)
    report.warnings.extend(notes)
    return report
