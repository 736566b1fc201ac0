"""AT1P firm-value model: piecewise-constant volatility, exponential barrier,
closed-form first-passage survival and exact lognormal path simulation.

The firm value follows ``dV = (r - q) V dt + sigma(t) V dW`` and default is the
first time ``V_t <= Hhat(t)`` with ``Hhat(t) = H exp((r - q) t - B int_0^t sigma^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, InvalidIntervalError, ValidationError

#: paths per random stream; part of the reproducibility contract
BLOCK_SIZE = 2048

FIRM_STREAM = 0
SHOCK_STREAM = 1


@dataclass(frozen=True)
class VolTermStructure:
    """Volatility ``sigma_i`` on ``(T_{i-1}, T_i]``, last value extended beyond ``T_n``."""

    node_times: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        nodes = tuple(float(t) for t in self.node_times)
        sig = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "node_times", nodes)
        object.__setattr__(self, "sigmas", sig)
        if not nodes or len(nodes) != len(sig):
            raise ValidationError("need one sigma per node time, at least one node")
        if nodes[0] <= 0 or any(b <= a for a, b in zip(nodes, nodes[1:])):
            raise ValidationError(f"node times must be positive and strictly increasing: {nodes}")
        if any(not s > 0 for s in sig):
            raise ValidationError(f"volatilities must be positive: {sig}")

    @classmethod
    def flat(cls, sigma: float, horizon: float = 1.0) -> "VolTermStructure":
        return cls((horizon,), (sigma,))

    def sigma_at(self, t):
        """Volatility in force at time ``t`` (left-continuous at nodes)."""
        idx = np.searchsorted(self.node_times, np.asarray(t, dtype=float), side="left")
        idx = np.minimum(idx, len(self.sigmas) - 1)
        return np.asarray(self.sigmas)[idx]

    def cumulative_variance(self, t):
        """``int_0^t sigma(s)^2 ds`` for ``t >= 0``; vectorised."""
        t = np.asarray(t, dtype=float)
        nodes = np.asarray(self.node_times)
        var = np.asarray(self.sigmas) ** 2
        starts = np.concatenate(([0.0], nodes[:-1]))
        cum = np.concatenate(([0.0], np.cumsum(var * (nodes - starts))))
        idx = np.minimum(np.searchsorted(nodes, t, side="left"), len(nodes) - 1)
        out = cum[idx] + var[idx] * (t - starts[idx])
        return float(out) if out.ndim == 0 else out

    def scaled(self, factor: float) -> "VolTermStructure":
        return VolTermStructure(self.node_times, tuple(s * factor for s in self.sigmas))


def integrated_variance(vol: VolTermStructure, t1, t2):
    """Exact ``int_{t1}^{t2} sigma(s)^2 ds`` for the piecewise-constant volatility."""
    a = np.asarray(t1, dtype=float)
    b = np.asarray(t2, dtype=float)
    if np.any(a < 0):
        raise InvalidIntervalError(f"negative start time {t1}")
    if np.any(a > b):
        raise InvalidIntervalError(f"interval start {t1} after end {t2}")
    out = np.maximum(vol.cumulative_variance(b) - vol.cumulative_variance(a), 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class At1pParams:
    """Model parameters. ``B`` is the barrier shape exponent, ``H`` the barrier
    level at time zero; ``q`` the payout ratio."""

    B: float
    H: float
    vol: VolTermStructure
    V0: float = 1.0
    r: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        if not self.H > 0:
            raise ValidationError(f"barrier level H must be positive, got {self.H}")
        if not self.V0 > 0:
            raise ValidationError(f"V0 must be positive, got {self.V0}")
        if not self.B >= 0:
            raise ValidationError(f"barrier exponent B must be non-negative, got {self.B}")

    @property
    def sigmas(self) -> tuple[float, ...]:
        return self.vol.sigmas

    def replace(self, **changes) -> "At1pParams":
        return replace(self, **changes)


def barrier(params: At1pParams, t):
    """Default barrier ``Hhat(t)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidIntervalError("barrier evaluated at negative time")
    out = params.H * np.exp((params.r - params.q) * t - params.B * params.vol.cumulative_variance(t))
    return float(out) if out.ndim == 0 else out


def survival_probability(params: At1pParams, T):
    """Closed-form ``Q(tau > T)`` under continuous monitoring; vectorised in ``T``."""
    if not params.V0 > params.H:
        raise DomainError(f"firm value V0={params.V0} starts at or below the barrier H={params.H}")
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise InvalidIntervalError("survival probability at negative time")
    u = np.asarray(params.vol.cumulative_variance(T), dtype=float)
    x0 = math.log(params.V0 / params.H)
    k = 2.0 * params.B - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.sqrt(u)
        d1 = (x0 + 0.5 * k * u) / s
        d2 = d1 - 2.0 * x0 / s
        out = ndtr(d1) - (params.H / params.V0) ** k * ndtr(d2)
    out = np.where(u > 0, np.clip(out, 0.0, 1.0), 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PathGrid:
    """Monitoring grid ``dt, 2dt, ...`` with the last point clipped to ``horizon``."""

    dt: float
    horizon: float

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise ValidationError("dt and horizon must be positive")
        if self.dt > self.horizon * (1 + 1e-12):
            raise ValidationError(f"dt={self.dt} exceeds horizon={self.horizon}")

    @property
    def n_steps(self) -> int:
        n = self.horizon / self.dt
        return max(1, int(math.ceil(n - 1e-9)))

    @property
    def times(self) -> np.ndarray:
        """Grid including ``t = 0``."""
        k = np.arange(self.n_steps + 1, dtype=float)
        return np.minimum(k * self.dt, self.horizon)


def block_rng(seed: int, block: int, stream: int = FIRM_STREAM) -> np.random.Generator:
    """Generator for one block of ``BLOCK_SIZE`` paths.

    Keyed by ``(seed, block, stream)`` only, so results do not depend on which
    worker simulates the block or in what order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(block), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def block_ranges(n_paths: int, block_size: int = BLOCK_SIZE) -> Iterator[tuple[int, int, int]]:
    """Yield ``(block_index, start, stop)`` covering ``range(n_paths)``."""
    for b, start in enumerate(range(0, n_paths, block_size)):
        yield b, start, min(start + block_size, n_paths)


def block_normals(seed: int, block: int, n: int, n_steps: int, stream: int = FIRM_STREAM,
                  antithetic: bool = False) -> np.ndarray:
    """Standard normal draws of shape ``(n, n_steps)`` for one block.

    With ``antithetic`` the second half of the rows mirrors the first.
    """
    rng = block_rng(seed, block, stream)
    if not antithetic:
        return rng.standard_normal((n, n_steps))
    half = (n + 1) // 2
    z = rng.standard_normal((half, n_steps))
    return np.concatenate([z, -z[: n - half]], axis=0)


def log_path_increments(params: At1pParams, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-step drift and standard deviation of ``log V`` on ``times`` (which starts at 0)."""
    dv = integrated_variance(params.vol, times[:-1], times[1:])
    drift = (params.r - params.q) * np.diff(times) - 0.5 * dv
    return drift, np.sqrt(dv)


def simulate_log_block(params: At1pParams, times: np.ndarray, seed: int, block: int, n: int,
                       antithetic: bool = False) -> np.ndarray:
    """``log V`` at ``times[1:]`` for the ``n`` paths of one block, shape ``(n, len(times)-1)``."""
    drift, sd = log_path_increments(params, times)
    z = block_normals(seed, block, n, len(times) - 1, FIRM_STREAM, antithetic)
    z *= sd
    z += drift
    np.cumsum(z, axis=1, out=z)
    z += math.log(params.V0)
    return z


def simulate_paths(params: At1pParams, grid: PathGrid, n_paths: int, seed: int,
                   antithetic: bool = False) -> np.ndarray:
    """Firm-value ensemble of shape ``(n_paths, len(grid.times))``, column 0 is ``V0``.

    Exact lognormal stepping: each step adds ``(r - q) dt - v/2 + sqrt(v) Z``
    with ``v`` the integrated variance over the step.
    """
    if n_paths < 1:
        raise ValidationError("need at least one path")
    times = grid.times
    out = np.empty((n_paths, len(times)))
    out[:, 0] = params.V0
    for b, start, stop in block_ranges(n_paths):
        out[start:stop, 1:] = np.exp(simulate_log_block(params, times, seed, b, stop - start, antithetic))
    return out


def first_passage_index(values: np.ndarray, barrier_values: np.ndarray) -> np.ndarray:
    """Index of the first column with ``V <= Hhat`` per row, ``-1`` if none."""
    hit = values <= barrier_values
    first = np.argmax(hit, axis=-1)
    return np.where(hit.any(axis=-1), first, -1)


def first_passage_time(path: Sequence[float], params: At1pParams, times: Sequence[float]) -> float | None:
    """First grid time with ``V_t <= Hhat(t)``, ``None`` if the barrier is never reached."""
    times = np.asarray(times, dtype=float)
    path = np.asarray(path, dtype=float)
    if path.shape != times.shape:
        raise ValidationError("path and time grid have different lengths")
    idx = int(first_passage_index(path, barrier(params, times)))
    return None if idx < 0 else float(times[idx])
