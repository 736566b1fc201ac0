"""Box-constrained simulated annealing and a finite-difference Levenberg-Marquardt solver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CalibrationError, NumericalError, ValidationError


@dataclass
class AnnealResult:
    x: np.ndarray
    cost: float
    n_evals: int
    initial_temperature: float
    acceptance_first_level: float


def _interior(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shrink an open box slightly so proposals never land on its faces."""
    pad = 1e-9 * (hi - lo)
    return lo + pad, hi - pad


def _better(c_new: float, x_new: np.ndarray, c_old: float, x_old: np.ndarray) -> bool:
    if c_new != c_old:
        return c_new < c_old
    return tuple(x_new) < tuple(x_old)


def simulated_annealing(
    func: Callable[[np.ndarray], float],
    lower,
    upper,
    seed: int,
    *,
    n_temps: int = 150,
    proposals_per_temp: int = 200,
    cooling: float = 0.95,
    target_acceptance: float = 0.8,
    min_scale: float = 1e-3,
) -> AnnealResult:
    """Minimise ``func`` over the open box ``(lower, upper)``.

    Geometric cooling ``T_k = T_0 cooling^k``. ``T_0`` is set from the median
    uphill move among the initial uniform proposals so that a typical uphill
    move is accepted with probability ``target_acceptance``. Each level restarts
    from the best point seen so far; proposals are uniform in a box around the
    current point whose width shrinks like ``cooling^k``.
    Coordinates with ``lower == upper`` are held fixed. Returns the best point
    seen (ties go to the lexicographically smaller vector).
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != hi.shape or np.any(hi < lo) or not np.all(np.isfinite(lo) & np.isfinite(hi)):
        raise ValidationError(f"infeasible annealing bounds: {lo} .. {hi}")
    rng = np.random.Generator(np.random.PCG64(seed))
    free = hi > lo
    lo_i, hi_i = _interior(lo, hi)
    lo_i[~free] = hi_i[~free] = lo[~free]
    width = hi_i - lo_i
    n_evals = 0

    def evaluate(x):
        nonlocal n_evals
        n_evals += 1
        c = float(func(x))
        return c if math.isfinite(c) else math.inf

    if not free.any():
        x = lo.copy()
        return AnnealResult(x, evaluate(x), n_evals, 0.0, 1.0)

    samples = lo_i + width * rng.random((proposals_per_temp, lo.size))
    costs = np.array([evaluate(x) for x in samples])
    best_i = 0
    for i in range(1, len(costs)):
        if _better(costs[i], samples[i], costs[best_i], samples[best_i]):
            best_i = i
    x, c = samples[best_i].copy(), costs[best_i]
    best_x, best_c = x.copy(), c

    finite = costs[np.isfinite(costs)]
    uphill = np.diff(finite)
    uphill = uphill[uphill > 0]
    T0 = float(-np.median(uphill) / math.log(target_acceptance)) if uphill.size else 1.0
    if not T0 > 0:
        T0 = 1.0

    first_rate = 0.0
    for k in range(n_temps):
        T = T0 * cooling**k
        scale = max(cooling**k, min_scale) * width
        x, c = best_x.copy(), best_c
        accepted = 0
        for _ in range(proposals_per_temp):
            step = (rng.random(lo.size) - 0.5) * scale
            y = np.clip(x + step, lo_i, hi_i)
            cy = evaluate(y)
            if cy <= c or rng.random() < math.exp(-(cy - c) / T):
                x, c = y, cy
                accepted += 1
                if _better(c, x, best_c, best_x):
                    best_x, best_c = x.copy(), c
        if k == 0:
            first_rate = accepted / proposals_per_temp
    return AnnealResult(best_x, best_c, n_evals, T0, first_rate)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    n_iter: int
    n_evals: int
    converged: bool
    message: str


def fd_jacobian(fun, x: np.ndarray, f0: np.ndarray, rel_step: float = 1e-6, abs_step: float = 1e-8):
    """Forward-difference Jacobian with step ``max(rel_step |x_j|, abs_step)``."""
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = max(rel_step * abs(x[j]), abs_step)
        xp = x.copy()
        xp[j] += h
        J[:, j] = (fun(xp) - f0) / (xp[j] - x[j])
    return J


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    x0,
    *,
    max_iter: int = 500,
    ftol: float = 1e-12,
    gtol: float = 1e-10,
    rel_step: float = 1e-6,
    abs_step: float = 1e-8,
    lambda_max: float = 1e20,
) -> LMResult:
    """Minimise ``sum(residuals(x)**2)`` with Marquardt-scaled damping.

    Stops when an accepted step lowers the cost by less than ``ftol``
    relative, when the gradient infinity-norm drops below ``gtol``, when the
    cost hits zero, or after ``max_iter`` accepted iterations.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residuals(x), dtype=float)
    n_evals = 1
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise CalibrationError(f"non-finite cost at the starting point {x}")
    if cost == 0.0:
        return LMResult(x, cost, 0, n_evals, True, "zero cost at start")

    lam = None
    nu = 2.0
    for it in range(max_iter):
        J = fd_jacobian(residuals, x, r, rel_step, abs_step)
        n_evals += x.size
        if not np.all(np.isfinite(J)):
            raise NumericalError("non-finite Jacobian")
        g = J.T @ r
        if np.max(np.abs(g)) < gtol:
            return LMResult(x, cost, it, n_evals, True, "gradient below tolerance")
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12 * max(np.max(np.diag(A)), 1e-300))
        if lam is None:
            lam = 1e-3 * float(np.max(diag))
        while True:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(A + lam * np.diag(diag), -g, rcond=None)[0]
            x_new = x + delta
            r_new = np.asarray(residuals(x_new), dtype=float)
            n_evals += 1
            cost_new = float(r_new @ r_new)
            predicted = float(delta @ (lam * diag * delta - g))
            if math.isfinite(cost_new) and cost_new < cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 1.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                break
            lam *= nu
            nu *= 2.0
            if lam > lambda_max:
                return LMResult(x, cost, it, n_evals, True, "no further decrease possible")
        decrease = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        if cost == 0.0:
            return LMResult(x, cost, it + 1, n_evals, True, "zero cost")
        if decrease < ftol:
            return LMResult(x, cost, it + 1, n_evals, True, "relative cost decrease below tolerance")
    return LMResult(x, cost, max_iter, n_evals, False, "maximum iterations reached")
