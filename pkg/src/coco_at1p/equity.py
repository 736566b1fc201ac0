"""Equity as a down-and-out call on firm value, struck at the terminal barrier.

``f(t, V_t) = D(t, T) E_t[(V_T - Hhat(T))^+ 1{tau > T}]`` in closed form, and the
four comparison curves (two Black-Scholes calls, the AT1P knock-out call and
the AT1P plain call).
"""
from __future__ import annotations

import math
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .at1p import At1pParams, barrier, integrated_variance, log_path_increments
from .errors import InvalidIntervalError, ValidationError

_TINY_VARIANCE = 1e-300


def equity_value(params: At1pParams, t, Vt, T: float):
    """Closed-form knock-out call value; vectorised over ``t`` and ``Vt``.

    Zero at or below the barrier. Uses the four-term formula with ``d3..d6``
    where the drift integrals are ``int_t^T v ds = (r - q)(T - t) - U/2`` and
    ``U = int_t^T sigma^2``. The log-ratio ``log(Hhat(T)/H)`` enters unclipped:
    clipping it at zero misprices the option whenever ``Hhat(T) < H``.
    """
    t = np.asarray(t, dtype=float)
    V = np.asarray(Vt, dtype=float)
    if np.any(T <= t):
        raise InvalidIntervalError(f"equity maturity T={T} must exceed valuation time {t}")
    if np.any(V <= 0):
        raise ValidationError("firm value must be positive")
    t, V = np.broadcast_arrays(t, V)
    H = params.H
    B = params.B
    mu = params.r - params.q
    tau = T - t
    U = np.asarray(integrated_variance(params.vol, t, np.full_like(t, T)), dtype=float)
    Ht = np.asarray(barrier(params, t), dtype=float)
    HT = float(barrier(params, T))
    disc = np.exp(-params.r * tau)

    alive = V > Ht
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = np.sqrt(U)
        lhr = mu * T - B * float(integrated_variance(params.vol, 0.0, T))  # log(Hhat(T) / H)
        int_v = mu * tau - 0.5 * U  # int (r - q - sigma^2/2)
        int_v_s2 = mu * tau + 0.5 * U  # int (v + sigma^2)
        growth = np.exp(mu * tau)  # exp(int (v + sigma^2/2))
        a = np.log(V / H)
        b = np.log(Ht * Ht / (H * V))
        d3 = (lhr - a - int_v_s2) / s
        d4 = (lhr - a - int_v) / s
        d5 = (lhr - b - int_v_s2) / s
        d6 = (lhr - b - int_v) / s
        ratio = Ht / V
        value = disc * (
            V * growth * ndtr(-d3)
            - HT * ndtr(-d4)
            - Ht * ratio ** (2 * B) * growth * ndtr(-d5)
            + HT * ratio ** (2 * B - 1) * ndtr(-d6)
        )
        deterministic = disc * np.maximum(V * growth - HT, 0.0)
    value = np.where(U > _TINY_VARIANCE, value, deterministic)
    value = np.where(alive, np.maximum(value, 0.0), 0.0)
    return float(value) if value.ndim == 0 else value


def bs_call(S, K, T: float, r: float, q: float, sigma: float):
    """Black-Scholes call with continuous dividend yield; vectorised over ``S`` and ``K``."""
    S = np.asarray(S, dtype=float)
    K = np.asarray(K, dtype=float)
    sd = sigma * math.sqrt(T)
    with np.errstate(divide="ignore"):
        d1 = (np.log(S / K) + (r - q) * T) / sd + 0.5 * sd
    out = S * math.exp(-q * T) * ndtr(d1) - K * math.exp(-r * T) * ndtr(d1 - sd)
    return float(out) if out.ndim == 0 else out


class ProfileVariant(str, Enum):
    BS_FIXED_STRIKE = "bs_fixed_strike"
    BS_MOVING_STRIKE = "bs_moving_strike"
    AT1P_DAO_CALL = "at1p_dao_call"
    AT1P_PLAIN_CALL = "at1p_plain_call"


def plain_call_mc(params: At1pParams, V_grid, T: float, n_paths: int = 200_000, seed: int = 0):
    """Monte Carlo ``D(0,T) E[(V_T - Hhat(T))^+]`` (no knock-out) and its standard error.

    One set of terminal shocks is shared across the spot grid.
    """
    V = np.asarray(V_grid, dtype=float)
    drift, sd = log_path_increments(params, np.array([0.0, T]))
    z = np.random.default_rng(seed).standard_normal(n_paths)
    growth = np.exp(drift[0] + sd[0] * z)
    strike = barrier(params, T)
    disc = math.exp(-params.r * T)
    pay = disc * np.maximum(V[:, None] * growth[None, :] - strike, 0.0)
    return pay.mean(axis=1), pay.std(axis=1, ddof=1) / math.sqrt(n_paths)


def equity_profile(params: At1pParams, V_grid: Sequence[float], T: float, variant,
                   n_paths: int = 200_000, seed: int = 0) -> np.ndarray:
    """Price curve ``V -> price`` for one of the four comparison variants.

    Returns an ``(n, 2)`` array of ``(V, price)`` rows. The Black-Scholes
    variants use a single volatility ``sigma_1`` and strike ``Hhat(0)`` or
    ``Hhat(T)``; the AT1P plain call is priced by simulation.
    """
    try:
        variant = ProfileVariant(variant)
    except ValueError:
        raise ValidationError(f"unknown profile variant {variant!r}") from None
    V = np.asarray(V_grid, dtype=float)
    if V.size == 0:
        raise ValidationError("empty spot grid")
    sigma1 = params.sigmas[0]
    if variant is ProfileVariant.BS_FIXED_STRIKE:
        price = bs_call(V, barrier(params, 0.0), T, params.r, params.q, sigma1)
    elif variant is ProfileVariant.BS_MOVING_STRIKE:
        price = bs_call(V, barrier(params, T), T, params.r, params.q, sigma1)
    elif variant is ProfileVariant.AT1P_DAO_CALL:
        price = equity_value(params, 0.0, V, T)
    else:
        price, _ = plain_call_mc(params, V, T, n_paths, seed)
    return np.column_stack([V, np.broadcast_to(price, V.shape)])
