"""Closed-form references: GBM barrier survival and Black payer-swaption quoting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .errors import InvalidModelError, OutOfBandError
from .gauss import norm_cdf


def gbm_survival_F(mu, sigma, barrier, x, u):
    """P(min of GBM over (0, u] stays above ``barrier`` | start at ``x``).

    Vectorized over ``x`` and ``u``. Returns 0 for ``x <= barrier`` and the
    survival indicator for ``u == 0``.
    """
    if sigma <= 0 or barrier <= 0:
        raise InvalidModelError("need sigma > 0 and barrier > 0")
    x, u = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(u, dtype=float))
    alive = x > barrier
    pos_u = u > 0
    xs = np.where(alive, x, 2.0 * barrier)
    us = np.where(pos_u, u, 1.0)
    nu = mu - 0.5 * sigma * sigma
    sd = sigma * np.sqrt(us)
    log_ratio = np.log(xs / barrier)
    h1 = (log_ratio + nu * us) / sd
    h2 = (-log_ratio + nu * us) / sd
    # (a/x)^(2 nu / sigma^2) * Phi(h2) in log space
    log_power = -2.0 * nu / (sigma * sigma) * log_ratio
    second = np.exp(np.minimum(log_power + log_ndtr(h2), 700.0))
    val = np.clip(norm_cdf(h1) - second, 0.0, 1.0)
    val = np.where(pos_u, val, 1.0)
    out = np.where(alive, val, 0.0)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class BlackQuote:
    forward: float   # forward par spread
    strike: float
    expiry: float
    annuity: float   # risky duration at time 0
    vol: float

    def __post_init__(self):
        for name in ("forward", "strike", "expiry", "annuity", "vol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def black_payer_price(forward, strike, expiry, annuity, vol):
    total = vol * np.sqrt(expiry)
    if total <= 0:
        return annuity * max(forward - strike, 0.0)
    d1 = (np.log(forward / strike) + 0.5 * total * total) / total
    d2 = d1 - total
    return annuity * (forward * norm_cdf(d1) - strike * norm_cdf(d2))


def black_payer(quote: BlackQuote) -> float:
    return float(black_payer_price(quote.forward, quote.strike, quote.expiry,
                                   quote.annuity, quote.vol))


def implied_vol(price: float, forward: float, strike: float, expiry: float,
                annuity: float, lo: float = 1e-6, hi: float = 10.0,
                tol: float = 1e-12, max_iter: int = 200) -> float:
    """Black volatility reproducing ``price`` by bisection on ``[lo, hi]``."""
    intrinsic = annuity * max(forward - strike, 0.0)
    cap = annuity * forward
    if price <= intrinsic:
        raise OutOfBandError(
            f"price {price:.6g} at or below intrinsic value {intrinsic:.6g}", bound="lower")
    if price >= cap:
        raise OutOfBandError(
            f"price {price:.6g} at or above annuity*forward {cap:.6g}", bound="upper")
    a, b = lo, hi
    for _ in range(max_iter):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        if black_payer_price(forward, strike, expiry, annuity, mid) < price:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)
