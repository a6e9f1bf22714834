"""Per-step weighting kernels of the discretized filtering problem.

* ``bridge_survival``: probability that the Brownian bridge between two Euler
  nodes stays above the barrier.
* ``obs_likelihood``: density of the next observation given both signal
  endpoints, i.e. joint transition density over the signal's marginal one.
* ``filter_kernel``: their product.

All coefficients are frozen at the left node ``(t_k, x_k, y_k)``. Functions
broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidModelError
from .model import DiffusionSpec

# exp() of anything below this is 0 in double precision
EXP_FLOOR = -745.0


@dataclass(frozen=True)
class KernelContext:
    t_k: float
    dt: float
    spec: DiffusionSpec

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidModelError("kernel step needs dt > 0")


def bridge_survival_var(x_k, x_k1, barrier, var):
    """Bridge survival factor with the bridge variance ``dt * sigma^2`` given directly."""
    x_k = np.asarray(x_k, dtype=float)
    x_k1 = np.asarray(x_k1, dtype=float)
    with np.errstate(over="ignore"):
        expo = -2.0 * (x_k - barrier) * (x_k1 - barrier) / var
    expo = np.clip(expo, EXP_FLOOR, 0.0)
    alive = (x_k >= barrier) & (x_k1 >= barrier)
    return np.where(alive, -np.expm1(expo), 0.0)


def bridge_survival(ctx: KernelContext, x_k, x_k1, barrier=None):
    if barrier is None:
        barrier = ctx.spec.barrier
    sig = ctx.spec.vol_x(ctx.t_k, np.asarray(x_k, dtype=float))
    if np.any(sig <= 0):
        raise InvalidModelError("signal volatility must be positive")
    return bridge_survival_var(x_k, x_k1, barrier, ctx.dt * sig * sig)


def obs_likelihood(ctx: KernelContext, x_k, y_k, x_k1, y_k1):
    spec, t, dt = ctx.spec, ctx.t_k, ctx.dt
    x_k = np.asarray(x_k, dtype=float)
    y_k = np.asarray(y_k, dtype=float)
    sig = spec.vol_x(t, x_k)
    nu = spec.vol_y_common(t, y_k)
    dl = spec.vol_y_idio(t, y_k)
    if np.any(sig <= 0) or np.any(nu <= 0) or np.any(dl <= 0):
        raise InvalidModelError("kernel volatilities must be positive")
    mean_x = x_k + spec.drift_x(t, x_k) * dt
    mean_y = y_k + spec.drift_y(t, y_k, x_k) * dt
    mismatch = (x_k1 - mean_x) / sig - (y_k1 - mean_y) / nu
    expo = -(nu * nu) / (2.0 * dl * dl * dt) * mismatch * mismatch
    return np.exp(np.maximum(expo, EXP_FLOOR)) / (np.sqrt(2.0 * np.pi * dt) * dl)


def filter_kernel(ctx: KernelContext, x_k, y_k, x_k1, y_k1, barrier=None):
    return (obs_likelihood(ctx, x_k, y_k, x_k1, y_k1)
            * bridge_survival(ctx, x_k, x_k1, barrier))


def likelihood_bound(ctx: KernelContext, y_k) -> np.ndarray:
    """Supremum of ``obs_likelihood`` over signal endpoints."""
    dl = ctx.spec.vol_y_idio(ctx.t_k, np.asarray(y_k, dtype=float))
    return 1.0 / (np.sqrt(2.0 * np.pi * ctx.dt) * dl)
