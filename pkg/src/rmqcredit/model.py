"""Signal/observation diffusion pair, its Euler scheme and path simulation.

The signal ``X`` (firm value) and the observation ``Y`` (noisy proxy) share
the Brownian motion ``W``; ``Y`` also loads on an independent ``W~``::

    dX = b(t, X) dt + sigma(t, X) dW
    dY = h(t, Y, X) dt + nu(t, Y) dW + delta(t, Y) dW~

Coefficient callables must broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidModelError, NumericalOverflowError
from .gauss import norm_ppf

Coef2 = Callable[[float, np.ndarray], np.ndarray]
Coef3 = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DiffusionSpec:
    drift_x: Coef2
    vol_x: Coef2
    drift_y: Coef3
    vol_y_common: Coef2
    vol_y_idio: Coef2
    x0: float
    y0: float
    barrier: float
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.barrier < self.x0:
            raise InvalidModelError(
                f"barrier {self.barrier} must lie below x0 {self.x0}")


@dataclass(frozen=True)
class GbmSpec:
    """Geometric Brownian signal with proportionally noised observation."""

    mu: float
    sigma: float
    delta: float
    x0: float = 86.3
    y0: float = 86.3
    barrier: float = 76.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidModelError("sigma must be positive")
        if self.delta < 0:
            raise InvalidModelError("delta must be nonnegative")
        if not 0 < self.barrier < self.x0:
            raise InvalidModelError("need 0 < barrier < x0")

    def diffusion(self) -> DiffusionSpec:
        mu, sigma, delta = self.mu, self.sigma, self.delta
        return DiffusionSpec(
            drift_x=lambda t, x: mu * x,
            vol_x=lambda t, x: sigma * x,
            drift_y=lambda t, y, x: mu * y,
            vol_y_common=lambda t, y: sigma * y,
            vol_y_idio=lambda t, y: delta * y,
            x0=self.x0,
            y0=self.y0,
            barrier=self.barrier,
            params={"model": "gbm", "mu": mu, "sigma": sigma, "delta": delta,
                    "x0": self.x0, "y0": self.y0, "barrier": self.barrier},
        )


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times ``t_0 = 0 < ... < t_n`` with observation index ``m``."""

    times: np.ndarray
    m: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise InvalidModelError("time grid must be a nonempty 1-d array")
        if np.any(np.diff(times) <= 0):
            raise InvalidModelError("time grid must be strictly increasing")
        if not 0 <= self.m <= times.size - 1:
            raise InvalidModelError(f"observation index {self.m} outside grid")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, dt: float, n: int, m: int) -> "TimeGrid":
        return cls(dt * np.arange(n + 1), m)

    @property
    def n(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def s(self) -> float:
        return float(self.times[self.m])

    @property
    def t(self) -> float:
        return float(self.times[-1])

    def index_of(self, time: float, tol: float = 1e-9) -> int:
        k = int(np.argmin(np.abs(self.times - time)))
        if abs(self.times[k] - time) > tol:
            raise InvalidModelError(f"time {time} is not a grid node")
        return k


@dataclass(frozen=True)
class PathPair:
    x_path: np.ndarray
    y_path: np.ndarray
    grid: TimeGrid


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator; ``stream`` selects a disjoint substream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def std_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals by inverse-CDF transform of uniforms on (0, 1)."""
    u = rng.random(shape)
    u[u == 0.0] = 2.0 ** -54
    return norm_ppf(u)


def euler_step(spec: DiffusionSpec, t_k, x, y, dt, z1, z2, step: int | None = None):
    if np.any(np.asarray(dt) <= 0):
        raise InvalidModelError("Euler step needs dt > 0")
    sq = np.sqrt(dt)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x + spec.drift_x(t_k, x) * dt + spec.vol_x(t_k, x) * sq * z1
        y_new = (y + spec.drift_y(t_k, y, x) * dt + spec.vol_y_common(t_k, y) * sq * z1
                 + spec.vol_y_idio(t_k, y) * sq * z2)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
        where = "" if step is None else f" at step {step}"
        raise NumericalOverflowError(f"non-finite Euler state{where}", step=step)
    return x_new, y_new


def simulate_paths(spec: DiffusionSpec, grid: TimeGrid, n_paths: int, seed: int,
                   stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_paths`` Euler pairs; returns ``(X, Y)`` of shapes
    ``(n_paths, n + 1)`` and ``(n_paths, m + 1)``.

    Every (path, step) consumes exactly two normals, path-major, so path 0
    of a batch coincides with :func:`simulate_pair` for the same seed.
    """
    n, m = grid.n, grid.m
    z = std_normals(make_rng(seed, stream), (n_paths, n, 2))
    xs = np.empty((n_paths, n + 1))
    ys = np.empty((n_paths, m + 1))
    xs[:, 0] = spec.x0
    ys[:, 0] = spec.y0
    x = xs[:, 0].copy()
    y = ys[:, 0].copy()
    for k in range(n):
        x_new, y_new = euler_step(spec, grid.times[k], x, y, grid.dt[k],
                                  z[:, k, 0], z[:, k, 1], step=k)
        xs[:, k + 1] = x_new
        if k < m:
            ys[:, k + 1] = y_new
        x, y = x_new, y_new
    return xs, ys


def simulate_pair(spec: DiffusionSpec, grid: TimeGrid, seed: int) -> PathPair:
    xs, ys = simulate_paths(spec, grid, 1, seed)
    return PathPair(xs[0], ys[0], grid)


def first_passage_indicator(x_path, barrier: float):
    """Discretely monitored survival: True iff every node stays strictly above the barrier."""
    x_path = np.asarray(x_path, dtype=float)
    if x_path.size == 0:
        raise ValueError("empty path")
    return np.all(x_path > barrier, axis=-1)
