"""Quantized filtering and conditional survival probabilities.

The filter runs on the quantization tree: starting from the weights of grid 0,
mass is pushed through ``H[i, j] = g(x_i, y_k; x_j, y_{k+1}) * p[i, j]``, where
``g`` is the observation likelihood, multiplied by the bridge survival factor
when the barrier is in force. Each step is renormalized and the log of the
normalizer accumulated, so long observation windows do not underflow.

Two filters are run side by side on one observation path:

* with barrier: its normalized law is the posterior of the firm value given
  the observations and survival up to ``t_m``;
* without barrier: its total mass is the likelihood of the observations alone.

``p_full`` is the survival probability to ``t_n`` given observations and
survival to ``t_m``. ``p_y_only`` weights the same quantity by the probability
of having survived up to ``t_m`` given the observations alone, which is the
ratio of the two filter masses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidModelError
from .kernels import KernelContext, obs_likelihood
from .model import PathPair
from .quantizer import QuantizationTree

# per-step normalizer below which the filter is declared extinct
EXTINCTION_MASS = 1e-300


@dataclass(frozen=True)
class ObservationPath:
    """Observed values ``y_0 .. y_m`` at the first ``m + 1`` tree times."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size == 0:
            raise InvalidModelError("observation times and values must be matching 1-d arrays")
        if np.any(np.diff(times) <= 0):
            raise InvalidModelError("observation times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidModelError("observation values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.size - 1

    @classmethod
    def from_pair(cls, pair: PathPair) -> "ObservationPath":
        return cls(pair.grid.times[: pair.y_path.size], pair.y_path)


def read_observation_csv(path) -> ObservationPath:
    """Read a ``time,value`` CSV with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or [c.strip().lower() for c in rows[0]] != ["time", "value"]:
        raise InvalidModelError(f"{path}: expected header 'time,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise InvalidModelError(f"{path}: {exc}") from None
    if data.size == 0:
        raise InvalidModelError(f"{path}: no observations")
    return ObservationPath(data[:, 0], data[:, 1])


def write_observation_csv(obs: ObservationPath, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("time,value\n")
        for t, y in zip(obs.times, obs.values):
            fh.write(f"{t:.17g},{y:.17g}\n")


@dataclass(frozen=True)
class FilterVector:
    """Filter mass at ``step``, stored as a probability vector times ``exp(log_scale)``."""

    mass: np.ndarray
    log_scale: float
    step: int
    extinct: bool = False

    @property
    def raw(self) -> np.ndarray:
        return self.mass * np.exp(self.log_scale)

    @property
    def normalized(self) -> np.ndarray:
        return self.mass


def _check_obs(tree: QuantizationTree, obs: ObservationPath) -> int:
    m = obs.m
    if m > tree.n:
        raise InvalidModelError(f"observation path has {m} steps, tree only {tree.n}")
    if not np.allclose(obs.times, tree.time_grid.times[: m + 1], rtol=0.0, atol=1e-9):
        raise InvalidModelError("observation times do not match the tree's time grid")
    return m


def step_likelihood(tree: QuantizationTree, k: int, y_k: float, y_k1: float) -> np.ndarray:
    """Observation likelihood matrix between grids ``k`` and ``k + 1``."""
    ctx = KernelContext(tree.time_grid.times[k], tree.time_grid.dt[k], tree.spec)
    return obs_likelihood(ctx, tree.grids[k].points[:, None], y_k,
                          tree.grids[k + 1].points[None, :], y_k1)


def _run(tree: QuantizationTree, obs: ObservationPath, barrier_flags) -> list[FilterVector]:
    m = _check_obs(tree, obs)
    w0 = tree.grids[0].weights
    states = [[w0 / w0.sum(), float(np.log(w0.sum())), False] for _ in barrier_flags]
    for k in range(m):
        lik = step_likelihood(tree, k, obs.values[k], obs.values[k + 1])
        for st, barrier in zip(states, barrier_flags):
            if st[2]:
                continue
            kern = tree.barrier_kernel(k) if barrier else tree.transitions[k]
            new = st[0] @ (lik * kern)
            total = new.sum()
            if not total >= EXTINCTION_MASS:
                st[0] = np.zeros_like(new)
                st[1] = -np.inf
                st[2] = True
            else:
                st[0] = new / total
                st[1] += float(np.log(total))
    return [FilterVector(v, ls, m, ex) for v, ls, ex in states]


def filter_forward(tree: QuantizationTree, obs: ObservationPath,
                   with_barrier: bool = True) -> FilterVector:
    """Filter mass at the last observation step ``m``."""
    return _run(tree, obs, (with_barrier,))[0]


def filter_pair(tree: QuantizationTree, obs: ObservationPath) -> tuple[FilterVector, FilterVector]:
    """``(with_barrier, without_barrier)`` filters sharing one likelihood evaluation."""
    fa, f = _run(tree, obs, (True, False))
    return fa, f


@dataclass(frozen=True)
class SurvivalFunctionTable:
    """Entry ``i`` estimates survival from ``x_m^i`` at ``t_m`` to ``t_n``."""

    values: np.ndarray
    m: int
    n: int


def survival_table(tree: QuantizationTree, m: int, n: int) -> SurvivalFunctionTable:
    """Backward sweep ``F = K_m K_{m+1} ... K_{n-1} 1`` over barrier kernels."""
    if not 0 <= m <= n <= tree.n:
        raise InvalidModelError(f"need 0 <= m <= n <= {tree.n}, got m={m}, n={n}")
    f = np.ones(len(tree.grids[n]))
    for k in range(n - 1, m - 1, -1):
        f = tree.barrier_kernel(k) @ f
    return SurvivalFunctionTable(np.clip(f, 0.0, 1.0), m, n)


@dataclass(frozen=True)
class ConditionalSurvival:
    p_full: float
    p_y_only: float
    extinct: bool


@dataclass(frozen=True)
class SurvivalCurves:
    """Survival curves at tree steps ``horizons`` seen from the observation step ``m``."""

    horizons: np.ndarray
    times: np.ndarray
    p_full: np.ndarray
    p_y_only: np.ndarray
    survival_to_m: float      # P(no default by t_m | observations)
    extinct: bool


def _horizons(tree: QuantizationTree, m: int, horizons) -> np.ndarray:
    h = np.atleast_1d(np.asarray(horizons, dtype=int))
    if h.ndim != 1:
        raise InvalidModelError("horizons must be a 1-d integer array")
    if np.any(h < m) or np.any(h > tree.n):
        raise InvalidModelError(f"horizons must lie in [{m}, {tree.n}]")
    return h


def curves_from_posterior(tree: QuantizationTree, posterior: np.ndarray, m: int,
                          horizons, analytic_F: Callable | None = None) -> np.ndarray:
    """Survival curve ``sum_i posterior_i F(t_m, t_n, x_m^i)`` for each horizon ``n``.

    Without ``analytic_F`` the posterior row is pushed forward through the
    barrier kernels, which yields every horizon in one pass and equals the
    backward sweep of :func:`survival_table` up to rounding. ``analytic_F(x, u)``
    replaces the quantized survival function by a closed form.
    """
    h = _horizons(tree, m, horizons)
    times = tree.time_grid.times
    out = np.empty(h.size)
    if analytic_F is not None:
        x = tree.grids[m].points
        for idx, n in enumerate(h):
            out[idx] = posterior @ np.asarray(analytic_F(x, times[n] - times[m]), dtype=float)
        return np.clip(out, 0.0, 1.0)
    row = np.asarray(posterior, dtype=float)
    # dividing by the row's own total makes the empty product exactly 1
    total = row.sum()
    order = np.argsort(h, kind="stable")
    k = m
    for idx in order:
        while k < h[idx]:
            row = row @ tree.barrier_kernel(k)
            k += 1
        out[idx] = row.sum() / total
    return np.clip(out, 0.0, 1.0)


def survival_curves(tree: QuantizationTree, obs: ObservationPath, horizons,
                    analytic_F: Callable | None = None) -> SurvivalCurves:
    """Both conditional survival curves from a single pair of filter passes."""
    fa, f = filter_pair(tree, obs)
    m = fa.step
    h = _horizons(tree, m, horizons)
    times = tree.time_grid.times[h]
    if fa.extinct:
        zeros = np.zeros(h.size)
        return SurvivalCurves(h, times, zeros, zeros.copy(), 0.0, True)
    ratio = float(np.clip(np.exp(fa.log_scale - f.log_scale), 0.0, 1.0))
    p_full = curves_from_posterior(tree, fa.mass, m, h, analytic_F)
    return SurvivalCurves(h, times, p_full, p_full * ratio, ratio, False)


def conditional_survival(tree: QuantizationTree, obs: ObservationPath, n: int,
                         analytic_F: Callable | None = None) -> ConditionalSurvival:
    c = survival_curves(tree, obs, [n], analytic_F)
    return ConditionalSurvival(float(c.p_full[0]), float(c.p_y_only[0]), c.extinct)


def survival_curve(tree: QuantizationTree, obs: ObservationPath, horizons,
                   analytic_F: Callable | None = None) -> np.ndarray:
    """``p_full`` at each horizon step."""
    return survival_curves(tree, obs, horizons, analytic_F).p_full


def unconditional_survival(tree: QuantizationTree, horizons) -> np.ndarray:
    """Survival probabilities seen from time 0 (no observations)."""
    w0 = tree.grids[0].weights
    return curves_from_posterior(tree, w0 / w0.sum(), 0, horizons)
