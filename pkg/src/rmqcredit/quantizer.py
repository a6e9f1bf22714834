"""Recursive marginal quantization of the Euler signal.

Given the quantized law of ``X_k`` on grid ``Gamma_k``, one Euler step turns
it into a Gaussian mixture (one component per grid point). ``Gamma_{k+1}`` is
an optimal quadratic quantizer of that mixture. Cell masses, first moments
and distortions are closed-form in 1-d, so grids are optimized by
deterministic Lloyd iterations, optionally accelerated by damped Newton
steps on the tridiagonal Hessian.
"""

from __future__ import annotations

import ast
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr

from .errors import InvalidModelError, QuantizationError
from .gauss import SQRT_2PI, norm_cdf, norm_pdf
from .kernels import bridge_survival_var
from .model import DiffusionSpec, TimeGrid

log = logging.getLogger(__name__)

EMPTY_CELL_MASS = 1e-14
INV_SQRT_2PI = 1.0 / SQRT_2PI


def conditional_moments(spec: DiffusionSpec, t_k: float, x, dt: float):
    """Mean and standard deviation of one Euler step started at ``x``."""
    if not dt > 0:
        raise InvalidModelError("need dt > 0")
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(dt) * spec.vol_x(t_k, x)
    if np.any(~(sd > 0)):
        raise InvalidModelError(f"non-positive conditional stdev at t={t_k}")
    return x + spec.drift_x(t_k, x) * dt, sd


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape != w.shape:
            raise ValueError("points and weights differ in length")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.size


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    stdevs: np.ndarray

    @classmethod
    def euler_image(cls, spec: DiffusionSpec, t_k: float, grid: Grid, dt: float):
        """Law of one Euler step started from the quantized law ``grid``."""
        means, sds = conditional_moments(spec, t_k, grid.points, dt)
        return cls(grid.weights.copy(), means, sds)

    def mean(self) -> float:
        return float(self.weights @ self.means / self.weights.sum())

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.stdevs
        return norm_cdf(z) @ self.weights

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.stdevs
        return (norm_pdf(z) / self.stdevs) @ self.weights

    def quantile(self, levels, table_size: int = 513, newton_steps: int = 3):
        levels = np.asarray(levels, dtype=float)
        lo = float(np.min(self.means - 10.0 * self.stdevs))
        hi = float(np.max(self.means + 10.0 * self.stdevs))
        xs = np.linspace(lo, hi, table_size)
        cdf = np.maximum.accumulate(self.cdf(xs))
        x = np.interp(levels, cdf, xs)
        for _ in range(newton_steps):
            dens = self.pdf(x)
            ok = dens > 1e-300
            step = np.zeros_like(x)
            step[ok] = (self.cdf(x[ok]) - levels[ok]) / dens[ok]
            x = np.clip(x - step, lo, hi)
        return x


@dataclass
class CellStats:
    """Mixture moments over the Voronoi cells of a sorted point set."""

    probs: np.ndarray       # (K, N) component-to-cell probabilities
    mass: np.ndarray        # (N,)
    first: np.ndarray       # (N,) first moments
    dist: np.ndarray        # (N,) per-cell quadratic distortion
    boundary_density: np.ndarray  # (N - 1,) mixture density at interior midpoints

    @property
    def distortion(self) -> float:
        return float(self.dist.sum())


def cell_stats(mix: GaussianMixture, points) -> CellStats:
    points = np.asarray(points, dtype=float)
    m = mix.means[:, None]
    s = mix.stdevs[:, None]
    k = m.shape[0]
    z = (0.5 * (points[1:] + points[:-1])[None, :] - m) / s
    # masses from the smaller tail at each boundary, so far cells keep precision
    tail = ndtr(-np.abs(z))
    neg = z < 0
    ones, zeros = np.ones((k, 1)), np.zeros((k, 1))
    lower = np.hstack((zeros, np.where(neg, tail, 1.0 - tail), ones))
    upper = np.hstack((ones, np.where(neg, 1.0 - tail, tail), zeros))
    in_upper_tail = np.hstack((zeros.astype(bool), ~neg))
    j0 = np.where(in_upper_tail, upper[:, :-1] - upper[:, 1:], lower[:, 1:] - lower[:, :-1])
    phi_mid = np.exp(-0.5 * z * z) * INV_SQRT_2PI
    phi = np.hstack((zeros, phi_mid, zeros))
    zphi = np.hstack((zeros, z * phi_mid, zeros))
    j1 = phi[:, :-1] - phi[:, 1:]
    j2 = j0 + zphi[:, :-1] - zphi[:, 1:]
    e = (points[None, :] - m) / s
    w = mix.weights
    mass = w @ j0
    first = w @ (m * j0 + s * j1)
    dist = w @ (s * s * np.maximum(j2 - 2.0 * e * j1 + e * e * j0, 0.0))
    bdens = (phi_mid / s).T @ w
    return CellStats(j0, mass, first, dist, bdens)


def distortion(mix: GaussianMixture, candidate) -> float:
    """Quadratic distortion ``E[min_j (U - c_j)^2]`` of the mixture on ``candidate``."""
    candidate = np.sort(np.atleast_1d(np.asarray(candidate, dtype=float)))
    return cell_stats(mix, candidate).distortion


@dataclass
class OptimizeResult:
    grid: Grid
    distortion: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _quantile_levels(n: int) -> np.ndarray:
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


def _reseed_empty(mix: GaussianMixture, points: np.ndarray, mass: np.ndarray) -> np.ndarray:
    empty = mass < EMPTY_CELL_MASS
    pts = points.copy()
    pts[empty] = mix.quantile(_quantile_levels(points.size)[empty])
    pts = np.unique(pts)
    while pts.size < points.size:
        # reseeded onto an existing point: split the widest gap instead
        i = int(np.argmax(np.diff(pts)))
        pts = np.sort(np.append(pts, 0.5 * (pts[i] + pts[i + 1])))
    return pts


def _newton_direction(stats: CellStats, points: np.ndarray) -> np.ndarray:
    grad = 2.0 * (points * stats.mass - stats.first)
    off = -0.5 * np.diff(points) * stats.boundary_density
    ab = np.zeros((3, points.size))
    ab[0, 1:] = off
    ab[1] = 2.0 * stats.mass
    ab[1, :-1] += off
    ab[1, 1:] += off
    ab[2, :-1] = off
    return solve_banded((1, 1), ab, grad)


def _lloyd_update(mix, stats):
    new = stats.first / stats.mass
    new_stats = cell_stats(mix, new)
    if np.any(new_stats.mass < EMPTY_CELL_MASS):
        new = _reseed_empty(mix, new, new_stats.mass)
        new_stats = cell_stats(mix, new)
    return new, new_stats


def _damped_newton(mix, points, stats):
    """Newton step halved until it descends; ``None`` if it never does."""
    try:
        direction = _newton_direction(stats, points)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(direction)):
        return None
    step = 1.0
    while step > 1e-4:
        cand = points - step * direction
        if np.all(np.diff(cand) > 0):
            cand_stats = cell_stats(mix, cand)
            if (cand_stats.distortion <= stats.distortion
                    and np.all(cand_stats.mass >= EMPTY_CELL_MASS)):
                return cand, cand_stats
        step *= 0.5
    return None


def optimize_grid(mix: GaussianMixture, n_points: int, init=None, max_iter: int = 500,
                  tol: float = 1e-10, newton: bool = False,
                  warmup: int = 3) -> OptimizeResult:
    """Stationary quadratic quantizer of a Gaussian mixture.

    Plain Lloyd iterations (each point moved to its cell's conditional mean)
    run until the relative distortion change drops below ``tol`` or
    ``max_iter`` is reached. With ``newton=True``, after ``warmup`` Lloyd
    iterations each step is a damped Newton step, accepted only if it does
    not increase the distortion, and a Lloyd step otherwise. ``history``
    holds the distortion of the initial grid and of every iterate.
    """
    if n_points < 1:
        raise ValueError("need at least one grid point")
    if init is None:
        init = mix.quantile(_quantile_levels(n_points))
    points = np.sort(np.asarray(init, dtype=float))
    if points.size != n_points:
        raise ValueError("init size differs from n_points")
    dup = np.r_[False, np.diff(points) <= 0]
    if np.any(dup):
        points = _reseed_empty(mix, points, np.where(dup, 0.0, 1.0))
    stats = cell_stats(mix, points)
    if np.any(stats.mass < EMPTY_CELL_MASS):
        points = _reseed_empty(mix, points, stats.mass)
        stats = cell_stats(mix, points)
    history = [stats.distortion]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        nxt = None
        if newton and n_points > 1 and it > warmup:
            nxt = _damped_newton(mix, points, stats)
        if nxt is None:
            nxt = _lloyd_update(mix, stats)
        points, stats = nxt
        d_old, d_new = history[-1], stats.distortion
        history.append(d_new)
        if abs(d_old - d_new) <= tol * max(d_new, 1e-300):
            converged = True
            break
    return OptimizeResult(Grid(points, stats.mass / stats.mass.sum()),
                          stats.distortion, it, converged, history)


def transition_row(spec: DiffusionSpec, t_k: float, x_i: float, next_grid: Grid, dt: float):
    """Probabilities that one Euler step from ``x_i`` lands in each Voronoi cell of ``next_grid``."""
    mean, sd = conditional_moments(spec, t_k, np.array([x_i]), dt)
    return cell_stats(GaussianMixture(np.ones(1), mean, sd), next_grid.points).probs[0]


@dataclass(frozen=True)
class QuantizationTree:
    """Grids ``grids[k]`` (k = 0..n) and transitions ``transitions[k]`` from step k to k+1."""

    grids: list
    transitions: list
    spec: DiffusionSpec
    time_grid: TimeGrid
    distortions: np.ndarray = None
    converged: np.ndarray = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(self.grids) != self.time_grid.n + 1:
            raise ValueError("one grid per time node expected")
        if len(self.transitions) != self.time_grid.n:
            raise ValueError("one transition matrix per time step expected")
        for k, p in enumerate(self.transitions):
            if p.shape != (len(self.grids[k]), len(self.grids[k + 1])):
                raise ValueError(f"transition {k} has shape {p.shape}")

    @property
    def n(self) -> int:
        return self.time_grid.n

    @property
    def grid_sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.grids])

    def step_moments(self, k: int):
        """Euler mean and stdev from each point of grid ``k``."""
        key = ("moments", k)
        if key not in self._cache:
            self._cache[key] = conditional_moments(
                self.spec, self.time_grid.times[k], self.grids[k].points, self.time_grid.dt[k])
        return self._cache[key]

    def innovations(self, k: int) -> np.ndarray:
        """Standardized signal increments ``(x_{k+1}^j - m_k(x_k^i)) / sigma(t_k, x_k^i)``."""
        key = ("innov", k)
        if key not in self._cache:
            mean, sd = self.step_moments(k)
            sig = sd / np.sqrt(self.time_grid.dt[k])
            self._cache[key] = (self.grids[k + 1].points[None, :] - mean[:, None]) / sig[:, None]
        return self._cache[key]

    def bridge_factors(self, k: int) -> np.ndarray:
        key = ("bridge", k)
        if key not in self._cache:
            _, sd = self.step_moments(k)
            self._cache[key] = bridge_survival_var(
                self.grids[k].points[:, None], self.grids[k + 1].points[None, :],
                self.spec.barrier, (sd * sd)[:, None])
        return self._cache[key]

    def barrier_kernel(self, k: int) -> np.ndarray:
        """Transition matrix k -> k+1 weighted by the bridge survival factors."""
        key = ("bkern", k)
        if key not in self._cache:
            self._cache[key] = self.transitions[k] * self.bridge_factors(k)
        return self._cache[key]


def build_tree(spec: DiffusionSpec, grid: TimeGrid, sizes, newton: bool = True,
               max_iter: int = 500, tol: float = 1e-10) -> QuantizationTree:
    """Quantize the Euler marginals recursively on ``grid``.

    ``sizes`` is either one grid size used for every step k >= 1, or a full
    sequence ``N_0..N_n`` with ``N_0 = 1`` (the start is deterministic).
    """
    n = grid.n
    if np.isscalar(sizes):
        sizes = [1] + [int(sizes)] * n
    sizes = [int(s) for s in sizes]
    if len(sizes) != n + 1:
        raise ValueError(f"expected {n + 1} grid sizes, got {len(sizes)}")
    if sizes[0] != 1:
        raise ValueError("the initial grid is the single point x0")
    grids = [Grid(np.array([spec.x0]), np.array([1.0]))]
    transitions = []
    dists = [0.0]
    conv = [True]
    for k in range(n):
        try:
            mix = GaussianMixture.euler_image(spec, grid.times[k], grids[k], grid.dt[k])
            res = optimize_grid(mix, sizes[k + 1], max_iter=max_iter, tol=tol, newton=newton)
            probs = cell_stats(mix, res.grid.points).probs
        except (InvalidModelError, ValueError, FloatingPointError) as exc:
            raise QuantizationError(f"step {k + 1}: {exc}", step=k + 1) from exc
        if not res.converged:
            log.warning("grid at step %d did not converge after %d iterations",
                        k + 1, res.iterations)
        grids.append(Grid(res.grid.points, grids[k].weights @ probs))
        transitions.append(probs)
        dists.append(res.distortion)
        conv.append(res.converged)
    return QuantizationTree(grids, transitions, spec, grid, np.array(dists), np.array(conv))


# ---------------------------------------------------------------- serialization

def _fmt(values) -> str:
    return " ".join("%.17g" % v for v in np.ravel(values))


def dump_tree(tree: QuantizationTree, path, comments=()) -> None:
    """Write the tree in the columnar text format described in docs/tree_format.md.

    ``comments`` are extra header lines, written after ``# `` markers.
    """
    lines = ["# rmqcredit quantization tree"] + [f"# {c}" for c in comments]
    lines.append("format rmq-tree 1")
    for key in sorted(tree.spec.params):
        lines.append(f"param {key} {tree.spec.params[key]!r}")
    lines.append(f"obs_index {tree.time_grid.m}")
    lines.append("times " + _fmt(tree.time_grid.times))
    for k, g in enumerate(tree.grids):
        flag = 1 if tree.converged is None else int(bool(tree.converged[k]))
        dist = 0.0 if tree.distortions is None else tree.distortions[k]
        lines.append(f"step {k} {len(g)} {'%.17g' % dist} {flag}")
        lines.append("points " + _fmt(g.points))
        lines.append("weights " + _fmt(g.weights))
        if k > 0:
            p = tree.transitions[k - 1]
            lines.append(f"transition {p.shape[0]} {p.shape[1]}")
            lines.extend(_fmt(row) for row in p)
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(line: str, tag: str) -> np.ndarray:
    head, _, rest = line.partition(" ")
    if head != tag:
        raise ValueError(f"expected '{tag}' line, got '{head}'")
    return np.array([float(v) for v in rest.split()])


def read_tree_params(path) -> dict:
    """Model parameters recorded in a tree file header."""
    params = {}
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("param "):
            _, key, value = ln.split(" ", 2)
            params[key] = ast.literal_eval(value)
        elif ln.startswith("step "):
            break
    return params


def load_tree(path, spec: DiffusionSpec) -> QuantizationTree:
    lines = [ln for ln in Path(path).read_text().splitlines()
             if ln and not ln.startswith("#")]
    if not lines or lines[0] != "format rmq-tree 1":
        raise ValueError("not an rmq-tree file")
    pos = 1
    while lines[pos].startswith("param "):
        pos += 1
    m = int(lines[pos].split()[1])
    times = _floats(lines[pos + 1], "times")
    pos += 2
    grids, transitions, dists, conv = [], [], [], []
    while pos < len(lines):
        _, k, _size, dist, flag = lines[pos].split()
        pts = _floats(lines[pos + 1], "points")
        w = _floats(lines[pos + 2], "weights")
        pos += 3
        if int(k) > 0:
            rows, cols = (int(v) for v in lines[pos].split()[1:])
            body = lines[pos + 1:pos + 1 + rows]
            transitions.append(np.array([[float(v) for v in ln.split()] for ln in body])
                               .reshape(rows, cols))
            pos += 1 + rows
        grids.append(Grid(pts, w))
        dists.append(float(dist))
        conv.append(bool(int(flag)))
    return QuantizationTree(grids, transitions, spec, TimeGrid(times, m),
                            np.array(dists), np.array(conv))
