"""Independent reference computations, used to validate the main modules.

Nothing here calls the quantizer's or the filter's numerics: the normal CDF
goes through ``erfc``, and the observation likelihood and bridge factor are
written out again, so agreement with the main code is evidence rather than
a tautology. Speed is not a goal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc

from .errors import SizeGuardError, WeightCollapseError
from .model import DiffusionSpec, TimeGrid, make_rng


def phi_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def _bridge(x, x1, barrier, var):
    alive = (x >= barrier) & (x1 >= barrier)
    with np.errstate(over="ignore"):
        val = 1.0 - np.exp(np.minimum(-2.0 * (x - barrier) * (x1 - barrier) / var, 0.0))
    return np.where(alive, val, 0.0)


def _likelihood(spec: DiffusionSpec, t, dt, x, y, x1, y1):
    """Joint Euler density of ``(x1, y1)`` divided by the marginal density of ``x1``."""
    sig = spec.vol_x(t, x)
    nu = spec.vol_y_common(t, y)
    dl = spec.vol_y_idio(t, y)
    # given x1, the common shock is known; y1 is Gaussian in the idiosyncratic one
    z1 = (x1 - x - spec.drift_x(t, x) * dt) / (sig * np.sqrt(dt))
    resid = y1 - y - spec.drift_y(t, y, x) * dt - nu * np.sqrt(dt) * z1
    scale = dl * np.sqrt(dt)
    return np.exp(-0.5 * (resid / scale) ** 2) / (np.sqrt(2.0 * np.pi) * scale)


# ---------------------------------------------------------------- particles

@dataclass
class ParticleCloud:
    positions: np.ndarray
    weights: np.ndarray
    step: int

    def __post_init__(self):
        if self.positions.size == 0:
            raise ValueError("particle cloud must be nonempty")


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.size
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, u)


@dataclass(frozen=True)
class ParticleEstimate:
    """Replicate means and standard errors of the particle filter outputs.

    ``mass_a`` and ``mass`` estimate the filter masses with and without the
    barrier; ``p_full`` and ``p_y_only`` the two conditional survival
    probabilities to the horizon; ``mean`` the posterior mean of the signal.
    """

    mass_a: float
    mass_a_se: float
    mass: float
    mass_se: float
    p_full: float
    p_full_se: float
    p_y_only: float
    p_y_only_se: float
    mean: float
    mean_se: float
    replicates: int


def _run_particles(spec, grid, y, n_particles, n_end, rng, barrier, informative):
    m = y.size - 1
    x = np.full(n_particles, float(spec.x0))
    log_mass = 0.0
    cloud = ParticleCloud(x, np.full(n_particles, 1.0 / n_particles), 0)
    for k in range(m):
        t, dt = grid.times[k], grid.dt[k]
        x = cloud.positions
        z = rng.standard_normal(n_particles)
        x1 = x + spec.drift_x(t, x) * dt + spec.vol_x(t, x) * np.sqrt(dt) * z
        w = _likelihood(spec, t, dt, x, y[k], x1, y[k + 1]) if informative else np.ones(n_particles)
        if barrier:
            w = w * _bridge(x, x1, spec.barrier, dt * spec.vol_x(t, x) ** 2)
        total = w.sum()
        if not total > 0:
            raise WeightCollapseError(f"all particle weights vanished at step {k + 1}",
                                      step=k + 1, suggested_particles=10 * n_particles)
        log_mass += np.log(total / n_particles)
        idx = systematic_resample(w / total, rng)
        cloud = ParticleCloud(x1[idx], np.full(n_particles, 1.0 / n_particles), k + 1)
    x_m = cloud.positions
    # survival beyond t_m: continue the Euler signal with bridge weights
    surv = np.ones(n_particles)
    x = x_m.copy()
    for k in range(m, n_end):
        t, dt = grid.times[k], grid.dt[k]
        x1 = x + spec.drift_x(t, x) * dt + spec.vol_x(t, x) * np.sqrt(dt) * rng.standard_normal(n_particles)
        surv *= _bridge(x, x1, spec.barrier, dt * spec.vol_x(t, x) ** 2)
        x = x1
    return log_mass, surv.mean(), x_m.mean()


def particle_filter_estimate(spec: DiffusionSpec, grid: TimeGrid, obs_values, n_particles: int,
                             seed: int, n: int | None = None, replicates: int = 20,
                             informative: bool = True) -> ParticleEstimate:
    """Bootstrap particle filter on the Euler signal, resampling systematically every step.

    ``n_particles`` are split over ``replicates`` independent filters; the
    spread of the replicate estimates gives the standard errors. ``n`` is the
    horizon step of the survival probabilities (defaults to the last
    observation step). ``informative=False`` replaces the likelihood by 1.
    """
    y = np.asarray(obs_values, dtype=float)
    m = y.size - 1
    n = m if n is None else n
    if not m <= n <= grid.n:
        raise ValueError(f"horizon step {n} outside [{m}, {grid.n}]")
    per = n_particles // replicates
    if per < 1 or replicates < 2:
        raise ValueError("need at least two replicates of one particle")
    rows = []
    for r in range(replicates):
        rng = make_rng(seed, 2 * r)
        la, surv, mean = _run_particles(spec, grid, y, per, n, rng, True, informative)
        rng = make_rng(seed, 2 * r + 1)
        lb, _, _ = _run_particles(spec, grid, y, per, m, rng, False, informative)
        ratio = min(np.exp(la - lb), 1.0)
        rows.append((np.exp(la), np.exp(lb), surv, surv * ratio, mean))
    rows = np.array(rows)
    mu = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / np.sqrt(replicates)
    return ParticleEstimate(mu[0], se[0], mu[1], se[1], mu[2], se[2], mu[3], se[3],
                            mu[4], se[4], replicates)


def single_step_quadrature(spec: DiffusionSpec, dt: float, y1: float, f=lambda x: 1.0,
                           barrier: bool = False) -> float:
    """``E[f(X_1) g(x0, y0; X_1, y1) (G)]`` for one Euler step, by adaptive quadrature."""
    x0, y0 = spec.x0, spec.y0
    m = x0 + spec.drift_x(0.0, x0) * dt
    sd = spec.vol_x(0.0, x0) * np.sqrt(dt)

    def integrand(x1):
        dens = np.exp(-0.5 * ((x1 - m) / sd) ** 2) / (np.sqrt(2.0 * np.pi) * sd)
        val = dens * _likelihood(spec, 0.0, dt, x0, y0, x1, y1) * f(x1)
        if barrier:
            val *= _bridge(x0, x1, spec.barrier, sd * sd)
        return float(val)

    val, _ = integrate.quad(integrand, m - 12 * sd, m + 12 * sd, limit=400,
                            epsabs=1e-13, epsrel=1e-11, points=[m])
    return val


# ------------------------------------------------------- exhaustive chains

MAX_BRUTE_STEPS = 5
MAX_BRUTE_POINTS = 4


def brute_force_quantized(tree, obs_values, with_barrier: bool = True) -> np.ndarray:
    """Unnormalized filter at the last observation step by summing over all grid paths.

    Likelihoods and bridge factors are recomputed here from the grid points.
    """
    y = np.asarray(obs_values, dtype=float)
    m = y.size - 1
    sizes = [len(g) for g in tree.grids[: m + 1]]
    if m > MAX_BRUTE_STEPS or max(sizes) > MAX_BRUTE_POINTS:
        raise SizeGuardError(f"brute force limited to m <= {MAX_BRUTE_STEPS}, "
                             f"N <= {MAX_BRUTE_POINTS}; got m={m}, N={max(sizes)}")
    spec, times, dts = tree.spec, tree.time_grid.times, tree.time_grid.dt
    out = np.zeros(sizes[-1])
    for path in itertools.product(*[range(s) for s in sizes]):
        w = tree.grids[0].weights[path[0]]
        for k in range(m):
            i, j = path[k], path[k + 1]
            x, x1 = tree.grids[k].points[i], tree.grids[k + 1].points[j]
            h = tree.transitions[k][i, j] * _likelihood(spec, times[k], dts[k], x, y[k], x1, y[k + 1])
            if with_barrier:
                h *= _bridge(x, x1, spec.barrier, dts[k] * spec.vol_x(times[k], x) ** 2)
            w *= h
        out[path[-1]] += w
    return out


def forward_survival_table(tree, m: int, n: int) -> np.ndarray:
    """Quantized survival from each point of grid ``m`` to step ``n``, seeding one row per point."""
    spec, times, dts = tree.spec, tree.time_grid.times, tree.time_grid.dt
    out = np.empty(len(tree.grids[m]))
    for i in range(out.size):
        row = np.zeros(out.size)
        row[i] = 1.0
        for k in range(m, n):
            x = tree.grids[k].points
            x1 = tree.grids[k + 1].points
            g = _bridge(x[:, None], x1[None, :], spec.barrier, dts[k] * spec.vol_x(times[k], x)[:, None] ** 2)
            row = row @ (tree.transitions[k] * g)
        out[i] = row.sum()
    return out


# ------------------------------------------------------ first passage MC

def mc_first_passage(spec: DiffusionSpec, x: float, horizon: float, steps: int, paths: int,
                     bridge_corrected: bool, seed: int, t0: float = 0.0,
                     chunk: int = 50_000) -> tuple[float, float]:
    """Euler Monte Carlo of survival from ``x`` at ``t0`` over ``horizon``.

    With ``bridge_corrected`` each step multiplies the path weight by the bridge
    survival factor; otherwise only the grid nodes are monitored.
    """
    dt = horizon / steps
    s1 = s2 = 0.0
    done = 0
    c = 0
    while done < paths:
        p = min(chunk, paths - done)
        rng = make_rng(seed, c)
        xs = np.full(p, float(x))
        w = np.ones(p)
        for k in range(steps):
            t = t0 + k * dt
            x1 = xs + spec.drift_x(t, xs) * dt + spec.vol_x(t, xs) * np.sqrt(dt) * rng.standard_normal(p)
            if bridge_corrected:
                w *= _bridge(xs, x1, spec.barrier, dt * spec.vol_x(t, xs) ** 2)
            else:
                w *= x1 > spec.barrier
            xs = x1
        s1 += w.sum()
        s2 += (w * w).sum()
        done += p
        c += 1
    mean = s1 / paths
    var = max(s2 / paths - mean * mean, 0.0) * paths / (paths - 1)
    return mean, np.sqrt(var / paths)


def mc_gbm_first_passage(mu: float, sigma: float, barrier: float, x: float, u: float,
                         paths: int, steps: int, seed: int,
                         chunk: int = 20_000) -> tuple[float, float]:
    """Survival of an exactly simulated GBM, with the log-space bridge correction between nodes."""
    dt = u / steps
    drift = (mu - 0.5 * sigma * sigma) * dt
    vol = sigma * np.sqrt(dt)
    la = np.log(barrier)
    s1 = s2 = 0.0
    done = 0
    c = 0
    while done < paths:
        p = min(chunk, paths - done)
        rng = make_rng(seed, c)
        lx = np.full(p, np.log(x))
        w = np.ones(p)
        for _ in range(steps):
            lx1 = lx + drift + vol * rng.standard_normal(p)
            w *= _bridge(lx, lx1, la, vol * vol)
            lx = lx1
        s1 += w.sum()
        s2 += (w * w).sum()
        done += p
        c += 1
    mean = s1 / paths
    var = max(s2 / paths - mean * mean, 0.0) * paths / (paths - 1)
    return mean, np.sqrt(var / paths)


# ------------------------------------------------------------ CDS legs

def flat_hazard_legs(hazard: float, rate: float, ta: float, tb: float, dates, alphas,
                     s: float = 0.0, lgd: float = 0.6) -> tuple[float, float]:
    """Protection leg and risky duration of a flat-hazard curve by adaptive quadrature."""
    def surv(u):
        return np.exp(-hazard * (u - s))

    def disc(u):
        return np.exp(-rate * (u - s))

    prot, _ = integrate.quad(lambda u: lgd * disc(u) * hazard * surv(u), ta, tb,
                             epsabs=1e-14, epsrel=1e-12)
    dur = 0.0
    start = ta
    for t, a in zip(dates, alphas):
        acc, _ = integrate.quad(lambda u: (u - start) / (t - start) * a * disc(u) * hazard * surv(u),
                                start, t, epsabs=1e-14, epsrel=1e-12)
        dur += a * disc(t) * surv(t) + acc
        start = t
    return prot, dur
