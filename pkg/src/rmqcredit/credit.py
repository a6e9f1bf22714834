"""Forward-start CDS legs, par spreads and payer CDS options (PSO).

Survival curves are known on a set of knots and interpolated linearly, so the
density of the default time is piecewise constant. Both legs are then linear
functionals of the knot values::

    protection = -LGD * int_{Ta}^{Tb} D(u) dP(u)
    duration   = sum_i alpha_i D(T_i) P(T_i)
                 - sum_i int_{T_{i-1}}^{T_i} alpha_i (u - T_{i-1}) / (T_i - T_{i-1}) D(u) dP(u)

with ``D(u) = exp(-r (u - s))``. Integrals over each linear piece use
Gauss-Legendre rules. :func:`leg_weights` exposes the two functionals as
weight vectors, which lets the option pricer value many curves at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .analytic import implied_vol
from .batch import batch_filter
from .errors import DegenerateContractError, InvalidCurveError, InvalidModelError
from .model import TimeGrid, simulate_paths
from .quantizer import QuantizationTree

MONOTONE_TOL = 1e-12
DEFAULT_BATCH = 5000


@dataclass(frozen=True)
class CdsContract:
    """Protection from ``ta`` to ``tb`` against a running coupon ``spread`` (per annum)."""

    ta: float
    tb: float
    spread: float = 0.0
    lgd: float = 0.6
    rate: float = 0.0
    alpha: float = 0.25
    payment_dates: tuple | None = None
    day_counts: tuple | None = None

    def __post_init__(self):
        if not 0.0 <= self.ta < self.tb:
            raise DegenerateContractError(f"need 0 <= ta < tb, got ta={self.ta}, tb={self.tb}")
        if not 0.0 < self.lgd <= 1.0:
            raise DegenerateContractError(f"lgd must lie in (0, 1], got {self.lgd}")
        if self.spread < 0:
            raise DegenerateContractError("spread must be nonnegative")
        if not self.alpha > 0:
            raise DegenerateContractError("alpha must be positive")
        if not math.isfinite(self.rate):
            raise DegenerateContractError("rate must be finite")
        dates = self.payment_dates
        if dates is None:
            count = max(1, int(round((self.tb - self.ta) / self.alpha)))
            dates = tuple(float(d) for d in self.ta + self.alpha * np.arange(1, count + 1))
            if abs(dates[-1] - self.tb) > 1e-9:
                dates = tuple(d for d in dates if d < self.tb - 1e-9) + (float(self.tb),)
            else:
                dates = dates[:-1] + (float(self.tb),)
        dates = np.asarray(dates, dtype=float)
        if np.any(np.diff(dates) <= 0) or dates[0] <= self.ta or abs(dates[-1] - self.tb) > 1e-12:
            raise DegenerateContractError("payment dates must increase within (ta, tb] and end at tb")
        gaps = np.diff(np.concatenate([[self.ta], dates]))
        counts = gaps if self.day_counts is None else np.asarray(self.day_counts, dtype=float)
        if counts.shape != dates.shape or np.any(counts <= 0):
            raise DegenerateContractError("one positive day count per payment date expected")
        if np.any(np.abs(counts - gaps) > 0.1 * gaps):
            raise DegenerateContractError("day counts inconsistent with payment date gaps")
        object.__setattr__(self, "payment_dates", tuple(dates))
        object.__setattr__(self, "day_counts", tuple(counts))

    def with_spread(self, spread: float) -> "CdsContract":
        return replace(self, spread=spread)

    def discount(self, s: float, u) -> np.ndarray:
        return np.exp(-self.rate * (np.asarray(u, dtype=float) - s))


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival probabilities ``P_s(u)`` on increasing knots, linear in between.

    ``level`` is the probability of having survived up to ``s`` given the
    information used to build the curve (1 when survival is known).
    """

    times: np.ndarray
    values: np.ndarray
    s: float = 0.0
    level: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise InvalidCurveError("curve needs at least two knots")
        if np.any(np.diff(times) <= 0):
            raise InvalidCurveError("curve knots must be strictly increasing")
        if np.any(values < -MONOTONE_TOL) or np.any(values > 1 + MONOTONE_TOL):
            raise InvalidCurveError("survival probabilities must lie in [0, 1]")
        if np.any(np.diff(values) > MONOTONE_TOL):
            raise InvalidCurveError("survival curve must be nonincreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", np.clip(values, 0.0, 1.0))

    @classmethod
    def from_points(cls, times, values, s: float = 0.0, level: float = 1.0) -> "SurvivalCurve":
        return cls(np.asarray(times, dtype=float), np.asarray(values, dtype=float), s, level)

    @classmethod
    def flat_hazard(cls, hazard: float, s: float, horizon: float, knots: int = 401):
        t = np.linspace(s, horizon, knots)
        return cls(t, np.exp(-hazard * (t - s)), s)

    def __call__(self, u):
        return np.interp(u, self.times, self.values)


def leg_weights(knots, contract: CdsContract, s: float, quad_steps: int = 64):
    """Weights ``(w_prot, w_dur)`` with ``protection = w_prot @ P`` and
    ``duration = w_dur @ P`` for any curve with values ``P`` on ``knots``.
    """
    knots = np.asarray(knots, dtype=float)
    ta, tb = contract.ta, contract.tb
    if knots[0] > ta + 1e-12 or knots[-1] < tb - 1e-12:
        raise InvalidCurveError(f"curve covers [{knots[0]}, {knots[-1]}], need [{ta}, {tb}]")
    if quad_steps < 1:
        raise ValueError("quad_steps must be positive")
    dates = np.asarray(contract.payment_dates)
    alphas = np.asarray(contract.day_counts)
    inner = knots[(knots > ta) & (knots < tb)]
    nodes = np.unique(np.concatenate([[ta], inner, dates]))
    # row j of interp maps knot values to the interpolated value at nodes[j]
    interp = np.column_stack([np.interp(nodes, knots, e) for e in np.eye(knots.size)])
    gx, gw = np.polynomial.legendre.leggauss(quad_steps)
    starts = np.concatenate([[ta], dates[:-1]])
    w_prot_n = np.zeros(nodes.size)
    w_dur_n = np.zeros(nodes.size)
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        j0 = np.searchsorted(nodes, lo)
        h = hi - lo
        u = 0.5 * (lo + hi) + 0.5 * h * gx
        d = contract.discount(s, u)
        int_d = 0.5 * h * gw @ d                     # int D du
        period = min(np.searchsorted(dates, hi - 1e-12), dates.size - 1)
        t0, t1, a = starts[period], dates[period], alphas[period]
        int_acc = 0.5 * h * gw @ (d * (u - t0)) * a / (t1 - t0)
        # dP/du on the piece is (P[j0+1] - P[j0]) / h
        w_prot_n[j0] += contract.lgd * int_d / h
        w_prot_n[j0 + 1] -= contract.lgd * int_d / h
        w_dur_n[j0] += int_acc / h
        w_dur_n[j0 + 1] -= int_acc / h
    pay_idx = np.searchsorted(nodes, dates)
    w_dur_n[pay_idx] += alphas * contract.discount(s, dates)
    return w_prot_n @ interp, w_dur_n @ interp


def _legs(curve: SurvivalCurve, contract: CdsContract, quad_steps: int):
    wp, wd = leg_weights(curve.times, contract, curve.s, quad_steps)
    return float(wp @ curve.values), float(wd @ curve.values)


def risky_duration(curve: SurvivalCurve, contract: CdsContract, quad_steps: int = 64) -> float:
    return _legs(curve, contract, quad_steps)[1]


def protection_leg(curve: SurvivalCurve, contract: CdsContract, quad_steps: int = 64) -> float:
    return _legs(curve, contract, quad_steps)[0]


def cds_price(curve: SurvivalCurve, contract: CdsContract, quad_steps: int = 64) -> float:
    """Value to the protection buyer, conditional on no default before ``curve.s``."""
    prot, dur = _legs(curve, contract, quad_steps)
    return prot - contract.spread * dur


def par_spread(curve: SurvivalCurve, contract: CdsContract, quad_steps: int = 64) -> float:
    prot, dur = _legs(curve, contract, quad_steps)
    if not dur > 0:
        raise DegenerateContractError("risky duration is zero")
    return max(prot, 0.0) / dur


def time_zero_curve(tree: QuantizationTree) -> SurvivalCurve:
    """Unconditional survival curve of the quantized chain on the tree's time grid."""
    from .filter import unconditional_survival
    times = tree.time_grid.times
    return SurvivalCurve(times, unconditional_survival(tree, np.arange(times.size)), 0.0)


@dataclass(frozen=True)
class PsoResult:
    strikes: np.ndarray
    prices: np.ndarray
    stderr: np.ndarray
    paths: int
    extinct: int


def _check_tree(tree: QuantizationTree, contract: CdsContract) -> int:
    grid = tree.time_grid
    if abs(grid.s - contract.ta) > 1e-9:
        raise InvalidModelError(f"option expiry {contract.ta} must equal the observation time {grid.s}")
    if grid.t < contract.tb - 1e-9:
        raise InvalidModelError(f"tree horizon {grid.t} does not reach tb = {contract.tb}")
    return grid.m


def _pso_batch(tree, contract, strikes, seed, stream, n_paths, w_prot, w_dur):
    m = tree.time_grid.m
    _, y = simulate_paths(tree.spec, TimeGrid(tree.time_grid.times[: m + 1], m),
                          n_paths, seed, stream)
    res = batch_filter(tree, y)
    rows = res.posterior
    curves = np.empty((n_paths, tree.n - m + 1))
    curves[:, 0] = rows.sum(axis=1)
    for k in range(m, tree.n):
        rows = rows @ tree.barrier_kernel(k)
        curves[:, k - m + 1] = rows.sum(axis=1)
    curves = np.minimum.accumulate(np.clip(curves, 0.0, 1.0), axis=1)
    curves[res.extinct] = 0.0
    prot = curves @ w_prot
    dur = curves @ w_dur
    payoff = res.survival_to_m[:, None] * np.maximum(prot[:, None] - strikes[None, :] * dur[:, None], 0.0)
    return payoff.sum(axis=0), (payoff * payoff).sum(axis=0), int(res.extinct.sum())


def pso_prices(tree: QuantizationTree, contract: CdsContract, strikes, mc_paths: int,
               seed: int, threads: int = 1, batch_size: int = DEFAULT_BATCH,
               quad_steps: int = 64) -> PsoResult:
    """Payer CDS option prices for several strikes from one set of paths.

    Observation paths are simulated to the expiry ``ta``; for each path the
    quantized filter gives the survival probability to ``ta`` and the forward
    survival curve, from which the CDS value at ``ta`` follows. Paths come in
    batches drawn from disjoint random substreams and the batch sums are
    reduced in batch order, so results do not depend on ``threads``.
    """
    m = _check_tree(tree, contract)
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if mc_paths < 2:
        raise ValueError("need at least two Monte Carlo paths")
    knots = tree.time_grid.times[m:]
    w_prot, w_dur = leg_weights(knots, contract, contract.ta, quad_steps)
    sizes = [batch_size] * (mc_paths // batch_size)
    if mc_paths % batch_size:
        sizes.append(mc_paths % batch_size)
    jobs = [(tree, contract, strikes, seed, b, n, w_prot, w_dur) for b, n in enumerate(sizes)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _pso_batch(*a), jobs))
    else:
        parts = [_pso_batch(*a) for a in jobs]
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    mean = s1 / mc_paths
    var = np.maximum(s2 / mc_paths - mean * mean, 0.0) * mc_paths / (mc_paths - 1)
    disc = float(contract.discount(0.0, contract.ta))
    return PsoResult(strikes, disc * mean, disc * np.sqrt(var / mc_paths), mc_paths,
                     sum(p[2] for p in parts))


def pso_price(tree: QuantizationTree, contract: CdsContract, mc_paths: int, seed: int,
              **kwargs) -> tuple[float, float]:
    res = pso_prices(tree, contract, [contract.spread], mc_paths, seed, **kwargs)
    return float(res.prices[0]), float(res.stderr[0])


def pso_implied_vol(pso: float, contract: CdsContract, curve_at_0: SurvivalCurve,
                    quad_steps: int = 64) -> float:
    """Black volatility of a payer option price, using the time-0 forward spread and annuity."""
    forward = par_spread(curve_at_0, contract, quad_steps)
    annuity = risky_duration(curve_at_0, contract, quad_steps)
    return implied_vol(pso, forward, contract.spread, contract.ta - curve_at_0.s, annuity)
