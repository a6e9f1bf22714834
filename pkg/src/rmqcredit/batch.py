"""Many observation paths through one quantization tree at once.

Used by the option pricer, where each Monte Carlo path needs both filters up
to the option expiry. The per-step work is compiled with numba; everything
model specific (drifts, volatilities) is evaluated in numpy beforehand, so
any :class:`~rmqcredit.model.DiffusionSpec` is supported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidModelError
from .filter import EXTINCTION_MASS
from .quantizer import QuantizationTree


@numba.njit(cache=True, nogil=True)
def _filter_step(innov, shift, beta, pref, trans, bridge, va, v, log_ratio, alive, floor):
    """Advance both filters of every path by one step, in place.

    ``innov[i, j] - shift[p, i]`` is the standardized observation mismatch;
    the likelihood is ``pref[p] * exp(-beta[p] * mismatch**2)``. ``va`` carries
    the with-barrier filter, ``v`` the plain one; ``log_ratio`` accumulates the
    log of the ratio of their normalizers.
    """
    n_paths, n_from = shift.shape
    n_to = innov.shape[1]
    new_a = np.empty(n_to)
    new = np.empty(n_to)
    for p in range(n_paths):
        if not alive[p]:
            continue
        for j in range(n_to):
            new_a[j] = 0.0
            new[j] = 0.0
        for i in range(n_from):
            wa = va[p, i]
            w = v[p, i]
            if w == 0.0:
                continue
            c = shift[p, i]
            b = beta[p]
            for j in range(n_to):
                d = innov[i, j] - c
                lp = np.exp(-b * d * d) * trans[i, j]
                new[j] += w * lp
                new_a[j] += wa * lp * bridge[i, j]
        tot_a = 0.0
        tot = 0.0
        for j in range(n_to):
            tot_a += new_a[j]
            tot += new[j]
        tot_a *= pref[p]
        tot *= pref[p]
        if not (tot_a >= floor and tot >= floor):
            alive[p] = False
            for j in range(n_to):
                va[p, j] = 0.0
            continue
        for j in range(n_to):
            va[p, j] = new_a[j] * pref[p] / tot_a
            v[p, j] = new[j] * pref[p] / tot
        log_ratio[p] += np.log(tot_a) - np.log(tot)


@dataclass
class BatchFilterResult:
    posterior: np.ndarray     # (P, N_m) normalized with-barrier filters
    survival_to_m: np.ndarray  # (P,) ratio of with- to without-barrier mass
    extinct: np.ndarray       # (P,) bool


def batch_filter(tree: QuantizationTree, y: np.ndarray) -> BatchFilterResult:
    """Run both filters on every row of ``y`` (shape ``(P, m + 1)``)."""
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 2:
        raise InvalidModelError("observations must be a (paths, m + 1) array")
    n_paths, m = y.shape[0], y.shape[1] - 1
    if m > tree.n:
        raise InvalidModelError(f"observation paths have {m} steps, tree only {tree.n}")
    spec, times, dts = tree.spec, tree.time_grid.times, tree.time_grid.dt
    w0 = tree.grids[0].weights / tree.grids[0].weights.sum()
    va = np.tile(w0, (n_paths, 1))
    v = va.copy()
    log_ratio = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    for k in range(m):
        t, dt = times[k], dts[k]
        x = tree.grids[k].points
        yk = y[:, k]
        nu = np.broadcast_to(spec.vol_y_common(t, yk), yk.shape)
        dl = np.broadcast_to(spec.vol_y_idio(t, yk), yk.shape)
        if np.any(nu <= 0) or np.any(dl <= 0):
            raise InvalidModelError(f"observation volatilities must be positive (step {k})")
        mean_y = yk[:, None] + spec.drift_y(t, yk[:, None], x[None, :]) * dt
        shift = (y[:, k + 1][:, None] - mean_y) / nu[:, None]
        shift = np.ascontiguousarray(np.broadcast_to(shift, (n_paths, x.size)))
        beta = np.ascontiguousarray(nu * nu / (2.0 * dl * dl * dt))
        pref = np.ascontiguousarray(1.0 / (np.sqrt(2.0 * np.pi * dt) * dl))
        n_from, n_to = va.shape[1], len(tree.grids[k + 1])
        # the step works in place, so give it room for the larger of both grids
        buf_a = np.zeros((n_paths, max(n_from, n_to)))
        buf = np.zeros_like(buf_a)
        buf_a[:, :n_from] = va
        buf[:, :n_from] = v
        _filter_step(np.ascontiguousarray(tree.innovations(k)), shift, beta, pref,
                     np.ascontiguousarray(tree.transitions[k]),
                     np.ascontiguousarray(tree.bridge_factors(k)),
                     buf_a, buf, log_ratio, alive, EXTINCTION_MASS)
        va = buf_a[:, :n_to]
        v = buf[:, :n_to]
    va = np.ascontiguousarray(va)
    va[~alive] = 0.0
    ratio = np.where(alive, np.exp(np.minimum(log_ratio, 0.0)), 0.0)
    return BatchFilterResult(va, ratio, ~alive)
