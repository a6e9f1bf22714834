import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rmqcredit.filter as filt
from rmqcredit.analytic import gbm_survival_F
from rmqcredit.errors import InvalidModelError, SizeGuardError
from rmqcredit.filter import (ObservationPath, conditional_survival, filter_forward, filter_pair,
                              read_observation_csv, survival_curve, survival_curves, survival_table,
                              unconditional_survival, write_observation_csv)
from rmqcredit.model import GbmSpec, TimeGrid, simulate_pair
from rmqcredit.oracle import brute_force_quantized, forward_survival_table, mc_first_passage
from rmqcredit.quantizer import build_tree


@pytest.fixture(scope="module")
def tiny_tree():
    """Barrier close to the start so that it bites within five steps."""
    spec = GbmSpec(0.03, 0.3, 0.2, barrier=80.0).diffusion()
    return build_tree(spec, TimeGrid.uniform(0.05, 8, 5), [1, 2, 3, 4, 4, 4, 3, 3, 2])


def _obs(tree, seed):
    grid = TimeGrid(tree.time_grid.times, tree.time_grid.m)
    return ObservationPath.from_pair(simulate_pair(tree.spec, grid, seed))


def test_zero_steps_keeps_initial_weights(small_tree):
    obs = ObservationPath(np.zeros(1), np.array([86.3]))
    fa = filter_forward(small_tree, obs)
    assert fa.mass.tolist() == [1.0] and fa.log_scale == 0.0 and fa.step == 0
    c = conditional_survival(small_tree, obs, 0)
    assert (c.p_full, c.p_y_only, c.extinct) == (1.0, 1.0, False)


def test_uninformative_likelihood_gives_marginals(small_tree, monkeypatch):
    monkeypatch.setattr(filt, "step_likelihood",
                        lambda tree, k, a, b: np.ones((len(tree.grids[k]), len(tree.grids[k + 1]))))
    obs = _obs(small_tree, 1)
    f = filter_forward(small_tree, obs, with_barrier=False)
    assert np.allclose(f.raw, small_tree.grids[obs.m].weights, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("m", [1, 3, 5])
def test_matches_exhaustive_enumeration(tiny_tree, seed, m):
    y = _obs(tiny_tree, seed).values[: m + 1]
    obs = ObservationPath(tiny_tree.time_grid.times[: m + 1], y)
    fa, f = filter_pair(tiny_tree, obs)
    for got, barrier in ((fa, True), (f, False)):
        want = brute_force_quantized(tiny_tree, y, with_barrier=barrier)
        assert np.allclose(got.raw, want, rtol=1e-12, atol=1e-300)


def test_exhaustive_enumeration_is_guarded(small_tree):
    with pytest.raises(SizeGuardError):
        brute_force_quantized(small_tree, np.full(3, 86.3))


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_filter_invariants(seed):
    spec = GbmSpec(0.03, 0.3, 0.2, barrier=80.0).diffusion()
    tree = _tree_cache(spec)
    obs = _obs(tree, seed)
    fa, f = filter_pair(tree, obs)
    if fa.extinct:
        return
    assert fa.mass.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(fa.mass >= 0)
    assert np.all(fa.raw <= f.raw * (1 + 1e-12) + 1e-300)
    assert fa.raw.sum() <= f.raw.sum() * (1 + 1e-12)
    c = survival_curves(tree, obs, np.arange(obs.m, tree.n + 1))
    assert np.all(c.p_y_only <= c.p_full + 1e-12)
    assert np.all((c.p_full >= 0) & (c.p_full <= 1))
    assert np.all(np.diff(c.p_full) <= 1e-10)
    assert c.p_full[0] == pytest.approx(1.0, abs=1e-12)


_TREES = {}


def _tree_cache(spec):
    if "t" not in _TREES:
        _TREES["t"] = build_tree(spec, TimeGrid.uniform(0.05, 12, 6), 12)
    return _TREES["t"]


def test_extinction_is_flagged(small_tree):
    obs = _obs(small_tree, 3)
    # a final observation no grid point can explain
    vals = obs.values.copy()
    vals[-1] = -1e6
    fa, f = filter_pair(small_tree, ObservationPath(obs.times, vals))
    assert fa.extinct and not np.any(fa.mass)
    c = conditional_survival(small_tree, ObservationPath(obs.times, vals), small_tree.n)
    assert c.extinct and c.p_full == 0.0


def test_survival_curve_consistency(tree30, gbm):
    obs = _obs(tree30, 4)
    m = obs.m
    h = [m, m + 10, m + 50, tree30.n]
    curve = survival_curve(tree30, obs, h)
    assert curve[0] == 1.0
    for n, v in zip(h, curve):
        assert conditional_survival(tree30, obs, n).p_full == pytest.approx(v, abs=1e-15)
    assert survival_curve(tree30, obs, [m]).tolist() == [1.0]
    # pushing the posterior forward equals the backward table
    fa = filter_forward(tree30, obs)
    assert fa.mass @ survival_table(tree30, m, tree30.n).values == pytest.approx(curve[-1], abs=1e-13)
    exact = survival_curve(tree30, obs, h, analytic_F=lambda x, u: gbm_survival_F(0.03, 0.09, 76.0, x, u))
    assert np.all(np.abs(exact - curve) < 0.05)


def test_survival_table(tree30):
    t = survival_table(tree30, 50, 150)
    assert np.allclose(t.values, forward_survival_table(tree30, 50, 150), atol=1e-12)
    assert np.all((t.values >= 0) & (t.values <= 1))
    assert np.all(np.diff(t.values) >= -1e-12)
    assert np.all(survival_table(tree30, 50, 50).values == 1.0)
    with pytest.raises(InvalidModelError):
        survival_table(tree30, 60, 50)


def test_survival_table_without_barrier(gbm):
    import dataclasses
    spec = dataclasses.replace(gbm, barrier=-1e9)
    tree = build_tree(spec, TimeGrid.uniform(0.02, 10, 5), 10)
    assert np.allclose(survival_table(tree, 5, 6).values, 1.0, atol=1e-12)


def test_survival_table_against_monte_carlo(tree100, gbm):
    m, n = 50, 75
    t = survival_table(tree100, m, n)
    i = int(np.argmin(np.abs(tree100.grids[m].points - 80.0)))
    x = tree100.grids[m].points[i]
    est, se = mc_first_passage(gbm, x, 0.02 * (n - m), n - m, 100_000, True, seed=9, t0=1.0)
    assert abs(t.values[i] - est) <= 3 * se


def test_unconditional_survival(tree30):
    u = unconditional_survival(tree30, [0, 50, 150])
    assert u[0] == 1.0 and 0 < u[2] <= u[1] <= 1


def test_observation_validation(small_tree, tmp_path):
    with pytest.raises(InvalidModelError):
        ObservationPath(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(InvalidModelError):
        filter_forward(small_tree, ObservationPath(np.array([0.0, 0.3]), np.array([86.3, 86.0])))
    obs = _obs(small_tree, 5)
    write_observation_csv(obs, tmp_path / "y.csv")
    back = read_observation_csv(tmp_path / "y.csv")
    assert np.array_equal(back.values, obs.values) and np.array_equal(back.times, obs.times)
    (tmp_path / "bad.csv").write_text("t,y\n0,1\n")
    with pytest.raises(InvalidModelError):
        read_observation_csv(tmp_path / "bad.csv")
