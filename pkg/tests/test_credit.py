import numpy as np
import pytest
from hypothesis import given, strategies as st

from rmqcredit.errors import DegenerateContractError, InvalidCurveError, InvalidModelError
from rmqcredit.credit import (CdsContract, SurvivalCurve, cds_price, leg_weights, par_spread,
                              protection_leg, pso_implied_vol, pso_price, pso_prices, risky_duration,
                              time_zero_curve)
from rmqcredit.analytic import black_payer_price
from rmqcredit.model import GbmSpec, TimeGrid
from rmqcredit.oracle import flat_hazard_legs
from rmqcredit.quantizer import build_tree


@pytest.fixture(scope="module")
def risky_tree():
    spec = GbmSpec(0.03, 0.3, 0.1, barrier=70.0).diffusion()
    return build_tree(spec, TimeGrid.uniform(0.1, 30, 10), [1] + [12] * 30)


def test_contract_defaults_and_validation():
    c = CdsContract(1.0, 3.0)
    assert c.payment_dates == tuple(1.0 + 0.25 * np.arange(1, 9))
    assert np.allclose(c.day_counts, 0.25)
    odd = CdsContract(0.0, 1.1, alpha=0.25)
    assert odd.payment_dates[-1] == 1.1 and odd.payment_dates[-2] == 1.0
    for bad in (dict(ta=2.0, tb=1.0), dict(ta=0.0, tb=1.0, lgd=0.0), dict(ta=0.0, tb=1.0, spread=-1),
                dict(ta=0.0, tb=1.0, payment_dates=(0.5, 0.9)),
                dict(ta=0.0, tb=1.0, payment_dates=(0.5, 1.0), day_counts=(0.5, 0.9))):
        with pytest.raises(DegenerateContractError):
            CdsContract(**bad)


def test_invalid_curves():
    with pytest.raises(InvalidCurveError):
        SurvivalCurve.from_points([0, 1, 2], [1.0, 0.9, 0.95])
    with pytest.raises(InvalidCurveError):
        SurvivalCurve.from_points([0, 1], [1.0, 1.2])
    with pytest.raises(InvalidCurveError):
        SurvivalCurve.from_points([0, 0], [1.0, 1.0])
    short = SurvivalCurve.from_points([0, 2], [1.0, 0.9])
    with pytest.raises(InvalidCurveError):
        risky_duration(short, CdsContract(1.0, 3.0))


def test_riskless_curve():
    curve = SurvivalCurve.from_points([0.0, 5.0], [1.0, 1.0])
    c = CdsContract(1.0, 3.0, spread=0.01, rate=0.02)
    disc = np.exp(-0.02 * np.asarray(c.payment_dates))
    assert risky_duration(curve, CdsContract(1.0, 3.0)) == pytest.approx(2.0, abs=1e-14)
    assert risky_duration(curve, c) == pytest.approx(0.25 * disc.sum(), rel=1e-13)
    assert protection_leg(curve, c) == pytest.approx(0.0, abs=1e-15)
    assert cds_price(curve, c) == pytest.approx(-0.01 * 0.25 * disc.sum(), rel=1e-13)
    assert par_spread(curve, c) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("hazard,rate", [(0.02, 0.0), (0.05, 0.03), (0.3, 0.01)])
def test_flat_hazard_against_quadrature(hazard, rate):
    c = CdsContract(1.0, 3.0, spread=0.01, rate=rate)
    curve = SurvivalCurve.flat_hazard(hazard, 0.0, 3.0, knots=3001)
    prot, dur = flat_hazard_legs(hazard, rate, 1.0, 3.0, c.payment_dates, c.day_counts)
    assert protection_leg(curve, c) == pytest.approx(prot, rel=1e-6)
    assert risky_duration(curve, c) == pytest.approx(dur, rel=1e-6)
    assert cds_price(curve, c) == pytest.approx(prot - 0.01 * dur, rel=1e-6)


def test_credit_triangle():
    curve = SurvivalCurve.flat_hazard(0.02, 0.0, 3.0, knots=601)
    s = par_spread(curve, CdsContract(1.0, 3.0, lgd=0.6))
    assert s == pytest.approx(0.6 * 0.02, rel=2e-3)


def test_duration_decreases_with_hazard():
    c = CdsContract(1.0, 3.0)
    durs = [risky_duration(SurvivalCurve.flat_hazard(h, 0.0, 3.0), c) for h in (0.0, 0.01, 0.1, 0.5)]
    assert np.all(np.diff(durs) < 0)


def _curves():
    return st.lists(st.floats(0.0, 0.3), min_size=3, max_size=12).map(
        lambda d: np.cumprod(np.exp(-np.array(d))))


@given(_curves(), st.floats(0.0, 0.05))
def test_par_spread_prices_to_zero(values, rate):
    times = np.linspace(0.0, 3.0, values.size + 1)
    curve = SurvivalCurve(times, np.r_[1.0, values])
    c = CdsContract(1.0, 3.0, rate=rate)
    k = par_spread(curve, c)
    assert abs(cds_price(curve, c.with_spread(k))) < 1e-12
    assert k >= 0


def test_quadrature_refinement():
    curve = SurvivalCurve.from_points([0.0, 1.0, 1.7, 3.0], [1.0, 0.97, 0.9, 0.8])
    c = CdsContract(1.0, 3.0, spread=0.01, rate=0.04)
    a = cds_price(curve, c, quad_steps=64)
    b = cds_price(curve, c, quad_steps=128)
    assert abs(a - b) < 1e-4 * abs(a)


def test_leg_weights_are_linear():
    c = CdsContract(1.0, 3.0, rate=0.02)
    knots = np.linspace(1.0, 3.0, 21)
    wp, wd = leg_weights(knots, c, 1.0)
    vals = np.exp(-0.1 * (knots - 1.0))
    curve = SurvivalCurve(knots, vals, 1.0)
    assert wp @ vals == pytest.approx(protection_leg(curve, c), rel=1e-14)
    assert wd @ vals == pytest.approx(risky_duration(curve, c), rel=1e-14)


def test_pso_bounds_and_strike_limits(risky_tree):
    c = CdsContract(1.0, 3.0, lgd=0.6, rate=0.02)
    res = pso_prices(risky_tree, c, [0.0, 0.01, 0.05, 10.0], 2000, seed=4)
    disc = np.exp(-0.02)
    assert np.all(res.prices >= 0) and np.all(res.prices <= disc * 0.6)
    assert np.all(np.diff(res.prices) <= 0)
    assert res.prices[-1] == 0.0
    # a zero strike pays the protection leg: its mean is the time-0 forward protection
    curve = time_zero_curve(risky_tree)
    prot0 = protection_leg(curve, c)
    assert abs(res.prices[0] - prot0) <= 4 * res.stderr[0] + 0.02 * prot0


def test_pso_standard_error_scaling(risky_tree):
    c = CdsContract(1.0, 3.0, spread=0.02)
    _, se1 = pso_price(risky_tree, c, 1000, seed=1)
    _, se4 = pso_price(risky_tree, c, 4000, seed=2)
    assert se1 / se4 == pytest.approx(2.0, rel=0.2)


def test_pso_is_reproducible_across_threads(risky_tree):
    c = CdsContract(1.0, 3.0, spread=0.02)
    a = pso_prices(risky_tree, c, [0.02], 1200, seed=3, batch_size=500)
    b = pso_prices(risky_tree, c, [0.02], 1200, seed=3, batch_size=500, threads=3)
    assert a.prices.tolist() == b.prices.tolist() and a.stderr.tolist() == b.stderr.tolist()


def test_pso_needs_matching_tree(risky_tree):
    with pytest.raises(InvalidModelError):
        pso_price(risky_tree, CdsContract(0.5, 3.0), 10, seed=1)
    with pytest.raises(InvalidModelError):
        pso_price(risky_tree, CdsContract(1.0, 4.0), 10, seed=1)


def test_pso_implied_vol_round_trip(risky_tree):
    curve = time_zero_curve(risky_tree)
    c = CdsContract(1.0, 3.0)
    fwd = par_spread(curve, c)
    c = c.with_spread(fwd * 0.9)
    price = black_payer_price(fwd, c.spread, 1.0, risky_duration(curve, c), 0.8)
    assert pso_implied_vol(price, c, curve) == pytest.approx(0.8, abs=1e-8)
