import math
import random
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import instances
from qpval import affine_engine as ae
from qpval import finite_space as fs
from qpval import products as pr
from qpval.montecarlo import RngSpec, estimate_product
from qpval.stopping_times import Copula2


@pytest.fixture(scope="module")
def default():
    return ae.default_model()


def _zero(model):
    return ae.IntensitySpec.zero(model.d1, model.d2)


# -- surrender option ------------------------------------------------------------


def test_surrender_option_trivial_cases(default):
    model, stock, sur, _ = default
    assert pr.price_surrender_option(pr.SurrenderOptionSpec(model, stock, _zero(model), 0, 12)) == pytest.approx(0.0, abs=1e-15)
    assert pr.price_surrender_option(pr.SurrenderOptionSpec(model, stock, sur, 3, 4)) == 0.0
    with pytest.raises(ValueError):
        pr.SurrenderOptionSpec(model, stock, sur, 4, 4)


def test_surrender_option_is_bounded_by_lagged_sum(default):
    model, stock, sur, _ = default
    spec = pr.SurrenderOptionSpec(model, stock, sur, 0, 12)
    terms = pr.surrender_terms(spec)
    value = pr.price_surrender_option(spec)
    assert len(terms) == 11
    assert 0.0 <= value <= math.fsum(lag for _, lag, _ in terms)
    assert all(lag >= strict for _, lag, strict in terms)


def test_surrender_option_at_later_state(default):
    model, stock, sur, _ = default
    z = model.z0 + np.array([0.003, 0.0, 0.05])
    spec = pr.SurrenderOptionSpec(model, stock, sur, 2, 9, z)
    est = estimate_product(spec, None, 100_000, RngSpec(0, 11))
    # unit-test band; the acceptance suite holds the 3 SE line
    assert abs(est.z_score(pr.price_surrender_option(spec))) <= 4


# -- variable annuity ---------------------------------------------------------------


def test_va_with_zero_surrender_intensity_is_zero(default):
    model, stock, _, mort = default
    spec = pr.VASurrenderSpec(model, stock, _zero(model), mort, 0, 12)
    assert pr.price_va_surrender(spec) == pytest.approx(0.0, abs=1e-15)


def test_va_with_zero_mortality_equals_surrender_option(default):
    model, stock, sur, _ = default
    va = pr.price_va_surrender(pr.VASurrenderSpec(model, stock, sur, _zero(model), 0, 12))
    single = pr.price_surrender_option(pr.SurrenderOptionSpec(model, stock, sur, 0, 12))
    assert va == pytest.approx(single, abs=1e-10)


def test_va_is_below_surrender_option(default):
    model, stock, sur, mort = default
    va = pr.price_va_surrender(pr.VASurrenderSpec(model, stock, sur, mort, 0, 12))
    single = pr.price_surrender_option(pr.SurrenderOptionSpec(model, stock, sur, 0, 12))
    assert 0.0 < va < single


def test_va_with_dependent_copula_uses_simulation(default):
    model, stock, sur, mort = default
    spec = pr.VASurrenderSpec(model, stock, sur, mort, 0, 12, Copula2("clayton", 2.0))
    assert not spec.affine
    val = pr.value_product(spec, n=20_000, rng=RngSpec(0, 1))
    assert val.method == "mc" and val.stderr > 0
    assert pr.price_va_surrender(spec, n=20_000, rng=RngSpec(0, 1)) == val.value


# -- scheduled premiums ---------------------------------------------------------------


def test_payment_schedule_step_function():
    sched = pr.PaymentSchedule((0, 2), (5, 5))
    assert [sched.A(u) for u in (-1, 0, 1, 2, 7)] == [0, 5, 5, 10, 10]
    with pytest.raises(ValueError):
        pr.PaymentSchedule((0,), (-1,))
    with pytest.raises(ValueError):
        pr.PaymentSchedule((0, 1), (1,))


def test_scheduled_to_single_examples():
    contract = type("C", (), {"schedule": pr.PaymentSchedule((0, 2), (5, 5)), "T": 4})()
    single, mod = pr.scheduled_to_single(contract)
    assert single == 10 and mod.add_on(1) == 5 and mod.evaluate(Fr(1, 2), 1) == Fr(11, 2)
    assert mod.evaluate(0, 0) == 5 and mod.add_on(7) == 0
    one = type("C", (), {"schedule": pr.PaymentSchedule((3,), (7,)), "T": 9})()
    single, mod = pr.scheduled_to_single(one)
    assert single == 7 and mod.add_on(3) == 0 and mod.add_on(9) == 0
    assert mod.evaluate(1, 0) == 8


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 9)), min_size=1, max_size=5),
       st.integers(0, 12))
def test_modified_benefit_round_trip(payments, tau):
    dates, amounts = zip(*payments)
    sched = pr.PaymentSchedule(dates, amounts)
    T = 10
    single, mod = pr.scheduled_to_single(type("C", (), {"schedule": sched, "T": T})())
    assert single - mod.add_on(tau) == sched.A(min(tau, T))


def test_scheduled_contract_matches_simulation(default):
    model, stock, sur, _ = default
    sched = pr.PaymentSchedule((0, 3, 6, 9), (1.0, 1.0, 1.0, 1.0))
    contract = pr.ScheduledContract(model, stock, sur, sched, 0, 12)
    closed = pr.price_scheduled(contract)
    est = estimate_product(contract, None, 200_000, RngSpec(0, 12))
    assert abs(est.z_score(closed)) <= 3
    nothing = pr.ScheduledContract(model, stock, _zero(model), sched, 0, 12, "none")
    assert pr.price_scheduled(nothing) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        pr.ScheduledContract(model, stock, sur, pr.PaymentSchedule((13,), (1,)), 0, 12)


# -- longevity mixture ----------------------------------------------------------------


def test_single_curve_weight_stays_one():
    mix = pr.LongevityMixture([[0.01] * 5], [1.0])
    upd = pr.mixture_update(mix, [(1000, 10), (990, 50), (940, 0)])
    assert np.all(upd.weights == 1.0)
    assert np.allclose(upd.intensity, 0.01)


def test_empty_observations_leave_weights_unchanged():
    mix = pr.LongevityMixture([[0.01] * 4, [0.05] * 4], [0.3, 0.7])
    upd = pr.mixture_update(mix, [(0, 0)] * 3)
    assert np.allclose(upd.weights, [0.3, 0.7], rtol=0, atol=1e-15)


def test_filter_concentrates_on_the_generating_curve():
    rng = np.random.default_rng(0)
    curves = np.array([[0.01] * 50, [0.015] * 50])
    mix = pr.LongevityMixture(curves, [0.5, 0.5])
    q = -math.expm1(-0.015)
    obs = [(10_000, int(rng.binomial(10_000, q))) for _ in range(50)]
    upd = pr.mixture_update(mix, obs)
    assert upd.weights[-1, 1] > 1 - 1e-12
    assert np.all(upd.weights >= 0) and np.allclose(upd.weights.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_mixture_degeneracy_and_validation():
    mix = pr.LongevityMixture([[0.0, 0.0], [0.0, 0.0]], [0.5, 0.5])
    with pytest.raises(pr.DegeneracyError):
        pr.mixture_update(mix, [(10, 1)])
    with pytest.raises(ValueError):
        pr.mixture_update(mix, [(1, 2)])
    with pytest.raises(ValueError):
        pr.LongevityMixture([[0.1]], [0.5])
    with pytest.raises(ValueError):
        pr.LongevityMixture([[-0.1]], [1.0])


# -- risk margin ----------------------------------------------------------------------


def test_risk_measures():
    losses = np.arange(100, dtype=float)
    assert pr.ExpectedShortfall(0.9)(losses) == pytest.approx(94.5)
    assert pr.StandardDeviationPrinciple(2.0)(losses) == pytest.approx(2 * losses.std(ddof=1))
    assert isinstance(pr.risk_measure({"kind": "standard_deviation", "k": 1}), pr.StandardDeviationPrinciple)
    with pytest.raises(ValueError):
        pr.risk_measure({"kind": "var"})


def test_perfect_hedge_removes_market_margin():
    rng = np.random.default_rng(1)
    m = rng.uniform(0, 1, 200)
    claims = rng.binomial(1, m[:, None], (200, 50)).astype(float)
    rho = pr.StandardDeviationPrinciple(1.0)
    dec = pr.risk_margin_decompose(m, claims, rho, hedge_pnl=-(m - m.mean()))
    assert np.allclose(dec.y1_hedged, 0.0) and dec.margin_y1 == pytest.approx(0.0, abs=1e-15)
    assert dec.margin_split == pytest.approx(dec.margin_y2)


def test_deterministic_claim_has_no_margin():
    dec = pr.risk_margin_decompose(np.full(30, 2.5), np.full((30, 4), 2.5), pr.ExpectedShortfall(0.95))
    assert dec.base == 2.5 and dec.margin_joint == 0 and dec.margin_y1 == 0 and dec.margin_y2 == 0


def test_too_few_scenarios_raise():
    with pytest.raises(pr.EstimationError):
        pr.risk_margin_decompose(np.zeros(5), np.zeros((5, 3)), pr.ExpectedShortfall())


def test_pooling_residual_variance_decays_like_one_over_n():
    rng = np.random.default_rng(2)
    m = rng.uniform(0.1, 0.9, 400)
    ns = np.array([100, 1000, 10_000])
    var = []
    for n in ns:
        claims = rng.binomial(1, m[:, None], (m.size, n)).astype(float)
        var.append(pr.risk_margin_decompose(m, claims, pr.StandardDeviationPrinciple()).y2.var())
    slope, intercept = np.polyfit(np.log(ns), np.log(var), 1)
    fitted = slope * np.log(ns) + intercept
    r2 = 1 - np.sum((np.log(var) - fitted) ** 2) / np.sum((np.log(var) - np.mean(np.log(var))) ** 2)
    assert slope == pytest.approx(-1.0, abs=0.1) and r2 > 0.95


# -- market consistency ---------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_market_consistency_gap_vanishes(seed):
    H, H_extra, Q, P, filt, t = instances.consistency_instance(random.Random(seed))
    gap = pr.market_consistency_gap(H, H_extra, Q, P, filt, t)
    assert all(v == 0 for v in gap.values)


def test_market_consistency_rejects_non_financial_part():
    rng = random.Random(3)
    while True:
        H, H_extra, Q, P, filt, t = instances.consistency_instance(rng)
        if not filt[filt.horizon].is_measurable(H_extra):
            break
    with pytest.raises(fs.MeasurabilityError):
        pr.market_consistency_gap(H_extra, H, Q, P, filt, t)


# -- dispatch -------------------------------------------------------------------------


def test_value_product_dispatch(default):
    model, stock, sur, _ = default
    spec = pr.SurvivalClaimSpec(model, stock, sur, 0, 12)
    closed = pr.value_product(spec)
    assert closed.method == "affine" and closed.stderr is None
    assert closed.value == ae.price_survival_claim(model, stock, sur, 0, 12, model.z0)
    sim = pr.value_product(spec, "mc", 50_000, RngSpec(0, 0))
    assert sim.method == "mc" and abs(sim.value - closed.value) <= 3 * sim.stderr
    with pytest.raises(ValueError):
        pr.value_product(spec, "quantum")
