import math
import random
from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import instances
from qpval import arbitrage as arb
from qpval import finite_space as fs
from qpval import reference as ref


# -- golden verdicts -----------------------------------------------------------------


def test_premium_below_supremum_is_arbitrage_free():
    res = arb.check_market(instances.reference_market("X", "6/25"))
    assert res.verdict == "nifa" and res.certificate is None
    assert res.nifa.slack[0] >= 0
    Q = res.nifa.measure
    assert all(w > 0 for w in Q.weights)


def test_premium_at_supremum_is_inconclusive():
    res = arb.check_market(instances.reference_market("X", "1/4"))
    assert res.verdict == "inconclusive"
    assert res.nifa.slack[0] < 0
    assert arb.certificate_for(instances.reference_market("X", "1/4"), 0) is None


def test_premium_above_superhedge_is_certified():
    market = instances.reference_market("X", "13/50")
    cert = arb.check_market(market).certificate
    assert cert.t == 0 and cert.trigger_probability == 1
    assert cert.hedge_price.values[0] == Fr(1, 4)
    assert cert.hedge.strategy[0][0].values[0] == Fr(-3, 10)
    expected = (Fr(1, 100), Fr(1, 100), Fr(6, 100), Fr(6, 100), Fr(1, 100), Fr(1, 100))
    assert cert.limit_pnl(market).values == expected


def test_hybrid_contract_certificate():
    cert = arb.check_ifa(instances.reference_market("Y", "7/100"))
    assert cert.hedge_price.values[0] == Fr(3, 50)
    assert cert.hedge.strategy[0][0].values[0] == Fr(1, 25)
    assert cert.premium_floor.values[0] - cert.hedge_price.values[0] == Fr(1, 100)


def test_complete_market_fair_premium():
    res = arb.check_market(instances.reference_market("X", "1/4", complete=True))
    assert res.verdict == "nifa"
    res = arb.check_market(instances.reference_market("X", "13/50", complete=True))
    assert res.verdict == "ifa"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.sampled_from(["X", "Y"]))
def test_verdicts_are_mutually_exclusive(k, claim):
    premium = Fr(k, 100) if claim == "X" else Fr(k, 400)
    market = instances.reference_market(claim, premium)
    nifa = arb.check_nifa(market)
    cert = arb.check_ifa(market)
    assert not (nifa.certified and cert is not None)
    sup = Fr(1, 4) if claim == "X" else Fr(3, 50)
    assert (cert is not None) == (premium > sup)
    if premium < sup - Fr(1, 10**6):
        assert nifa.certified


def test_certificate_is_sound_on_random_premiums():
    rng = random.Random(0)
    for _ in range(30):
        p = Fr(rng.randint(0, 30), 100)
        cert = arb.check_ifa(instances.reference_market("X", p))
        if cert is not None:
            for k in cert.trigger_blocks:
                blk = ref.discrete_example().filtration[0].blocks[k]
                assert cert.premium_floor.values[blk[0]] - cert.hedge_price.values[blk[0]] > 0


def test_market_with_financial_arbitrage_is_rejected():
    sp = fs.FiniteOutcomeSpace(("u", "d"))
    filt = fs.FiniteFiltration((fs.FinitePartition.trivial(sp), fs.FinitePartition.discrete(sp)))
    prices = ((fs.FiniteRV.constant(sp, 1),), (fs.FiniteRV(sp, (2, Fr(3, 2))),))
    market = fs.FiniteMarket(filt, prices, fs.FiniteMeasure.uniform(sp))
    ins = arb.InsuranceMarket(market, filt.partitions, {0: fs.FiniteRV.constant(sp, 0)},
                              {0: fs.FiniteRV.constant(sp, 0)})
    with pytest.raises(fs.MarketArbitrageError):
        arb.check_nifa(ins)


def test_insurance_market_validation():
    ex = ref.discrete_example()
    p = fs.FiniteRV.constant(ex.space, Fr(1, 4))
    with pytest.raises(fs.StructuralError):
        arb.InsuranceMarket(ex.market, ex.filtration.partitions, {1: ex.X}, {1: p})
    with pytest.raises(fs.MeasurabilityError):
        arb.InsuranceMarket(ex.market, ex.filtration.partitions, {0: ex.X}, {0: ex.X})
    coarse = (fs.FinitePartition.trivial(ex.space),) * 2
    with pytest.raises(fs.StructuralError):
        arb.InsuranceMarket(ex.market, coarse, {0: ex.X}, {0: p})
    rich = (fs.FinitePartition.discrete(ex.space), ex.states)
    with pytest.raises(fs.StructuralError):
        arb.InsuranceMarket(ex.market, rich, {0: ex.X}, {0: p})


def test_private_information_premiums_are_allowed():
    ex = ref.discrete_example()
    G0 = fs.FinitePartition.from_labels(ex.space, [["g,p", "m,p", "b,p"], ["g,n", "m,n", "b,n"]])
    G1 = fs.FinitePartition.discrete(ex.space)
    p = fs.FiniteRV(ex.space, (Fr(3, 10), Fr(1, 10), Fr(3, 10), Fr(1, 10), Fr(3, 10), Fr(1, 10)))
    market = arb.InsuranceMarket(ex.market, (G0, G1), {0: ex.X}, {0: p})
    assert market.limit_benefit(0) == ex.X
    cert = arb.check_ifa(market)
    assert cert is None or cert.premium_floor.values[0] == Fr(1, 10)


# -- profit and loss ---------------------------------------------------------------------


def test_insurance_pnl_cases():
    assert arb.insurance_pnl({0: [0.5, 0.5]}, {0: 1.0}, {0: [0.0, 1.0]}) == pytest.approx(0.5)
    assert arb.insurance_pnl({0: [0.0, 0.0]}, {}, {}) == 0.0
    alloc = arb.Allocation.uniform(0, 4)
    assert arb.insurance_pnl({0: alloc}, {0: 0.5}, {0: [1, 0, 0, 0]}) == pytest.approx(0.25)
    with pytest.raises(arb.InputError):
        arb.insurance_pnl({0: [1.0]}, {}, {0: [1.0]})
    with pytest.raises(arb.InputError):
        arb.insurance_pnl({0: [1.0]}, {0: 1.0}, {})
    with pytest.raises(arb.InputError):
        arb.insurance_pnl({0: [0.5, 0.5]}, {0: 1.0}, {0: [1.0]})


def test_financial_pnl_cases():
    S = np.array([[[1.0], [1.2], [0.9]]])
    xi = np.array([[[2.0], [1.0]]])
    assert arb.financial_pnl(xi, S) == pytest.approx([0.4 - 0.3])
    assert arb.financial_pnl(np.zeros_like(xi), S) == pytest.approx([0.0])
    assert arb.financial_pnl(xi, np.ones_like(S)) == pytest.approx([0.0])
    assert arb.financial_pnl(np.array([[[0.0], [1.0]]]), S, start=1) == pytest.approx([-0.3])
    with pytest.raises(arb.InputError):
        arb.financial_pnl(xi, S, start=1)
    with pytest.raises(arb.InputError):
        arb.financial_pnl(xi, S[:, :2])


def test_check_adapted():
    ex = ref.discrete_example()
    arb.check_adapted([[fs.FiniteRV.constant(ex.space, 3)]], ex.market)
    with pytest.raises(arb.AdaptednessError):
        arb.check_adapted([[ex.X]], ex.market)


def _random_adapted_strategy(rng, market):
    T = market.horizon
    strat = []
    for s in range(T):
        strat.append([instances.random_rv(rng, market.space, market.filtration[s]) for _ in market.prices[0]])
    return strat


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_hedge_gains_have_zero_mean_under_martingale_vertices(seed):
    rng = random.Random(seed)
    ex = ref.discrete_example() if rng.random() < 0.3 else None
    if ex is not None:
        market = ex.market
    else:
        sp = instances.space(rng, 10, 3)
        filt = instances.filtration(rng, sp, 2)
        Q0 = instances.measure(rng, sp, zero_prob=0.0)
        terminal = instances.random_rv(rng, sp, filt[2], 1, 9)
        path = [fs.conditional_expectation(terminal, filt[t], Q0) for t in range(2)] + [terminal]
        market = fs.FiniteMarket(filt, tuple((p,) for p in path), fs.FiniteMeasure.uniform(sp))
    strat = _random_adapted_strategy(rng, market)
    arb.check_adapted(strat, market)
    exact = fs.hedge_gains(strat, market)
    xi = np.array([[[float(h.values[i]) for h in holding] for holding in strat] for i in range(market.space.size)])
    S = np.array([[[float(p.values[i]) for p in row] for row in market.prices] for i in range(market.space.size)])
    approx = arb.financial_pnl(xi, S)
    assert np.allclose(approx, [float(v) for v in exact.values], atol=1e-12)
    for Q in fs.martingale_measures(market).vertex_measures():
        assert Q.expect(exact) == 0


def test_allocation_bounds():
    a = arb.Allocation.uniform(0, 8)
    assert a.mass == pytest.approx(1.0)
    assert arb.Allocation.uniform(0, 8, active=False).mass == 0.0
    with pytest.raises(arb.InputError):
        arb.Allocation(0, (0.7, 0.7))
    with pytest.raises(arb.InputError):
        arb.Allocation(0, (-0.1,))
    with pytest.raises(ValueError):
        arb.Allocation.uniform(0, 0)
    assert arb.Allocation(0, (0.7, 0.7), bound=2.0).mass == pytest.approx(1.4)


# -- simulated arbitrage -----------------------------------------------------------------


def test_construct_with_single_seeker_takes_exact_values():
    market = instances.reference_market("X", "13/50")
    cert = arb.check_ifa(market)
    run = arb.construct_arbitrage(cert, market, 1, 500, np.random.default_rng(0))
    gains = fs.hedge_gains(cert.hedge.strategy, market.financial, 0)
    possible = {float(Fr(13, 50) - x + g) for x in (0, 1) for g in gains.values}
    assert set(np.round(run.pnl, 12)) <= {round(v, 12) for v in possible}
    assert run.minimum < 0


def test_construct_is_deterministic_and_profitable():
    market = instances.reference_market("X", "13/50")
    cert = arb.check_ifa(market)
    a = arb.construct_arbitrage(cert, market, 2000, 300, np.random.default_rng(5))
    b = arb.construct_arbitrage(cert, market, 2000, 300, np.random.default_rng(5))
    assert np.array_equal(a.pnl, b.pnl)
    assert a.mean > 0 and a.noise_floor < 0
    assert a.max_conditional_variance == pytest.approx(0.24)
    with pytest.raises(ValueError):
        arb.construct_arbitrage(cert, market, 0, 10, np.random.default_rng(0))


def test_forced_run_below_fair_value_loses_money():
    market = instances.reference_market("X", "1/5")
    assert arb.certificate_for(market, 0) is None
    forced = arb.certificate_for(market, 0, force=True)
    run = arb.construct_arbitrage(forced, market, 10_000, 1000, np.random.default_rng(1))
    assert run.mean < 0


# -- law of large numbers ------------------------------------------------------------------


def test_constant_benefits_have_no_error():
    rep = arb.slln_experiment([arb.bernoulli_sampler(0.0), arb.bernoulli_sampler(1.0)],
                              [10, 100], 5, np.random.default_rng(0))
    assert rep.rms_error == (0.0, 0.0) and math.isnan(rep.exponent)


def test_bernoulli_error_matches_binomial_standard_error():
    rep = arb.slln_experiment([arb.bernoulli_sampler(q) for q in (0.1, 0.5, 0.8)],
                              [100, 1000, 10_000], 100, np.random.default_rng(2))
    for got, want in zip(rep.rms_error, rep.predicted):
        assert want / 1.5 <= got <= 1.5 * want


def test_slln_rejects_infinite_variance():
    def heavy(n, rng):
        return rng.standard_cauchy(n)

    heavy.mean, heavy.variance = 0.0, math.inf
    with pytest.raises(arb.AssumptionError):
        arb.slln_experiment([heavy], [10, 100], 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        arb.bernoulli_sampler(1.5)
    with pytest.raises(ValueError):
        arb.slln_experiment([arb.bernoulli_sampler(0.5)], [10], 2, np.random.default_rng(0))
