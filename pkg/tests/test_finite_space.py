import random
from fractions import Fraction as Fr

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import instances
from qpval import constants as C
from qpval import finite_space as fs
from qpval import reference as ref


# -- basic types --------------------------------------------------------------


def test_as_fraction_parses_strings_and_floats():
    assert fs.as_fraction("3/8") == Fr(3, 8)
    assert fs.as_fraction(0.1) == Fr(1, 10)
    assert fs.as_fraction(" 0.25 ") == Fr(1, 4)
    assert fs.format_fraction(Fr(6, 4)) == "3/2"
    assert fs.format_fraction(Fr(4)) == "4"
    with pytest.raises(TypeError):
        fs.as_fraction(True)


def test_outcome_space_rejects_duplicates_and_empty():
    with pytest.raises(fs.StructuralError):
        fs.FiniteOutcomeSpace(("a", "a"))
    with pytest.raises(fs.StructuralError):
        fs.FiniteOutcomeSpace(())


def test_measure_must_sum_to_one():
    sp = fs.FiniteOutcomeSpace(("a", "b"))
    with pytest.raises(fs.FiniteSpaceError):
        fs.FiniteMeasure(sp, (Fr(1, 2), Fr(1, 3)))
    with pytest.raises(fs.FiniteSpaceError):
        fs.FiniteMeasure(sp, (Fr(3, 2), Fr(-1, 2)))


def test_partition_must_cover_disjointly():
    sp = fs.FiniteOutcomeSpace(("a", "b", "c"))
    with pytest.raises(fs.StructuralError):
        fs.FinitePartition.from_labels(sp, [["a", "b"], ["b", "c"]])
    with pytest.raises(fs.StructuralError):
        fs.FinitePartition.from_labels(sp, [["a", "b"]])


def test_filtration_must_be_nested():
    sp = fs.FiniteOutcomeSpace(("a", "b", "c"))
    left = fs.FinitePartition.from_labels(sp, [["a", "b"], ["c"]])
    right = fs.FinitePartition.from_labels(sp, [["a"], ["b", "c"]])
    with pytest.raises(fs.StructuralError):
        fs.FiniteFiltration((fs.FinitePartition.trivial(sp), left, right))


def test_market_prices_must_be_adapted():
    ex = ref.discrete_example()
    S1 = fs.FiniteRV(ex.space, ref.STOCK_T1)
    with pytest.raises(fs.MeasurabilityError):
        fs.FiniteMarket(ex.filtration, ((S1,), (S1,)), ex.P)


# -- conditional expectation and composition ---------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_tower_property_of_conditional_expectation(seed):
    rng = random.Random(seed)
    sp = instances.space(rng, 12)
    F = instances.coarse_partition(rng, sp)
    G = instances.refine(rng, F)
    P = instances.measure(rng, sp)
    X = instances.random_rv(rng, sp)
    inner = fs.conditional_expectation(X, G, P)
    assert fs.conditional_expectation(inner, F, P) == fs.conditional_expectation(X, F, P)
    assert P.expect(fs.conditional_expectation(X, F, P)) == P.expect(X)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_blockwise_and_composed_routes_agree(seed):
    rng = random.Random(seed)
    sp = instances.space(rng, 16)
    F = instances.coarse_partition(rng, sp)
    P = instances.measure(rng, sp)
    Q = instances.equivalent_on(rng, P, F)
    X = instances.random_rv(rng, sp)
    assert fs.qp_expect(X, Q, P, F) == fs.qp_compose(Q, P, F).expect(X)


def test_compose_rejects_non_equivalent_measures():
    ex = ref.discrete_example()
    Q = fs.FiniteMeasure(ex.space, (Fr(1, 2), 0, 0, 0, Fr(1, 2), 0))
    with pytest.raises(fs.EquivalenceError):
        fs.qp_compose(Q, ex.P, ex.states)


def test_qp_value_requires_coarser_conditioning():
    ex = ref.discrete_example()
    Q = ref.risk_neutral(ex, Fr(1, 4))
    with pytest.raises(fs.StructuralError):
        fs.qp_value(ex.X, Q, ex.P, fs.FinitePartition.trivial(ex.space), ex.states)


def test_composition_on_reference_family():
    ex = ref.discrete_example()
    for s in (Fr(1, 10), Fr(1, 4), Fr(2, 5)):
        Q = ref.risk_neutral(ex, s)
        assert fs.qp_compose(Q, ex.P, ex.states).weights == C.incomplete_qp(s)


def test_cond_ess_bounds_ignore_null_outcomes():
    sp = fs.FiniteOutcomeSpace(("a", "b", "c", "d"))
    part = fs.FinitePartition.from_labels(sp, [["a", "b", "c"], ["d"]])
    mu = fs.FiniteMeasure(sp, (Fr(1, 2), Fr(1, 2), 0, 0))
    p = fs.FiniteRV(sp, (1, 3, 100, 7))
    b = fs.cond_ess_bounds(p, part, mu)
    assert b.upper.values[:3] == (3, 3, 3) and b.lower.values[:3] == (1, 1, 1)
    assert b.null_blocks == (1,)


# -- martingale measures and superhedging --------------------------------------


def test_incomplete_polytope_vertices():
    poly = fs.martingale_measures(ref.discrete_example().market)
    assert set(poly.vertices) == {(0, 1, 0), (Fr(1, 2), 0, Fr(1, 2))}
    assert poly.has_equivalent
    assert poly.barycenter() == (Fr(1, 4), Fr(1, 2), Fr(1, 4))
    assert poly.satisfies((Fr(1, 4), Fr(1, 2), Fr(1, 4)))
    assert poly.satisfies((Fr(1, 3), Fr(1, 3), Fr(1, 3)))
    assert not poly.satisfies((Fr(1, 2), Fr(1, 4), Fr(1, 4)))


def test_complete_polytope_is_a_point():
    poly = fs.martingale_measures(ref.complete_example().market)
    assert poly.vertices == ((Fr(1, 2), Fr(1, 2)),)
    ex = ref.complete_example()
    Q = poly.to_measure(poly.vertices[0])
    assert fs.qp_compose(Q, ex.P, ex.states).weights == C.COMPLETE_QP


def _one_period_market(up, down, P=None):
    sp = fs.FiniteOutcomeSpace(("u", "d"))
    filt = fs.FiniteFiltration((fs.FinitePartition.trivial(sp), fs.FinitePartition.discrete(sp)))
    S0 = fs.FiniteRV.constant(sp, 1)
    S1 = fs.FiniteRV(sp, (up, down))
    return fs.FiniteMarket(filt, ((S0,), (S1,)), P or fs.FiniteMeasure.uniform(sp))


def test_market_with_arbitrage_has_no_equivalent_measure():
    market = _one_period_market(Fr(2), Fr(3, 2))
    poly = fs.martingale_measures(market)
    assert not poly.has_equivalent
    sp = market.space
    with pytest.raises(fs.MarketArbitrageError):
        fs.superhedge_price(fs.FiniteRV.constant(sp, 1), market)


def test_boundary_market_has_measure_but_none_equivalent():
    market = _one_period_market(Fr(2), Fr(1))
    poly = fs.martingale_measures(market)
    assert poly.vertices == ((0, 1),)
    assert not poly.has_equivalent


def test_superhedge_of_reference_claims():
    ex = ref.discrete_example()
    H = fs.conditional_expectation(ex.X, ex.states, ex.P)
    res = fs.superhedge_price(H, ex.market)
    assert res.price.values[0] == C.SUP_EX
    assert res.strategy[0][0].values[0] == Fr(-3, 10)
    HY = fs.conditional_expectation(ex.Y, ex.states, ex.P)
    assert fs.superhedge_price(HY, ex.market).price.values[0] == C.SUP_EY
    assert fs.subhedge_price(H, ex.market).values[0] == Fr(1, 5)


def test_superhedge_rejects_non_measurable_claim():
    ex = ref.discrete_example()
    with pytest.raises(fs.MeasurabilityError):
        fs.superhedge_price(ex.X, ex.market)


def _random_market(rng, T=2, assets=1):
    """Prices built backwards as conditional expectations under a full-support measure."""
    sp = instances.space(rng, 12, 4)
    filt = instances.filtration(rng, sp, T)
    Q = instances.measure(rng, sp, zero_prob=0.0)
    columns = []
    for _k in range(assets):
        path = [instances.random_rv(rng, sp, filt[T], 1, 9)]
        for t in range(T - 1, -1, -1):
            path.insert(0, fs.conditional_expectation(path[0], filt[t], Q))
        columns.append(path)
    prices = tuple(tuple(col[t] for col in columns) for t in range(T + 1))
    market = fs.FiniteMarket(filt, prices, fs.FiniteMeasure.uniform(sp))
    return market, fs.martingale_measures(market)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_superhedge_primal_dominates_and_matches_vertex_sup(seed):
    rng = random.Random(seed)
    market, poly = _random_market(rng, T=rng.randint(1, 2), assets=rng.randint(1, 2))
    assert poly.has_equivalent
    FT = market.filtration[market.horizon]
    H = instances.random_rv(rng, market.space, FT)
    res = fs.superhedge_price(H, market, 0, poly)
    gains = fs.hedge_gains(res.strategy, market, 0)
    for i in range(market.space.size):
        assert res.price.values[i] + gains.values[i] >= H.values[i]
    dual = max(Q.expect(H) for Q in poly.vertex_measures())
    assert res.price.values[0] == dual


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_vertices_are_martingale_measures(seed):
    rng = random.Random(seed)
    market, poly = _random_market(rng, T=2, assets=1)
    for Q in poly.vertex_measures():
        for t in range(market.horizon):
            now = market.prices[t][0]
            nxt = fs.conditional_expectation(market.prices[t + 1][0], market.filtration[t], Q)
            for block in market.filtration[t].blocks:
                if Q.mass(block) > 0:
                    assert nxt.values[block[0]] == now.values[block[0]]
