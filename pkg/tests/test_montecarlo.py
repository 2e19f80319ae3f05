import math

import numpy as np
import pytest

from qpval import affine_engine as ae
from qpval import montecarlo as mc
from qpval.stopping_times import CapabilityError, Copula2


@pytest.fixture(scope="module")
def default():
    return ae.default_model()


def _ctx(default, second=False, copula=None):
    model, stock, sur, mort = default
    if second:
        return mc.SimulationContext(model, stock, sur, mort, copula or Copula2())
    return mc.SimulationContext(model, stock, sur)


def test_rng_spec_validates_and_is_deterministic():
    with pytest.raises(ValueError):
        mc.RngSpec(-1, 0)
    with pytest.raises(ValueError):
        mc.RngSpec(0, 1 << 64)
    a = mc.RngSpec(5, 3).generator(2).standard_normal(4)
    b = mc.RngSpec(5, 3).generator(2).standard_normal(4)
    c = mc.RngSpec(5, 4).generator(2).standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert mc.RngSpec(5, 3).child(9) == mc.RngSpec(5, 9)


def test_zero_noise_paths_are_deterministic_linear_recursions():
    theta = np.array([[0.5, 0.0], [0.0, 0.9]])
    model = ae.GaussianFactorModel(1, 1, [0.1, 0.2], [0.2], theta, np.zeros((2, 2)), [1.0, -1.0])
    batch = mc.simulate_paths(model, "P", 1, 4, mc.RngSpec(0, 0))
    z = np.array([1.0, -1.0])
    for k in range(1, 5):
        z = model.mu + theta @ z
        assert np.allclose(batch.z[0, k], z, rtol=0, atol=1e-15)
    assert batch.measure == "P" and batch.steps == 4 and batch.n == 1


def test_simulate_paths_is_bit_identical_and_tagged(default):
    model = default[0]
    a = mc.simulate_paths(model, "Q", 1000, 5, mc.RngSpec(1, 2))
    b = mc.simulate_paths(model, "Q", 1000, 5, mc.RngSpec(1, 2))
    assert a.measure == "QP" and np.array_equal(a.z, b.z)
    with pytest.raises(ValueError):
        mc.simulate_paths(model, "R", 10, 5, mc.RngSpec())
    with pytest.raises(CapabilityError):
        mc.simulate_paths(object(), "P", 10, 5, mc.RngSpec())


def test_one_step_sample_mean_matches_drift(default):
    model = default[0]
    batch = mc.simulate_paths(model, "P", 10**6, 1, mc.RngSpec(3, 0))
    z1 = batch.z[:, 1]
    expected = model.mu + model.theta @ model.z0
    se = np.sqrt(np.diag(model.sigma) / z1.shape[0])
    assert np.all(np.abs(z1.mean(axis=0) - expected) <= 4 * se)


def test_chunked_simulation_matches_across_chunk_boundaries(default):
    model = default[0]
    n = mc.CHUNK_SIZE + 10
    batch = mc.simulate_paths(model, "P", n, 2, mc.RngSpec(0, 7))
    assert batch.n == n
    head = mc.simulate_paths(model, "P", mc.CHUNK_SIZE, 2, mc.RngSpec(0, 7))
    assert np.array_equal(batch.z[: mc.CHUNK_SIZE], head.z)


def test_constant_payoff_has_zero_error(default):
    est = mc.estimate_qp_nested(mc.ConstantPayoff(3, 1.0), _ctx(default), 1000, mc.RngSpec())
    assert est.mean == 1.0 and est.stderr == 0.0 and est.z_score(1.0) == 0.0


def test_stock_is_a_martingale_under_the_composed_law(default):
    model, stock, *_ = default
    zero = ae.IntensitySpec.zero(model.d1, model.d2)
    ctx = mc.SimulationContext(model, stock, zero)
    est = mc.estimate_qp_nested(mc.StockPayoff(12), ctx, 200_000, mc.RngSpec(0, 1))
    s0 = float(stock.price(0, model.z0[2:]))
    assert abs(est.z_score(s0)) <= 3


@pytest.mark.parametrize("method", ["structural", "density"])
def test_survival_claim_matches_closed_form(default, method):
    model, stock, sur, _ = default
    closed = ae.price_survival_claim(model, stock, sur, 0, 12, model.z0)
    est = mc.estimate_qp_nested(mc.SurvivalPayoff(12), _ctx(default), 200_000, mc.RngSpec(0, 2), method=method)
    assert abs(est.z_score(closed)) <= 3


def test_survival_claim_from_a_later_date(default):
    model, stock, sur, _ = default
    z = model.z0 + np.array([0.002, -0.001, 0.1])
    closed = ae.price_survival_claim(model, stock, sur, 4, 10, z, "lagged")
    est = mc.estimate_qp_nested(mc.SurvivalPayoff(10, "lagged"), _ctx(default), 100_000,
                                mc.RngSpec(0, 3), t=4, z_t=z)
    assert abs(est.z_score(closed)) <= 3


def test_estimates_are_deterministic(default):
    args = (mc.SurvivalPayoff(6), _ctx(default), 5000, mc.RngSpec(9, 9))
    assert mc.estimate_qp_nested(*args) == mc.estimate_qp_nested(*args)


def test_stderr_scales_with_root_n(default):
    ratios = []
    for seed in range(4):
        small = mc.estimate_qp_nested(mc.SurvivalPayoff(12), _ctx(default), 20_000, mc.RngSpec(seed, 0))
        large = mc.estimate_qp_nested(mc.SurvivalPayoff(12), _ctx(default), 80_000, mc.RngSpec(seed, 1))
        ratios.append(large.stderr / small.stderr)
    assert all(0.4 <= r <= 0.6 for r in ratios)


def test_antithetic_does_not_increase_error(default):
    ctx = _ctx(default)
    plain = mc.estimate_qp_nested(mc.SurvivalPayoff(12), ctx, 100_000, mc.RngSpec(0, 4))
    anti = mc.estimate_qp_nested(mc.SurvivalPayoff(12), ctx, 100_000, mc.RngSpec(0, 4), antithetic=True)
    assert anti.n == plain.n and anti.stderr <= plain.stderr
    with pytest.raises(ValueError):
        mc.estimate_qp_nested(mc.SurvivalPayoff(12), ctx, 101, mc.RngSpec(), antithetic=True)


def test_surrender_with_zero_intensity_is_exactly_zero(default):
    model, stock, *_ = default
    ctx = mc.SimulationContext(model, stock, ae.IntensitySpec.zero(model.d1, model.d2))
    est = mc.estimate_qp_nested(mc.SurrenderPayoff(12), ctx, 1000, mc.RngSpec())
    assert est.mean == 0.0 and est.stderr == 0.0


def test_two_time_payoff_needs_second_intensity(default):
    with pytest.raises(ValueError):
        mc.estimate_qp_nested(mc.TwoTimePayoff(6, 3), _ctx(default), 100, mc.RngSpec())


@pytest.mark.parametrize("mode", ["unprimed", "primed"])
def test_two_time_block_matches_closed_form(default, mode):
    model, stock, sur, mort = default
    closed = ae.price_two_time_block(model, stock, sur, mort, 0, 5, 10, model.z0, mode)
    est = mc.estimate_qp_nested(mc.TwoTimePayoff(10, 5, mode), _ctx(default, True), 100_000, mc.RngSpec(0, 5))
    assert abs(est.z_score(closed)) <= 3


def test_non_finite_payoff_reports_path():
    theta = np.array([[0.0, 0.0], [0.0, 1.0]])
    model = ae.GaussianFactorModel(1, 1, [0.0, 800.0], [800.0], theta, np.eye(2) * 1e-4, [0.0, 0.0])
    ctx = mc.SimulationContext(model, ae.StockSpec(0.0, [1.0]), ae.IntensitySpec.zero(1, 1))
    with np.errstate(over="ignore"):
        with pytest.raises(mc.NumericError, match="chunk 0, path"):
            mc.estimate_qp_nested(mc.StockPayoff(3), ctx, 10, mc.RngSpec())


def test_estimate_validation(default):
    with pytest.raises(ValueError):
        mc.QPEstimate(0.0, 0.0, 1)
    with pytest.raises(ValueError):
        mc.estimate_qp_nested(mc.SurvivalPayoff(2), _ctx(default), 100, mc.RngSpec(), t=3)
    with pytest.raises(ValueError):
        mc.estimate_qp_nested(mc.SurvivalPayoff(2), _ctx(default), 100, mc.RngSpec(), method="magic")
    est = mc.QPEstimate(1.0, 0.5, 10, 1, 2)
    assert est.to_dict() == {"mean": 1.0, "stderr": 0.5, "n": 10, "seed": 1, "stream": 2}
    assert math.isinf(mc.QPEstimate(1.0, 0.0, 10).z_score(2.0))


def test_violation_rate_is_negligible_on_default_model(default):
    rate = mc.intensity_violation_rate(_ctx(default, True), 20_000, 12, mc.RngSpec())
    assert 0.0 <= rate < 1e-3
