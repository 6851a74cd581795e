"""单小区解析引擎：关联概率、反射距离积分布与覆盖概率"""

import math

import numpy as np
import pytest

from mc_sim import sample_eta_given_xi, sup_distance
from params import MultiCell, SingleCell, SystemParams
from quad import exp_radial_moment
from single_cell_analysis import SingleCellContext


@pytest.fixture
def ctx(single_params, coarse_quad):
    return SingleCellContext(single_params, coarse_quad)


def test_rejects_multi_cell_scenario(coarse_quad):
    with pytest.raises(ValueError):
        SingleCellContext(SystemParams(scenario=MultiCell()), coarse_quad)


def test_p_los_law(ctx):
    assert ctx.p_los(0.0) == 1.0
    assert ctx.p_los(50.0) == pytest.approx(math.exp(-ctx.c * 50.0))
    with pytest.raises(ValueError):
        ctx.p_los(-1.0)


def test_reflection_prob_at_cell_center(ctx, single_params):
    mass = 2.0 * math.pi * single_params.lambda_R * float(exp_radial_moment(100.0, ctx.c))
    assert ctx.reflection_prob_single(0.0) == pytest.approx(1.0 - math.exp(-mass), abs=1e-8)


def test_reflection_prob_without_blockage(coarse_quad):
    params = SystemParams(lambda_b=0.0, lambda_R=2e-4, scenario=SingleCell(100.0))
    ctx = SingleCellContext(params, coarse_quad)
    expected = 1.0 - math.exp(-2e-4 * math.pi * 100.0 ** 2)
    assert ctx.reflection_prob_single(60.0) == pytest.approx(expected, abs=1e-8)


def test_reflection_prob_rejects_user_outside_cell(ctx):
    with pytest.raises(ValueError):
        ctx.reflection_prob_single(101.0)


@pytest.mark.parametrize('xi', [5.0, 50.0, 95.0])
def test_assoc_probs_partition(ctx, xi):
    p_ad, p_ai, p_blind = ctx.assoc_probs_single(xi)
    assert p_ad + p_ai + p_blind == pytest.approx(1.0, abs=1e-12)
    assert min(p_ad, p_ai, p_blind) >= 0.0


def test_eta_cdf_saturates_at_reflection_prob(ctx):
    xi = 60.0
    assert ctx.eta_cdf_given_xi(2.0 * 100.0 ** 2, xi) == pytest.approx(ctx.reflection_prob_single(xi), abs=1e-4)
    assert ctx.eta_cdf_table(xi)[-1] == pytest.approx(ctx.reflection_prob_single(xi), abs=1e-4)
    assert ctx.eta_cdf_given_xi(0.0, xi) == 0.0


def test_eta_cdf_table_matches_direct_integral(ctx):
    xi = 40.0
    table = ctx.eta_cdf_table(xi)
    for index in (120, 150, 175):
        x = float(ctx.x_grid[index])
        assert table[index] == pytest.approx(ctx.eta_cdf_given_xi(x, xi), abs=2e-3)


def test_eta_cdf_table_is_cached_and_read_only(ctx):
    table = ctx.eta_cdf_table(30.0)
    assert ctx.eta_cdf_table(30.0) is table
    assert not table.flags.writeable
    assert np.all(np.diff(table) >= 0.0)


def test_no_ris_removes_reflected_coverage(coarse_quad):
    params = SystemParams(lambda_R=0.0, scenario=SingleCell(100.0))
    ctx = SingleCellContext(params, coarse_quad)
    p_ad, p_ai, p_blind = ctx.ergodic_assoc_single()
    assert p_ai == 0.0
    assert p_ad == pytest.approx(2.0 * float(exp_radial_moment(100.0, ctx.c)) / 100.0 ** 2, rel=1e-8)
    direct, reflected = ctx.coverage_split_single(1.0)
    assert reflected == 0.0
    assert direct > 0.0


def test_conditional_coverage_without_ris_is_closed_form(coarse_quad):
    params = SystemParams(lambda_R=0.0, scenario=SingleCell(100.0))
    ctx = SingleCellContext(params, coarse_quad)
    xi, gamma = 70.0, 10.0
    tau = xi ** params.beta * params.noise_w * gamma / (params.p0_w * 10 ** params.alpha)
    expected = math.exp(-ctx.c * xi) * math.exp(-tau / (params.n_bs * params.n_ue))
    assert ctx.cond_coverage_single(xi, gamma) == pytest.approx(expected, rel=1e-10)


def test_conditional_coverage_limits(ctx):
    xi = 50.0
    p_ad, p_ai, _ = ctx.assoc_probs_single(xi)
    assert ctx.cond_coverage_single(xi, 1e-12) == pytest.approx(p_ad + p_ai, abs=1e-3)
    assert ctx.cond_coverage_single(xi, 1e12) < 1e-3


def test_ergodic_coverage_decreases_with_threshold(ctx):
    gamma = 10.0 ** (np.linspace(-10.0, 10.0, 9) / 10.0)
    coverage = ctx.ergodic_coverage_single(gamma)
    assert coverage.shape == gamma.shape
    assert np.all(np.diff(coverage) <= 1e-12)
    assert np.all((coverage >= 0.0) & (coverage <= 1.0))


def test_split_sums_to_total(ctx):
    direct, reflected = ctx.coverage_split_single(np.array([0.5, 3.0]))
    assert ctx.ergodic_coverage_single(np.array([0.5, 3.0])) == pytest.approx(direct + reflected)


def test_coverage_rejects_nonpositive_threshold(ctx):
    with pytest.raises(ValueError):
        ctx.ergodic_coverage_single(0.0)


def test_ergodic_assoc_partition(ctx):
    p_ad, p_ai, p_blind = ctx.ergodic_assoc_single()
    assert p_ad + p_ai + p_blind == pytest.approx(1.0, abs=1e-12)
    assert p_ai > 0.0


def test_more_ris_increases_coverage(coarse_quad):
    base = SystemParams(scenario=SingleCell(100.0))
    sparse = SingleCellContext(base.with_updates(lambda_R=1.59e-4), coarse_quad)
    dense = SingleCellContext(base.with_updates(lambda_R=9.55e-4), coarse_quad)
    assert dense.ergodic_coverage_single(1.0) > sparse.ergodic_coverage_single(1.0)
    assert dense.ergodic_assoc_single()[2] < sparse.ergodic_assoc_single()[2]


def test_rate_grows_with_ris_density(coarse_quad):
    base = SystemParams(scenario=SingleCell(100.0))
    without = SingleCellContext(base.with_updates(lambda_R=0.0), coarse_quad).achievable_rate_single()
    with_ris = SingleCellContext(base.with_updates(lambda_R=9.55e-4), coarse_quad).achievable_rate_single()
    assert 0.0 < without < with_ris


def _slopes(values, densities):
    return np.diff(values) / np.diff(densities)


def test_coverage_gain_saturates_at_low_threshold(coarse_quad):
    base = SystemParams(scenario=SingleCell(100.0))
    densities = [0.0, 1.59e-4, 9.55e-4, 1.59e-3]
    # γ0 = -20 dB：反射链路一旦存在几乎都能覆盖，增益由视距 RIS 存在概率主导
    coverage = [SingleCellContext(base.with_updates(lambda_R=lam), coarse_quad).ergodic_coverage_single(0.01)
                for lam in densities]
    first, last = coverage[1] - coverage[0], coverage[3] - coverage[2]
    assert first >= 2.0 * last > 0.0


def test_coverage_gain_per_ris_density_decreases(coarse_quad):
    base = SystemParams(scenario=SingleCell(100.0))
    densities = [0.0, 1.59e-4, 9.55e-4, 1.59e-3]
    coverage = [SingleCellContext(base.with_updates(lambda_R=lam), coarse_quad).ergodic_coverage_single(10 ** 0.5)
                for lam in densities]
    slopes = _slopes(coverage, densities)
    assert np.all(slopes > 0.0)
    assert np.all(np.diff(slopes) < 0.0)


def test_rate_increases_with_diminishing_returns(coarse_quad):
    base = SystemParams(scenario=SingleCell(100.0))
    densities = [3.18e-5, 1.59e-4, 9.55e-4, 1.59e-3]
    rates = [SingleCellContext(base.with_updates(lambda_R=lam), coarse_quad).achievable_rate_single()
             for lam in densities]
    assert np.all(np.diff(rates) > 0.0)
    assert np.all(np.diff(_slopes(rates, densities)) < 0.0)


@pytest.mark.slow
def test_eta_cdf_matches_scene_enumeration():
    params = SystemParams(scenario=SingleCell(100.0))
    ctx = SingleCellContext(params)
    xi = 50.0
    table = ctx.eta_cdf_table(xi)
    samples = sample_eta_given_xi(params, xi, 10000, seed=17)
    distance = sup_distance(samples, lambda x: np.interp(x, ctx.x_grid, table))
    assert distance < 0.02
