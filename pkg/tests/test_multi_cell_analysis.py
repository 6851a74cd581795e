"""多小区解析引擎：存在概率、服务距离分布、干扰矩与覆盖概率"""

import math

import numpy as np
import pytest
from scipy import integrate

from mc_sim import sample_eta0_greedy, sample_nearest_los_bs, sup_distance
from multi_cell_analysis import MultiCellContext
from params import MultiCell, SingleCell, SystemParams
from quad import DivergentIntegralError, QuadSpec, exp_radial_moment, upper_incomplete_gamma


@pytest.fixture
def ctx(multi_params, coarse_quad):
    return MultiCellContext(multi_params, coarse_quad)


def test_rejects_single_cell_and_empty_network(coarse_quad):
    with pytest.raises(ValueError):
        MultiCellContext(SystemParams(scenario=SingleCell()), coarse_quad)
    with pytest.raises(ValueError):
        MultiCellContext(SystemParams(scenario=MultiCell(lambda_Y=0.0)), coarse_quad)


def test_no_blockage_diverges(coarse_quad):
    params = SystemParams(lambda_b=0.0, scenario=MultiCell(truncation_radius_m=1000.0))
    with pytest.raises(DivergentIntegralError):
        MultiCellContext(params, coarse_quad)


def test_reflection_prob_closed_form(ctx, multi_params):
    expected = 1.0 - math.exp(-2.0 * math.pi * multi_params.lambda_R / ctx.c ** 2)
    assert ctx.multi_reflection_prob() == pytest.approx(expected, rel=1e-8)


def test_reflection_prob_dense_default_is_nearly_one(ctx):
    # 2πλ_R/c² ≈ 26
    assert ctx.multi_reflection_prob() == pytest.approx(1.0 - math.exp(-26.0), abs=1e-6)


def test_exists_probs(ctx):
    exists = ctx.exists_probs()
    assert exists.p_los_bs == pytest.approx(1.0 - math.exp(-2.0 * math.pi * ctx.lambda_Y / ctx.c ** 2), rel=1e-8)
    assert exists.p_reflective_bs == 1.0
    assert exists.reflective_count_divergent


def test_exists_probs_without_ris(multi_params, coarse_quad):
    ctx = MultiCellContext(multi_params.with_updates(lambda_R=0.0), coarse_quad)
    assert ctx.multi_reflection_prob() == 0.0
    assert ctx.exists_probs().p_reflective_bs == 0.0


def test_bs_densities_partition(ctx):
    xi = np.array([0.0, 30.0, 300.0])
    los, reflective, idle = ctx.bs_densities(xi)
    assert los + reflective + idle == pytest.approx(np.full(3, ctx.lambda_Y))
    assert los[0] == pytest.approx(ctx.lambda_Y)


def test_nearest_los_bs_pdf_mass_is_p_los_bs(ctx):
    mass = integrate.quad(ctx.nearest_los_bs_pdf, 0.0, 40.0 / ctx.c, limit=200)[0]
    assert mass == pytest.approx(ctx.exists_probs().p_los_bs, rel=1e-6)
    assert ctx.nearest_los_bs_pdf(0.0) == 0.0


def test_nearest_los_ris_pdf_mass_is_reflection_prob(ctx):
    mass = integrate.quad(ctx.nearest_los_ris_pdf, 0.0, 40.0 / ctx.c, limit=200)[0]
    assert mass == pytest.approx(ctx.multi_reflection_prob(), rel=1e-6)


@pytest.mark.parametrize('x', [100.0, 1000.0])
def test_conditional_eta0_window_matches_arc_form(ctx, x):
    r0 = 20.0
    arc_form = -math.expm1(-float(ctx._conditional_mass(x, np.array([r0]))[0]))
    assert ctx.eta0_cdf_given_r0(x, r0) == pytest.approx(arc_form, abs=1e-4)


def test_conditional_eta0_edge_cases(ctx):
    assert ctx.eta0_cdf_given_r0(0.0, 10.0) == 0.0
    with pytest.raises(ValueError):
        ctx.eta0_cdf_given_r0(10.0, 0.0)


def test_eta0_table_matches_direct_integral(ctx):
    table = ctx.eta0_cdf_table()
    for x in (50.0, 500.0, 5000.0):
        assert table(x) == pytest.approx(ctx.eta0_cdf(x), abs=2e-3)
    assert np.all(np.diff(table.values) >= 0.0)
    assert table.saturation <= ctx.multi_reflection_prob() + 1e-5


def test_assoc_partition_and_blind_identity(ctx):
    p_ad, p_ai, p_blind = ctx.assoc_probs_multi()
    assert p_ad + p_ai + p_blind == pytest.approx(1.0, abs=1e-12)
    p_los_bs = ctx.exists_probs().p_los_bs
    assert p_blind == pytest.approx((1.0 - p_los_bs) * (1.0 - ctx.multi_reflection_prob()), abs=1e-4)


def test_blind_ratio_independent_of_ris_size(multi_params, coarse_quad):
    blind = [MultiCellContext(multi_params.with_updates(n_ris=n), coarse_quad).assoc_probs_multi()[2]
             for n in (16, 100, 256)]
    assert max(blind) - min(blind) < 1e-6


def test_served_direct_mass_matches_p_ad(ctx):
    served = ctx.served_distributions()
    assert served.direct_mass == pytest.approx(served.p_ad, rel=1e-12)
    assert served.reflected_mass > 0.0


def test_no_ris_blind_is_no_los_bs(multi_params, coarse_quad):
    ctx = MultiCellContext(multi_params.with_updates(lambda_R=0.0), coarse_quad)
    p_ad, p_ai, p_blind = ctx.assoc_probs_multi()
    assert p_ai == 0.0
    assert p_blind == pytest.approx(1.0 - ctx.exists_probs().p_los_bs, abs=1e-6)
    assert ctx.coverage_split_multi(1.0)[1] == 0.0


def test_sparse_ris_shrinks_blind_area_in_dense_blockage(coarse_quad):
    base = SystemParams(lambda_b=1.91e-3, scenario=MultiCell())
    without = MultiCellContext(base.with_updates(lambda_R=0.0), coarse_quad).assoc_probs_multi()[2]
    with_ris = MultiCellContext(base.with_updates(lambda_R=1.59e-4), coarse_quad).assoc_probs_multi()[2]
    assert (without - with_ris) / without >= 0.70


def test_los_interference_integral_matches_incomplete_gamma(ctx):
    lower = 50.0
    spec = QuadSpec(rel_tol=1e-11, abs_tol=1e-16)
    value = ctx.los_interference_integral(lower, spec).value
    expected = ctx.c ** (ctx.beta - 2.0) * upper_incomplete_gamma(2.0 - ctx.beta, ctx.c * lower)
    assert value == pytest.approx(expected, rel=1e-8)


def test_interference_moments_validation(ctx):
    with pytest.raises(ValueError):
        ctx.interference_moments(0.0)
    with pytest.raises(ValueError):
        ctx.interference_moments(10.0, served='blind')


def test_interference_moments_decrease_with_boundary(ctx):
    near = ctx.interference_moments(20.0)
    far = ctx.interference_moments(200.0)
    assert near[0] > far[0] > 0.0
    assert near[1] > far[1] > 0.0


def test_reflected_moments_use_scaled_boundary(ctx):
    eta = 500.0
    q3, _ = ctx.interference_moments(eta, served='reflected')
    q1, _ = ctx.interference_moments(eta / ctx.assoc_const)
    assert q3 == pytest.approx(q1, rel=1e-12)


def test_idle_bs_switch_scales_reflected_interference(multi_params, coarse_quad):
    eta = 5000.0
    thinned = MultiCellContext(multi_params, coarse_quad)
    full = MultiCellContext(multi_params.with_updates(idle_bs_interfere=True), coarse_quad)
    q4_thinned = thinned.interference_moments(eta, served='reflected')[1]
    q4_full = full.interference_moments(eta, served='reflected')[1]
    assert q4_thinned == pytest.approx(thinned.multi_reflection_prob() * q4_full, rel=1e-10)


def test_profile_matches_pointwise_moments(ctx):
    boundary = float(np.geomspace(ctx.quad.excluded_radius, ctx.horizon, 48)[20])
    profile = ctx.interference_profile()
    q1, q2 = ctx.interference_moments(boundary)
    assert float(profile.q1(boundary)) == pytest.approx(q1, rel=1e-4)
    assert float(profile.q2(boundary)) == pytest.approx(q2, rel=0.05)


def test_coverage_decreases_with_threshold(ctx):
    gamma = 10.0 ** (np.linspace(-10.0, 10.0, 5) / 10.0)
    coverage = ctx.coverage_multi(gamma)
    assert np.all(np.diff(coverage) <= 1e-12)
    assert np.all((coverage >= 0.0) & (coverage <= 1.0))


def test_direct_coverage_tends_to_p_ad(ctx):
    direct, _ = ctx.coverage_split_multi(1e-12)
    assert direct == pytest.approx(ctx.assoc_probs_multi()[0], abs=1e-4)


def test_reflected_coverage_tends_to_p_ai(ctx):
    _, reflected = ctx.coverage_split_multi(1e-12)
    assert reflected == pytest.approx(ctx.assoc_probs_multi()[1], abs=2e-3)


def test_served_reflected_mass_matches_p_ai(ctx):
    served = ctx.served_distributions()
    assert served.reflected_mass == pytest.approx(ctx.assoc_probs_multi()[1], abs=2e-3)


def test_rate_increases_with_diminishing_returns(multi_params, coarse_quad):
    densities = [3.18e-5, 1.59e-4, 9.55e-4, 1.59e-3]
    rates = [MultiCellContext(multi_params.with_updates(lambda_R=lam), coarse_quad).rate_multi()
             for lam in densities]
    assert np.all(np.diff(rates) > 0.0)
    slopes = np.diff(rates) / np.diff(densities)
    assert np.all(np.diff(slopes) < 0.0)


def test_coverage_rejects_nonpositive_threshold(ctx):
    with pytest.raises(ValueError):
        ctx.coverage_multi(np.array([1.0, -1.0]))


def test_rate_is_positive(ctx):
    assert ctx.rate_multi() > 0.0


@pytest.mark.slow
def test_nearest_los_bs_matches_scene_enumeration(multi_params):
    ctx = MultiCellContext(multi_params)
    samples = sample_nearest_los_bs(multi_params, 10000, seed=23)
    cdf = lambda x: -np.expm1(-2.0 * math.pi * ctx.lambda_Y * exp_radial_moment(x, ctx.c))  # noqa: E731
    assert sup_distance(samples, cdf) < 0.02


@pytest.mark.slow
def test_eta0_matches_greedy_scene_enumeration(multi_params):
    ctx = MultiCellContext(multi_params)
    samples = sample_eta0_greedy(multi_params, 10000, seed=29)
    assert sup_distance(samples, ctx.eta0_cdf_table()) < 0.03
