"""蒙特卡洛仿真：关联规则、试验可复现性与估计量"""

import math

import numpy as np
import pandas as pd
import pytest

from geom import Disk, Point, Scene, Segment, SegmentSet
from mc_sim import (TRIAL_COLUMNS, AssociationKind, Estimate, associate, coverage_from_trials, kind_fraction,
                    los_frequency, rate_from_trials, run_blind_ratio, run_coverage, run_rate, simulate,
                    simulation_radius, sup_distance)
from multi_cell_analysis import MultiCellContext
from params import MultiCell, SingleCell, SystemParams
from single_cell_analysis import SingleCellContext


def _single_scene(walls, ris):
    return Scene(Disk(Point(0.0, 0.0), 100.0), SegmentSet.from_segments(walls),
                 ris=np.asarray(ris, dtype=float).reshape(-1, 2), bss=np.zeros((1, 2)))


def test_estimate_from_indicators():
    estimate = Estimate.from_indicators(np.array([True, True, False, False]))
    assert estimate.mean == 0.5
    assert estimate.half_width_95 == pytest.approx(1.96 * math.sqrt(0.25 / 4))
    assert estimate.n_trials == 4
    assert math.isnan(Estimate.from_indicators(np.array([], dtype=bool)).mean)


def test_estimate_from_samples():
    estimate = Estimate.from_samples(np.array([1.0, 2.0, 3.0]), n_effective=2)
    assert estimate.mean == pytest.approx(2.0)
    assert estimate.half_width_95 == pytest.approx(1.96 * 1.0 / math.sqrt(3))
    assert estimate.n_effective == 2


def test_single_cell_direct_when_bs_visible(single_params):
    outcome = associate(_single_scene([], [[10.0, 10.0]]), (30.0, 40.0), single_params)
    assert outcome.kind is AssociationKind.DIRECT
    assert outcome.distance == pytest.approx(50.0)


def test_single_cell_picks_smallest_distance_product(single_params):
    wall = Segment(Point(25.0, 0.0), 10.0, math.pi / 2)
    ris = [[10.0, 20.0], [40.0, -10.0]]
    outcome = associate(_single_scene([wall], ris), (50.0, 0.0), single_params)
    assert outcome.kind is AssociationKind.REFLECTED
    assert outcome.ris == Point(40.0, -10.0)
    assert outcome.eta == pytest.approx(math.hypot(40.0, 10.0) * math.hypot(10.0, 10.0))


def test_single_cell_blind_without_visible_ris(single_params):
    wall = Segment(Point(25.0, 0.0), 10.0, math.pi / 2)
    outcome = associate(_single_scene([wall], []), (50.0, 0.0), single_params)
    assert outcome.kind is AssociationKind.BLIND
    assert math.isnan(outcome.distance)


@pytest.mark.parametrize('ratio, expected', [(2.0, AssociationKind.DIRECT), (0.5, AssociationKind.REFLECTED)])
def test_multi_cell_association_threshold(multi_params, ratio, expected):
    # 直连优先当且仅当 η > k·ξ，k = exp((α·ln10 + 2·ln N_R)/β)
    k = math.exp((multi_params.alpha * math.log(10.0) + 2.0 * math.log(multi_params.n_ris)) / multi_params.beta)
    xi = 50.0
    eta = ratio * k * xi
    ris = np.array([[0.0, 1.0]])
    bss = np.array([[xi, 0.0], [0.0, 1.0 + eta]])
    wall = Segment(Point(0.0, 1.0 + 0.5 * eta), 2.0, 0.0)
    scene = Scene(Disk(Point(0.0, 0.0), 500.0), SegmentSet.from_segments([wall]), ris=ris, bss=bss)
    outcome = associate(scene, (0.0, 0.0), multi_params)
    assert outcome.kind is expected
    if expected is AssociationKind.REFLECTED:
        assert outcome.eta == pytest.approx(eta)
    else:
        assert outcome.xi == pytest.approx(xi)


def test_simulate_is_reproducible(single_params):
    first = simulate(single_params, 60, seed=3)
    second = simulate(single_params, 60, seed=3, chunk_size=7)
    assert list(first.columns) == TRIAL_COLUMNS
    pd.testing.assert_frame_equal(first, second)
    assert not first.equals(simulate(single_params, 60, seed=4))


def test_simulate_rejects_zero_trials(single_params):
    with pytest.raises(ValueError):
        simulate(single_params, 0, seed=1)


def test_no_blockage_always_direct():
    params = SystemParams(lambda_b=0.0, scenario=SingleCell(100.0))
    frame = simulate(params, 50, seed=5)
    assert (frame['kind'] == AssociationKind.DIRECT.value).all()
    assert (frame['sinr'] > 0).all()


def test_blind_trials_have_zero_sinr(single_params):
    frame = simulate(single_params.with_updates(lambda_R=0.0), 200, seed=8)
    blind = frame[frame['kind'] == AssociationKind.BLIND.value]
    assert len(blind) > 0
    assert (blind['sinr'] == 0.0).all()
    assert blind['distance'].isna().all()
    assert not (frame['kind'] == AssociationKind.REFLECTED.value).any()


def test_coverage_from_trials_counts_threshold_crossings():
    frame = pd.DataFrame({'trial': [0, 1, 2, 3],
                          'kind': ['direct', 'reflected', 'blind', 'direct'],
                          'sinr': [5.0, 2.0, 0.0, 0.5],
                          'distance': [10.0, 300.0, math.nan, 80.0]})
    total = coverage_from_trials(frame, [1.0, 3.0])
    assert [e.mean for e in total] == [0.5, 0.25]
    assert total[0].n_effective == 3
    reflected = coverage_from_trials(frame, [1.0], kind=AssociationKind.REFLECTED)
    assert reflected[0].mean == 0.25
    assert kind_fraction(frame, AssociationKind.BLIND).mean == 0.25


def test_rate_from_trials():
    frame = pd.DataFrame({'trial': [0, 1], 'kind': ['direct', 'direct'],
                          'sinr': [1.0, 3.0], 'distance': [1.0, 2.0]})
    assert rate_from_trials(frame, 10.0).mean == pytest.approx(15.0)


def test_simulation_radius(multi_params):
    assert simulation_radius(multi_params) == pytest.approx(max(6.0 / multi_params.los_decay_rate, 1000.0))
    truncated = multi_params.with_updates(truncation_radius_m=300.0)
    assert simulation_radius(truncated) == 300.0
    with pytest.raises(ValueError):
        simulation_radius(SystemParams())


def test_multi_cell_smoke(multi_params):
    frame = simulate(multi_params.with_updates(truncation_radius_m=400.0), 12, seed=2)
    assert len(frame) == 12
    assert set(frame['kind']) <= {kind.value for kind in AssociationKind}
    assert (frame['sinr'] >= 0.0).all()


def test_los_frequency_matches_exponential_law():
    params = SystemParams()
    table = los_frequency(params, [50.0], n_links=20000, seed=13)
    assert table.loc[0, 'theory'] == pytest.approx(math.exp(-params.los_decay_rate * 50.0))
    assert abs(table.loc[0, 'z_score']) < 4.0


def test_sup_distance():
    assert sup_distance(np.array([1.0, 2.0]), lambda x: x / 2.0) == pytest.approx(0.5)
    assert sup_distance(np.full(4, np.inf), lambda x: 0.0 * x) == 0.0


def test_direct_coverage_matches_analytic_without_ris(single_params, coarse_quad):
    params = single_params.with_updates(lambda_R=0.0)
    analytic = SingleCellContext(params, coarse_quad).ergodic_assoc_single()[0]
    blind = run_blind_ratio(params, 2000, seed=21)
    assert abs((1.0 - blind.mean) - analytic) <= blind.half_width_95 + 0.02


@pytest.mark.slow
def test_los_law_per_length_bin():
    table = los_frequency(SystemParams(), [25.0, 50.0, 100.0, 200.0], n_links=100000, seed=31)
    assert (table['z_score'].abs() <= 3.0).all()


@pytest.mark.slow
@pytest.mark.parametrize('lambda_r', [0.0, 1.59e-4, 9.55e-4])
def test_single_cell_coverage_engines_agree(single_params, lambda_r):
    params = single_params.with_updates(lambda_R=lambda_r)
    grid = 10.0 ** (np.array([-10.0, -5.0, 0.0, 5.0, 10.0]) / 10.0)
    analytic = SingleCellContext(params).ergodic_coverage_single(grid)
    estimates = run_coverage(params, grid, 10000, seed=2024, workers=4)
    for a, estimate in zip(analytic, estimates):
        assert abs(a - estimate.mean) <= estimate.half_width_95 + 0.02


@pytest.mark.slow
def test_multi_cell_blind_ratio_matches_identity(multi_params):
    params = multi_params.with_updates(lambda_b=1.91e-3, lambda_R=1.59e-4)
    ctx = MultiCellContext(params)
    analytic = ctx.assoc_probs_multi()[2]
    estimate = run_blind_ratio(params, 10000, seed=2024, workers=4)
    assert abs(analytic - estimate.mean) <= estimate.half_width_95 + 0.01


@pytest.mark.slow
def test_multi_cell_coverage_engines_agree(multi_params):
    grid = 10.0 ** (np.array([-10.0, 0.0, 5.0, 10.0]) / 10.0)
    analytic = MultiCellContext(multi_params).coverage_multi(grid)
    estimates = run_coverage(multi_params, grid, 3000, seed=2024, workers=4)
    for a, estimate in zip(analytic, estimates):
        assert abs(a - estimate.mean) <= estimate.half_width_95 + 0.02


@pytest.mark.slow
@pytest.mark.parametrize('lambda_r, slack', [(0.0, 0.03), (9.55e-4, 0.06)])
def test_single_cell_rate_engines_agree(single_params, lambda_r, slack):
    # 解析引擎忽略链路间的遮挡相关性，有 RIS 时仿真速率约低 5%
    params = single_params.with_updates(lambda_R=lambda_r)
    analytic = SingleCellContext(params).achievable_rate_single()
    estimate = run_rate(params, 4000, seed=2024, workers=4)
    assert abs(analytic - estimate.mean) <= estimate.half_width_95 + slack * analytic
