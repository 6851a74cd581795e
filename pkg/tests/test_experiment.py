"""实验执行器：参数扫描、引擎组合与结果表"""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from config import ExperimentConfig
from experiment import (ExperimentRunner, ExperimentSpec, ResultRow, db_to_linear, engines_agree,
                        run_experiment, summarize_gains)
from mc_sim import Estimate
from params import MultiCell, ParamsError, SystemParams
from result_writer import ResultSchema


@pytest.fixture
def spec(single_params, coarse_quad):
    return ExperimentSpec(name='unit', base_params=single_params, sweep_param='lambda_R',
                          sweep_values=(0.0, 9.55e-4), gamma0_grid_db=(0.0, 5.0),
                          metrics=('coverage', 'blind_ratio'), quad=coarse_quad, n_trials=60, seed=7)


def test_db_to_linear():
    assert db_to_linear([0.0, 10.0, -10.0]) == pytest.approx([1.0, 10.0, 0.1])


def test_result_row_fields():
    assert list(ResultRow._fields) == ResultSchema.COLUMNS


def test_check_collects_every_problem(spec):
    bad = ExperimentSpec(name='bad', base_params=spec.base_params, sweep_param='lambda_R', sweep_values=(),
                         mode='fast', metrics=('coverage', 'latency'), threads=0)
    fields = {item.split(':')[0] for item in bad.check()}
    assert {'mode', 'sweep_values', 'metrics', 'threads'} <= fields


def test_check_rejects_unknown_sweep_param(spec):
    errors = ExperimentSpec(name='x', base_params=spec.base_params, sweep_param='lambda_Y',
                            sweep_values=(1e-5,)).check()
    assert errors == ["sweep_param: 不可扫描的参数 'lambda_Y'"]


def test_check_reports_bad_sweep_value(spec):
    errors = ExperimentSpec(name='x', base_params=spec.base_params, sweep_param='beta',
                            sweep_values=(2.5, 1.5)).check()
    assert errors
    assert all(item.startswith('sweep_values[1.5]: ') for item in errors)


def test_check_rejects_analytic_multi_cell_without_blockage():
    base = SystemParams(scenario=MultiCell(truncation_radius_m=500.0))
    spec = ExperimentSpec(name='x', base_params=base, sweep_param='lambda_b', sweep_values=(0.0,))
    assert any(item.startswith('sweep_values[0.0]: ') for item in spec.check())
    assert ExperimentSpec(name='x', base_params=base, sweep_param='lambda_b', sweep_values=(0.0,),
                          mode='montecarlo').check() == []


def test_validate_raises_params_error(spec):
    with pytest.raises(ParamsError):
        ExperimentRunner(ExperimentSpec(name='x', base_params=spec.base_params, sweep_param='lambda_R',
                                        sweep_values=(-1.0,)))


def test_params_at_sweeps_scenario_keys(single_params):
    spec = ExperimentSpec(name='x', base_params=single_params, sweep_param='radius_m', sweep_values=(50.0,))
    assert spec.params_at(50.0).scenario.radius_m == 50.0


def test_engines_agree_rule():
    estimate = Estimate(0.50, 0.01, 1000, 1000)
    assert engines_agree('coverage', 0.52, estimate, 0.02, 0.03)
    assert not engines_agree('coverage', 0.54, estimate, 0.02, 0.03)
    assert engines_agree('rate', 0.51, estimate, 0.02, 0.03)
    assert engines_agree('coverage', 0.5, None, 0.02, 0.03) is None
    assert engines_agree('coverage', math.nan, estimate, 0.02, 0.03) is None


def test_analytic_run_layout(spec):
    table = run_experiment(spec)
    assert list(table.columns) == ResultSchema.COLUMNS
    # 每个扫描值：2 个覆盖阈值 + 1 个盲区比例
    assert len(table) == 6
    assert table['sweep_value'].tolist() == [0.0, 0.0, 0.0, 9.55e-4, 9.55e-4, 9.55e-4]
    assert table['mc_mean'].isna().all()
    assert table['engines_agree'].isna().all()
    assert table['converged'].all()
    blind = table[table['metric'] == 'blind_ratio']
    assert math.isnan(blind['gamma0_db'].iloc[0])
    assert blind['analytic'].iloc[1] < blind['analytic'].iloc[0]


def test_threads_keep_sweep_order(spec):
    serial = run_experiment(spec)
    threaded = run_experiment(replace(spec, threads=2))
    pd.testing.assert_frame_equal(serial, threaded)


def test_montecarlo_run_has_no_analytic_values(spec):
    table = run_experiment(replace(spec, mode='montecarlo'))
    assert table['analytic'].isna().all()
    assert table['mc_mean'].notna().all()
    assert table['engines_agree'].isna().all()


def test_both_mode_flags_agreement(spec):
    tiny = replace(spec, mode='both', n_trials=200, metrics=('P_Ad', 'blind_ratio', 'coverage'))
    table = run_experiment(tiny)
    assert len(table) == 2 * (1 + 1 + 2)
    assert all(isinstance(flag, bool) for flag in table['engines_agree'])


def test_montecarlo_uses_common_seed_across_sweep(single_params):
    spec = ExperimentSpec(name='x', base_params=single_params, sweep_param='p0_w', sweep_values=(1.0, 1.0),
                          mode='montecarlo', metrics=('coverage',), n_trials=40, seed=3)
    table = run_experiment(spec)
    first, second = table.iloc[:5], table.iloc[5:]
    assert first['mc_mean'].tolist() == second['mc_mean'].tolist()


def test_summarize_gains():
    rows = [
        ResultRow(0.0, 'coverage', 0.0, 0.5, 0.4, 0.01, True, True),
        ResultRow(1.0, 'coverage', 0.0, 0.6, 0.5, 0.01, True, True),
        ResultRow(0.0, 'rate', math.nan, 2.0, math.nan, math.nan, None, True),
        ResultRow(1.0, 'rate', math.nan, 3.0, math.nan, math.nan, None, True),
    ]
    gains = summarize_gains(pd.DataFrame(rows, columns=ResultSchema.COLUMNS))
    assert list(gains.columns) == ['sweep_value', 'metric', 'gamma0_db', 'analytic_gain', 'mc_gain']
    coverage = gains[gains['metric'] == 'coverage']
    assert coverage['analytic_gain'].tolist() == pytest.approx([0.0, 0.2])
    assert coverage['mc_gain'].tolist() == pytest.approx([0.0, 0.25])
    rate = gains[gains['metric'] == 'rate']
    assert rate['analytic_gain'].tolist() == pytest.approx([0.0, 0.5])
    assert np.isnan(rate['mc_gain']).all()


def test_summarize_gains_empty():
    assert summarize_gains(pd.DataFrame(columns=ResultSchema.COLUMNS)).empty


def test_analytic_preset_run_converges():
    preset = Path(__file__).resolve().parents[1] / 'config' / 'presets' / 'multi_cell_rate_small.yaml'
    spec = ExperimentConfig(str(preset)).to_spec(mode='analytic')
    table = run_experiment(spec)
    assert len(table) == len(spec.sweep_values) * len(spec.metrics)
    assert table['converged'].all()
    assert table['analytic'].notna().all()
