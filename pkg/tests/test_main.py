"""命令行入口：子命令与退出码"""

import logging
from pathlib import Path

import pandas as pd
import pytest

from main import EXIT_INVALID, EXIT_OK, main, parse_arguments
from result_writer import ResultSchema

ROOT = Path(__file__).resolve().parents[1]

TINY_CONFIG = """\
experiment:
  name: tiny
  sweep_param: lambda_R
  sweep_values: [0.0]
  metrics: [blind_ratio, P_Ad]
  output_path: {out}
system:
  scenario:
    kind: single
    radius_m: 100.0
quadrature:
  radial_nodes: 24
  grid_points: 200
"""


@pytest.fixture(autouse=True)
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


def _argv(tmp_path, *args):
    return ['--quiet', '--log_dir', str(tmp_path / 'logs'), *args]


def test_mode_alias_accepted():
    args = parse_arguments(['run', '--config', 'x.yaml', '--mode', 'mc', '--trials', '10'])
    assert args.mode == 'mc'
    assert args.trials == 10


def test_subcommand_required():
    with pytest.raises(SystemExit):
        parse_arguments([])


def test_validate_default_config(tmp_path):
    assert main(_argv(tmp_path, 'validate', '--config', str(ROOT / 'config' / 'config.yaml'))) == EXIT_OK


def test_validate_invalid_config(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text("experiment:\n  mode: fastest\n", encoding='utf-8')
    assert main(_argv(tmp_path, 'validate', '--config', str(path))) == EXIT_INVALID


def test_missing_config_is_invalid(tmp_path):
    assert main(_argv(tmp_path, 'validate', '--config', str(tmp_path / 'absent.yaml'))) == EXIT_INVALID


def test_presets_list(tmp_path, capsys):
    assert main(_argv(tmp_path, 'presets', 'list', '--dir', str(ROOT / 'config' / 'presets'))) == EXIT_OK
    out = capsys.readouterr().out
    assert 'single_cell_coverage' in out
    assert len(out.strip().splitlines()) == 10


def test_run_writes_results(tmp_path):
    out = tmp_path / 'results'
    path = tmp_path / 'tiny.yaml'
    path.write_text(TINY_CONFIG.format(out=out.as_posix()), encoding='utf-8')
    assert main(_argv(tmp_path, 'run', '--config', str(path))) == EXIT_OK
    table = pd.read_csv(out / 'tiny.csv')
    assert list(table.columns) == ResultSchema.COLUMNS
    assert table['metric'].tolist() == ['blind_ratio', 'P_Ad']
    assert (out / 'tiny.json').exists()
    assert (out / 'tiny_gains.csv').exists()
    assert list((tmp_path / 'logs').glob('ris_cov_*.log'))
