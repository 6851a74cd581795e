import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))

from params import MultiCell, SingleCell, SystemParams  # noqa: E402
from quad import QuadSpec  # noqa: E402


@pytest.fixture
def single_params() -> SystemParams:
    """单小区默认参数（R = 100 m，λ_b = 1.59e-3，λ_R = 9.55e-4）"""
    return SystemParams(scenario=SingleCell(radius_m=100.0))


@pytest.fixture
def multi_params() -> SystemParams:
    """多小区默认参数（r_v = 200 m）"""
    return SystemParams(scenario=MultiCell())


@pytest.fixture
def coarse_quad() -> QuadSpec:
    """用于快速用例的较粗积分配置"""
    return QuadSpec(rel_tol=1e-5, abs_tol=1e-9, radial_nodes=24, grid_points=200)
