import json
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from scipy import constants

# 未显式给出时由其它字段推导的参数
DERIVED_FIELDS: Tuple[str, ...] = ('alpha', 'noise_w', 'psi_bs', 'psi_ris', 'psi_ue')
SCENARIO_KEYS: Tuple[str, ...] = ('radius_m', 'lambda_Y', 'r_v', 'truncation_radius_m')
TWO_PI = 2.0 * math.pi


class ParamsError(ValueError):
    """参数校验失败，violations 中按字段列出全部违规项"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def derive_alpha(fc_hz: float) -> float:
    """
    由载波频率计算大尺度增益截距指数 α = -2.8 - 2·log10(fc/1GHz)

    Args:
        fc_hz (float): 载波频率，Hz

    Returns:
        float: α（毫米波频段为负数，28GHz 约 -5.694）
    """
    if not (isinstance(fc_hz, (int, float)) and fc_hz > 0):
        raise ParamsError([f"fc_hz: 载波频率必须为正数，当前为 {fc_hz}"])
    return -2.8 - 2.0 * math.log10(fc_hz / 1e9)


def thermal_noise_w(bw_hz: float, temperature_k: float = 290.0) -> float:
    """热噪声功率 σ² = k_B·T·W，单位 W"""
    return constants.k * temperature_k * bw_hz


def default_beamwidth(n_elements: int) -> float:
    """主瓣宽度默认值 ψ = 2π/√N"""
    return TWO_PI / math.sqrt(n_elements)


def virtual_radius(lambda_Y: float) -> float:
    """虚拟小区半径 r_v = sqrt(1/(λ_Y·π))"""
    return math.sqrt(1.0 / (lambda_Y * math.pi)) if lambda_Y > 0 else math.inf


def density_from_virtual_radius(r_v: float) -> float:
    """由虚拟小区半径反推基站密度 λ_Y"""
    return 1.0 / (math.pi * r_v * r_v)


@dataclass(frozen=True)
class SingleCell:
    radius_m: float = 100.0

    kind = 'single'


@dataclass(frozen=True)
class MultiCell:
    lambda_Y: float = field(default_factory=lambda: density_from_virtual_radius(200.0))
    truncation_radius_m: Optional[float] = None

    kind = 'multi'

    @property
    def r_v(self) -> float:
        return virtual_radius(self.lambda_Y)


Scenario = Union[SingleCell, MultiCell]


@dataclass(frozen=True)
class SystemParams:
    """
    系统参数（物理常数、密度、天线数、功率、带宽与场景）

    α、σ²、ψ 为推导字段：未显式覆盖时分别由 fc_hz、bw_hz/temperature_k、天线数推导，
    覆盖值保存在 overrides 中，因此 with_updates 修改 fc_hz 等字段后推导值会随之更新。
    """
    fc_hz: float = 28e9
    beta: float = 2.2
    lambda_b: float = 1.59e-3
    len_min: float = 10.0
    len_max: float = 20.0
    lambda_R: float = 9.55e-4
    lambda_u: float = 3.18e-3
    n_bs: int = 64
    n_ris: int = 100
    n_ue: int = 4
    p0_w: float = 1.0
    bw_hz: float = 200e6
    temperature_k: float = 290.0
    scenario: Scenario = field(default_factory=SingleCell)
    idle_bs_interfere: bool = False
    overrides: Tuple[Tuple[str, float], ...] = ()

    def _override(self, name: str) -> Optional[float]:
        for key, value in self.overrides:
            if key == name:
                return value
        return None

    @property
    def alpha(self) -> float:
        value = self._override('alpha')
        return derive_alpha(self.fc_hz) if value is None else value

    @property
    def noise_w(self) -> float:
        value = self._override('noise_w')
        return thermal_noise_w(self.bw_hz, self.temperature_k) if value is None else value

    @property
    def psi_bs(self) -> float:
        value = self._override('psi_bs')
        return default_beamwidth(self.n_bs) if value is None else value

    @property
    def psi_ris(self) -> float:
        value = self._override('psi_ris')
        return default_beamwidth(self.n_ris) if value is None else value

    @property
    def psi_ue(self) -> float:
        value = self._override('psi_ue')
        return default_beamwidth(self.n_ue) if value is None else value

    @property
    def mean_blockage_length(self) -> float:
        return 0.5 * (self.len_min + self.len_max)

    @property
    def los_decay_rate(self) -> float:
        """LoS 概率衰减率 c = 2·λ_b·E[L]/π，单位 1/m"""
        return 2.0 * self.lambda_b * self.mean_blockage_length / math.pi

    @property
    def is_multi_cell(self) -> bool:
        return isinstance(self.scenario, MultiCell)

    def with_updates(self, **changes: Any) -> 'SystemParams':
        """返回修改了若干字段的新参数，场景字段（radius_m、lambda_Y、r_v 等）也可直接传入"""
        data = params_to_dict(self)
        scenario = dict(data['scenario'])
        for key, value in changes.items():
            if key in SCENARIO_KEYS:
                if key == 'r_v':
                    scenario.pop('lambda_Y', None)
                elif key == 'lambda_Y':
                    scenario.pop('r_v', None)
                scenario[key] = value
            else:
                data[key] = value
        data['scenario'] = scenario
        return params_from_dict(data)


_FLOAT_FIELDS = ('fc_hz', 'beta', 'lambda_b', 'len_min', 'len_max', 'lambda_R', 'lambda_u',
                 'p0_w', 'bw_hz', 'temperature_k')
_INT_FIELDS = ('n_bs', 'n_ris', 'n_ue')


def _coerce_float(key: str, value: Any, errors: List[str]) -> float:
    if isinstance(value, bool):
        errors.append(f"{key}: 必须为数值，当前为 {value!r}")
        return math.nan
    try:
        return float(value)
    except (TypeError, ValueError):
        errors.append(f"{key}: 必须为数值，当前为 {value!r}")
        return math.nan


def _coerce_int(key: str, value: Any, errors: List[str]) -> int:
    number = _coerce_float(key, value, errors)
    if math.isfinite(number) and number.is_integer():
        return int(number)
    if math.isfinite(number):
        errors.append(f"{key}: 必须为整数，当前为 {value!r}")
    return 0


def _scenario_from_dict(raw: Any, errors: List[str]) -> Scenario:
    if raw is None:
        return SingleCell()
    if not isinstance(raw, dict):
        errors.append(f"scenario: 必须为映射，当前为 {raw!r}")
        return SingleCell()
    kind = raw.get('kind', 'single')
    unknown = set(raw) - {'kind', *SCENARIO_KEYS}
    for key in sorted(unknown):
        errors.append(f"scenario.{key}: 未知的场景参数")
    if kind == 'single':
        radius = _coerce_float('radius_m', raw.get('radius_m', 100.0), errors)
        return SingleCell(radius_m=radius)
    if kind == 'multi':
        if 'lambda_Y' in raw:
            lambda_Y = _coerce_float('lambda_Y', raw['lambda_Y'], errors)
        elif 'r_v' in raw:
            r_v = _coerce_float('r_v', raw['r_v'], errors)
            lambda_Y = density_from_virtual_radius(r_v) if r_v > 0 else math.nan
            if not r_v > 0:
                errors.append(f"r_v: 虚拟小区半径必须为正数，当前为 {raw['r_v']!r}")
        else:
            lambda_Y = MultiCell().lambda_Y
        truncation = raw.get('truncation_radius_m')
        if truncation is not None:
            truncation = _coerce_float('truncation_radius_m', truncation, errors)
        return MultiCell(lambda_Y=lambda_Y, truncation_radius_m=truncation)
    errors.append(f"scenario.kind: 只能为 'single' 或 'multi'，当前为 {kind!r}")
    return SingleCell()


def params_from_dict(data: Dict[str, Any]) -> SystemParams:
    """
    由字典构建参数；缺省字段使用默认值，出现的推导字段视为覆盖值

    Raises:
        ParamsError: 存在未知字段或类型错误
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParamsError([f"system: 参数必须为映射，当前为 {type(data).__name__}"])
    errors: List[str] = []
    known = {f.name for f in fields(SystemParams)} - {'overrides'}
    for key in sorted(set(data) - known - set(DERIVED_FIELDS)):
        errors.append(f"{key}: 未知参数")

    kwargs: Dict[str, Any] = {}
    for key in _FLOAT_FIELDS:
        if key in data:
            kwargs[key] = _coerce_float(key, data[key], errors)
    for key in _INT_FIELDS:
        if key in data:
            kwargs[key] = _coerce_int(key, data[key], errors)
    if 'idle_bs_interfere' in data:
        kwargs['idle_bs_interfere'] = bool(data['idle_bs_interfere'])
    kwargs['scenario'] = _scenario_from_dict(data.get('scenario'), errors)
    overrides = tuple((key, _coerce_float(key, data[key], errors))
                      for key in DERIVED_FIELDS if data.get(key) is not None)
    if errors:
        raise ParamsError(errors)
    return SystemParams(overrides=overrides, **kwargs)


def params_to_dict(params: SystemParams) -> Dict[str, Any]:
    """参数转为可序列化字典；推导字段仅在被覆盖时写出"""
    data: Dict[str, Any] = {}
    for key in _FLOAT_FIELDS + _INT_FIELDS:
        data[key] = getattr(params, key)
    data['idle_bs_interfere'] = params.idle_bs_interfere
    scenario = params.scenario
    if isinstance(scenario, MultiCell):
        data['scenario'] = {'kind': 'multi', 'lambda_Y': scenario.lambda_Y,
                            'truncation_radius_m': scenario.truncation_radius_m}
    else:
        data['scenario'] = {'kind': 'single', 'radius_m': scenario.radius_m}
    for key, value in params.overrides:
        data[key] = value
    return data


def check(params: SystemParams) -> List[str]:
    """返回全部违规项（空列表表示合法）"""
    errors: List[str] = []
    for key in _FLOAT_FIELDS:
        value = getattr(params, key)
        if not math.isfinite(value):
            errors.append(f"{key}: 必须为有限数值，当前为 {value}")
    for key in ('lambda_b', 'lambda_R', 'lambda_u'):
        if getattr(params, key) < 0:
            errors.append(f"{key}: 密度不能为负，当前为 {getattr(params, key)}")
    for key in ('fc_hz', 'p0_w', 'bw_hz', 'temperature_k'):
        if not getattr(params, key) > 0:
            errors.append(f"{key}: 必须为正数，当前为 {getattr(params, key)}")
    if params.len_min < 0:
        errors.append(f"len_min: 遮挡物长度不能为负，当前为 {params.len_min}")
    if params.len_min > params.len_max:
        errors.append(f"len_min: 遮挡物长度下界 {params.len_min} 大于上界 len_max={params.len_max}")
    for key in _INT_FIELDS:
        if getattr(params, key) < 1:
            errors.append(f"{key}: 天线/单元数必须 ≥ 1，当前为 {getattr(params, key)}")
    if not params.beta > 2:
        errors.append(f"beta: beta 必须大于 2，当前为 {params.beta}")

    overridden = {key for key, _ in params.overrides}
    if 'noise_w' in overridden and not params.noise_w > 0:
        errors.append(f"noise_w: 噪声功率必须为正数，当前为 {params.noise_w}")
    if 'alpha' in overridden and not math.isfinite(params.alpha):
        errors.append(f"alpha: 必须为有限数值，当前为 {params.alpha}")
    for key in ('psi_bs', 'psi_ris', 'psi_ue'):
        if key in overridden or getattr(params, key.replace('psi', 'n')) >= 1:
            psi = getattr(params, key)
            if not 0 < psi <= TWO_PI:
                errors.append(f"{key}: 主瓣宽度必须位于 (0, 2π]，当前为 {psi}")

    scenario = params.scenario
    if isinstance(scenario, SingleCell):
        if not scenario.radius_m > 0:
            errors.append(f"radius_m: 小区半径必须为正数，当前为 {scenario.radius_m}")
    else:
        if not scenario.lambda_Y >= 0:
            errors.append(f"lambda_Y: 基站密度不能为负，当前为 {scenario.lambda_Y}")
        truncation = scenario.truncation_radius_m
        if truncation is not None and not truncation > 0:
            errors.append(f"truncation_radius_m: 截断半径必须为正数，当前为 {truncation}")
        if not params.lambda_b * params.mean_blockage_length > 0 and truncation is None:
            errors.append("lambda_b: 多小区场景要求 λ_b·E[L] > 0，或显式给出 truncation_radius_m")
    return errors


def validate(params: SystemParams) -> SystemParams:
    """全部不变量成立时原样返回参数，否则抛出包含完整违规列表的 ParamsError"""
    errors = check(params)
    if errors:
        raise ParamsError(errors)
    return params


def load_params(path: str) -> SystemParams:
    """从 JSON（或 YAML）文件读取并校验参数"""
    with open(path, 'r', encoding='utf-8') as f:
        data = (json.load(f) if path.endswith('.json') else yaml.safe_load(f)) or {}
    return validate(params_from_dict(data))


def dump_params(params: SystemParams, path: str) -> None:
    """将参数写为 JSON 文件"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(params_to_dict(params), f, ensure_ascii=False, indent=2)
        f.write('\n')
