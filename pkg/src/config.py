import copy
import json
import logging
import os
import re
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Tuple

import yaml

from experiment import ExperimentSpec
from params import ParamsError, SystemParams, params_from_dict, params_to_dict
from quad import QuadSpec

logger = logging.getLogger(__name__)

_KEY_PATTERN = re.compile(r'^([A-Za-z_][A-Za-z0-9_]*)')
# 扫描点违规项 "sweep_values[v]: beta: ..." 定位到内层字段所在行
_SWEEP_PATTERN = re.compile(r'^sweep_values\[[^\]]*\]: ([A-Za-z_][A-Za-z0-9_]*):')


class ConfigError(ValueError):
    """配置文件解析或校验失败，每条违规项尽量附带所在行号"""

    def __init__(self, violations: List[str], path: str = ''):
        self.violations = list(violations)
        self.path = path
        prefix = f"{path}: " if path else ''
        super().__init__(prefix + "; ".join(self.violations))


class ExperimentConfig:
    DEFAULT_CONFIG: Dict[str, Any] = {
        'experiment': {
            'name': 'default',
            'description': '单小区覆盖概率随 RIS 密度变化',
            'mode': 'analytic',
            'sweep_param': 'lambda_R',
            'sweep_values': [0.0, 1.59e-4, 9.55e-4],
            'gamma0_grid_db': [-10.0, -5.0, 0.0, 5.0, 10.0],
            'metrics': ['coverage', 'P_Ad', 'P_AI', 'blind_ratio'],
            'output_path': 'results',
            'threads': 1,
            'probability_slack': 0.02,
            'rate_slack': 0.03,
        },
        'system': params_to_dict(SystemParams()),
        'quadrature': asdict(QuadSpec()),
        'montecarlo': {
            'n_trials': 1000,
            'seed': 2024,
            'workers': 1,
        },
    }

    def __init__(self, config_path: str = "config/config.yaml", create_if_missing: bool = False) -> None:
        """
        初始化实验配置

        Args:
            config_path (str): 配置文件路径（YAML 或 JSON）
            create_if_missing (bool): 文件不存在时写出默认配置，否则抛出 ConfigError
        """
        self.config_path = config_path
        self.create_if_missing = create_if_missing
        self._text = ''
        self._load_config()

    def _load_config(self) -> None:
        """从 YAML 文件加载配置"""
        if not os.path.exists(self.config_path):
            if not self.create_if_missing:
                raise ConfigError(["配置文件不存在"], self.config_path)
            logger.info(f"配置文件不存在，写出默认配置: {self.config_path}")
            self._apply_config(copy.deepcopy(self.DEFAULT_CONFIG))
            self.save_config()
            return
        with open(self.config_path, 'r', encoding='utf-8') as f:
            self._text = f.read()
        try:
            if self.config_path.endswith('.json'):
                config = json.loads(self._text) or {}
            else:
                config = yaml.safe_load(self._text) or {}
        except json.JSONDecodeError as e:
            raise ConfigError([f"第 {e.lineno} 行: JSON 解析失败: {e.msg}"], self.config_path)
        except yaml.YAMLError as e:
            mark = getattr(e, 'problem_mark', None)
            where = f"第 {mark.line + 1} 行: " if mark is not None else ''
            raise ConfigError([f"{where}YAML 解析失败: {getattr(e, 'problem', None) or e}"], self.config_path)
        if not isinstance(config, dict):
            raise ConfigError(["第 1 行: 配置文件顶层必须为映射"], self.config_path)
        self._apply_config(config)

    def _ensure_config_dir(self) -> None:
        config_dir = os.path.dirname(self.config_path)
        if config_dir:
            os.makedirs(config_dir, exist_ok=True)

    def _section(self, config: Dict[str, Any], name: str) -> Dict[str, Any]:
        section = config.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError([self._with_line(f"{name}: 必须为映射")], self.config_path)
        return section

    def _apply_config(self, config: Dict[str, Any]) -> None:
        """应用配置参数到实例属性，缺省项取默认值"""
        unknown = sorted(set(config) - set(self.DEFAULT_CONFIG))
        if unknown:
            raise ConfigError([self._with_line(f"{key}: 未知的配置段") for key in unknown], self.config_path)

        experiment = self._section(config, 'experiment')
        default_experiment = self.DEFAULT_CONFIG['experiment']
        self.name: str = str(experiment.get('name', default_experiment['name']))
        self.description: str = str(experiment.get('description', default_experiment['description']))
        self.mode: str = experiment.get('mode', default_experiment['mode'])
        self.sweep_param: str = experiment.get('sweep_param', default_experiment['sweep_param'])
        self.sweep_values: List[float] = experiment.get('sweep_values', default_experiment['sweep_values'])
        self.gamma0_grid_db: List[float] = experiment.get('gamma0_grid_db', default_experiment['gamma0_grid_db'])
        self.metrics: List[str] = experiment.get('metrics', default_experiment['metrics'])
        self.output_path: str = experiment.get('output_path', default_experiment['output_path'])
        self.threads: int = experiment.get('threads', default_experiment['threads'])
        self.probability_slack: float = experiment.get('probability_slack', default_experiment['probability_slack'])
        self.rate_slack: float = experiment.get('rate_slack', default_experiment['rate_slack'])

        self.system: Dict[str, Any] = dict(self._section(config, 'system'))

        quadrature = self._section(config, 'quadrature')
        self.quadrature: Dict[str, Any] = {**self.DEFAULT_CONFIG['quadrature'], **quadrature}

        montecarlo = self._section(config, 'montecarlo')
        default_mc = self.DEFAULT_CONFIG['montecarlo']
        self.n_trials: int = montecarlo.get('n_trials', default_mc['n_trials'])
        self.seed: int = montecarlo.get('seed', default_mc['seed'])
        self.workers: int = montecarlo.get('workers', default_mc['workers'])

    def save_config(self) -> None:
        """保存当前配置到文件"""
        config = {
            'experiment': {
                'name': self.name,
                'description': self.description,
                'mode': self.mode,
                'sweep_param': self.sweep_param,
                'sweep_values': list(self.sweep_values),
                'gamma0_grid_db': list(self.gamma0_grid_db),
                'metrics': list(self.metrics),
                'output_path': self.output_path,
                'threads': self.threads,
                'probability_slack': self.probability_slack,
                'rate_slack': self.rate_slack,
            },
            'system': self.system,
            'quadrature': self.quadrature,
            'montecarlo': {
                'n_trials': self.n_trials,
                'seed': self.seed,
                'workers': self.workers,
            },
        }
        self._ensure_config_dir()
        with open(self.config_path, 'w', encoding='utf-8') as f:
            yaml.dump(config, f, allow_unicode=True, default_flow_style=False, sort_keys=False)

    def _key_lines(self) -> Dict[str, int]:
        """配置文本中每个键首次出现的行号（从 1 开始）"""
        lines: Dict[str, int] = {}
        if not self._text:
            return lines
        try:
            root = yaml.compose(self._text)
        except yaml.YAMLError:
            return lines
        stack = [root] if root is not None else []
        while stack:
            node = stack.pop()
            if isinstance(node, yaml.MappingNode):
                for key, value in node.value:
                    if isinstance(key, yaml.ScalarNode):
                        line = key.start_mark.line + 1
                        lines[key.value] = min(line, lines.get(key.value, line))
                    stack.append(value)
            elif isinstance(node, yaml.SequenceNode):
                stack.extend(node.value)
        return lines

    def _with_line(self, violation: str, lines: Optional[Dict[str, int]] = None) -> str:
        lines = self._key_lines() if lines is None else lines
        for pattern in (_SWEEP_PATTERN, _KEY_PATTERN):
            match = pattern.match(violation)
            if match and match.group(1) in lines:
                return f"第 {lines[match.group(1)]} 行: {violation}"
        return violation

    def _fail(self, violations: List[str]) -> ConfigError:
        lines = self._key_lines()
        return ConfigError([self._with_line(item, lines) for item in violations], self.config_path)

    def _build_quad(self) -> QuadSpec:
        unknown = sorted(set(self.quadrature) - set(self.DEFAULT_CONFIG['quadrature']))
        if unknown:
            raise self._fail([f"{key}: 未知的积分参数" for key in unknown])
        try:
            return QuadSpec(**self.quadrature)
        except (TypeError, ValueError) as e:
            raise self._fail(str(e).split("; "))

    def _numbers(self, key: str, values: Any) -> Tuple[float, ...]:
        if isinstance(values, (int, float)) and not isinstance(values, bool):
            values = [values]
        if not isinstance(values, list):
            raise self._fail([f"{key}: 必须为数值列表，当前为 {values!r}"])
        try:
            return tuple(float(v) for v in values)
        except (TypeError, ValueError):
            raise self._fail([f"{key}: 必须为数值列表，当前为 {values!r}"])

    def _integer(self, key: str, value: Any) -> int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not float(value).is_integer():
            raise self._fail([f"{key}: 必须为整数，当前为 {value!r}"])
        return int(value)

    def to_spec(self, mode: Optional[str] = None, seed: Optional[int] = None, n_trials: Optional[int] = None,
                output_path: Optional[str] = None, workers: Optional[int] = None,
                threads: Optional[int] = None) -> ExperimentSpec:
        """
        构建并校验实验描述，命令行给出的参数优先于配置文件

        Raises:
            ConfigError: 任一参数非法，违规项附带所在行号
        """
        try:
            base = params_from_dict(self.system)
        except ParamsError as e:
            raise self._fail(e.violations)
        metrics = [self.metrics] if isinstance(self.metrics, str) else self.metrics
        spec = ExperimentSpec(
            name=self.name,
            base_params=base,
            sweep_param=str(self.sweep_param),
            sweep_values=self._numbers('sweep_values', self.sweep_values),
            gamma0_grid_db=self._numbers('gamma0_grid_db', self.gamma0_grid_db),
            mode=mode or self.mode,
            metrics=tuple(str(m) for m in metrics),
            n_trials=self._integer('n_trials', self.n_trials if n_trials is None else n_trials),
            seed=self._integer('seed', self.seed if seed is None else seed),
            output_path=output_path or str(self.output_path),
            quad=self._build_quad(),
            workers=self._integer('workers', self.workers if workers is None else workers),
            threads=self._integer('threads', self.threads if threads is None else threads),
            probability_slack=self._numbers('probability_slack', self.probability_slack)[0],
            rate_slack=self._numbers('rate_slack', self.rate_slack)[0],
            description=self.description,
        )
        errors = spec.check()
        if errors:
            raise self._fail(errors)
        return spec


def list_presets(preset_dir: str = "config/presets") -> List[Tuple[str, str]]:
    """预设目录下全部配置的 (名称, 描述)，按文件名排序"""
    presets = []
    if not os.path.isdir(preset_dir):
        return presets
    for file_name in sorted(os.listdir(preset_dir)):
        stem, ext = os.path.splitext(file_name)
        if ext not in ('.yaml', '.yml', '.json'):
            continue
        try:
            config = ExperimentConfig(os.path.join(preset_dir, file_name))
            presets.append((stem, config.description))
        except ConfigError as e:
            logger.warning(f"预设 {file_name} 无法解析: {e}")
    return presets
