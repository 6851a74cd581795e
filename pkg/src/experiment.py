import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from logger_config import log_banner
from mc_sim import AssociationKind, Estimate, coverage_from_trials, kind_fraction, rate_from_trials, simulate
from multi_cell_analysis import MultiCellContext
from params import DERIVED_FIELDS, ParamsError, SingleCell, SystemParams, check, params_to_dict
from quad import DEFAULT_QUAD, QuadSpec
from result_writer import ResultSchema
from single_cell_analysis import SingleCellContext

MODES: Tuple[str, ...] = ('analytic', 'montecarlo', 'both')
COVERAGE_METRICS: Tuple[str, ...] = ('coverage', 'coverage_direct', 'coverage_reflected')
ASSOCIATION_METRICS: Tuple[str, ...] = ('P_Ad', 'P_AI', 'blind_ratio')
PROBABILITY_METRICS: Tuple[str, ...] = COVERAGE_METRICS + ASSOCIATION_METRICS
METRICS: Tuple[str, ...] = PROBABILITY_METRICS + ('rate',)
_MULTI_ONLY_KEYS = ('lambda_Y', 'r_v', 'truncation_radius_m')


def db_to_linear(value_db):
    """dB 转线性功率比"""
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def _sweepable_keys(params: SystemParams) -> Tuple[str, ...]:
    base = tuple(key for key in params_to_dict(params) if key not in ('scenario', 'idle_bs_interfere'))
    scenario = ('radius_m',) if isinstance(params.scenario, SingleCell) else _MULTI_ONLY_KEYS
    return base + tuple(key for key in DERIVED_FIELDS if key not in base) + scenario


@dataclass(frozen=True)
class ExperimentSpec:
    """
    一次实验的完整描述：基准参数、扫描参数及取值、SINR 阈值网格、引擎模式与指标

    sweep_param 可以是 SystemParams 字段、推导字段（alpha、noise_w、psi_*）或场景字段
    （radius_m、lambda_Y、r_v、truncation_radius_m）。
    """
    name: str
    base_params: SystemParams
    sweep_param: str
    sweep_values: Tuple[float, ...]
    gamma0_grid_db: Tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    mode: str = 'analytic'
    metrics: Tuple[str, ...] = ('coverage',)
    n_trials: int = 1000
    seed: int = 0
    output_path: str = 'results'
    quad: QuadSpec = field(default_factory=lambda: DEFAULT_QUAD)
    workers: int = 1
    threads: int = 1
    probability_slack: float = 0.02
    rate_slack: float = 0.03
    description: str = ''

    @property
    def runs_analytic(self) -> bool:
        return self.mode in ('analytic', 'both')

    @property
    def runs_montecarlo(self) -> bool:
        return self.mode in ('montecarlo', 'both')

    def params_at(self, value: float) -> SystemParams:
        """基准参数在扫描值处的实例"""
        return self.base_params.with_updates(**{self.sweep_param: value})

    def check(self) -> List[str]:
        """返回全部违规项（空列表表示合法）"""
        errors: List[str] = []
        if self.mode not in MODES:
            errors.append(f"mode: 只能为 {', '.join(MODES)}，当前为 {self.mode!r}")
        if not self.sweep_values:
            errors.append("sweep_values: 扫描取值不能为空")
        if not self.metrics:
            errors.append("metrics: 指标列表不能为空")
        for metric in self.metrics:
            if metric not in METRICS:
                errors.append(f"metrics: 未知指标 {metric!r}，可选 {', '.join(METRICS)}")
        if any(metric in COVERAGE_METRICS for metric in self.metrics) and not self.gamma0_grid_db:
            errors.append("gamma0_grid_db: 覆盖指标需要非空的阈值网格")
        for value in self.gamma0_grid_db:
            if not math.isfinite(value):
                errors.append(f"gamma0_grid_db: 阈值必须为有限数值，当前为 {value}")
        if self.runs_montecarlo and self.n_trials < 1:
            errors.append(f"n_trials: 试验次数必须 ≥ 1，当前为 {self.n_trials}")
        if self.workers < 1:
            errors.append(f"workers: 进程数必须 ≥ 1，当前为 {self.workers}")
        if self.threads < 1:
            errors.append(f"threads: 线程数必须 ≥ 1，当前为 {self.threads}")
        if self.probability_slack < 0 or self.rate_slack < 0:
            errors.append("agreement_slack: 一致性容差不能为负")
        if self.sweep_param not in _sweepable_keys(self.base_params):
            errors.append(f"sweep_param: 不可扫描的参数 {self.sweep_param!r}")
            return errors

        for value in self.sweep_values:
            try:
                params = self.params_at(value)
            except ParamsError as e:
                errors.extend(f"sweep_values[{value}]: {item}" for item in e.violations)
                continue
            errors.extend(f"sweep_values[{value}]: {item}" for item in check(params))
            if self.runs_analytic and params.is_multi_cell:
                if not params.scenario.lambda_Y > 0:
                    errors.append(f"sweep_values[{value}]: 多小区解析要求 lambda_Y > 0")
                if not params.los_decay_rate > 0:
                    errors.append(f"sweep_values[{value}]: 多小区解析要求 λ_b·E[L] > 0")
        return errors

    def validate(self) -> 'ExperimentSpec':
        errors = self.check()
        if errors:
            raise ParamsError(errors)
        return self


class ResultRow(NamedTuple):
    sweep_value: float
    metric: str
    gamma0_db: float
    analytic: float
    mc_mean: float
    mc_half_width: float
    engines_agree: Optional[bool]
    converged: bool


class _PointResult(NamedTuple):
    analytic: Dict[str, np.ndarray]
    estimates: Dict[str, List[Estimate]]
    converged: bool


def engines_agree(metric: str, analytic: float, estimate: Optional[Estimate],
                  probability_slack: float, rate_slack: float) -> Optional[bool]:
    """|解析 - 仿真| ≤ 仿真半宽 + 容差；只运行了一个引擎时返回 None"""
    if estimate is None or not math.isfinite(analytic) or not math.isfinite(estimate.mean):
        return None
    slack = rate_slack * abs(analytic) if metric == 'rate' else probability_slack
    return bool(abs(analytic - estimate.mean) <= estimate.half_width_95 + slack)


class ExperimentRunner:
    """
    实验执行器：扫描点并行运行解析/仿真引擎，结果按扫描顺序汇总

    Args:
        spec (ExperimentSpec): 已校验的实验描述
    """

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec.validate()
        self.gamma_linear = db_to_linear(spec.gamma0_grid_db)
        self.results: List[Tuple[int, List[ResultRow]]] = []
        self.results_lock = threading.Lock()
        self.logger = logging.getLogger(__name__)
        self._log_config()

    def _log_config(self):
        spec = self.spec
        log_banner(self.logger, f"实验配置 {spec.name}", [
            ("描述", spec.description or '-'),
            ("模式", spec.mode),
            ("场景", 'multi' if spec.base_params.is_multi_cell else 'single'),
            ("扫描参数", f"{spec.sweep_param} = {list(spec.sweep_values)}"),
            ("SINR 阈值 (dB)", list(spec.gamma0_grid_db)),
            ("指标", list(spec.metrics)),
            ("试验次数", spec.n_trials if spec.runs_montecarlo else '-'),
            ("随机种子", spec.seed),
            ("线程数/进程数", f"{spec.threads}/{spec.workers}"),
        ])

    def run(self) -> pd.DataFrame:
        """运行全部扫描点，返回按 (扫描值, 指标, γ0) 排列的结果表"""
        self.logger.info(f"[START]开始实验 {self.spec.name}")
        self.results = []
        self._execute_tasks(self._generate_tasks())
        ordered = [row for _, rows in sorted(self.results, key=lambda item: item[0]) for row in rows]
        table = ResultSchema.normalize(pd.DataFrame(ordered, columns=ResultSchema.COLUMNS))
        failed = int((~table['converged']).sum())
        self.logger.info(f"[DONE]实验 {self.spec.name} 完成: {len(table)} 行结果，未收敛 {failed} 行")
        return table

    def _generate_tasks(self) -> List[Tuple[int, float]]:
        return list(enumerate(self.spec.sweep_values))

    def _execute_tasks(self, tasks: List[Tuple[int, float]]):
        """多线程执行全部扫描点，任一扫描点失败时记录并抛出"""
        with ThreadPoolExecutor(max_workers=self.spec.threads) as executor:
            futures = {executor.submit(self._run_sweep_point, index, value): value for index, value in tasks}
            for future in as_completed(futures):
                try:
                    future.result()
                except Exception as e:
                    self.logger.error(f"扫描点 {self.spec.sweep_param}={futures[future]} 执行失败: {str(e)}",
                                      exc_info=True)
                    raise

    def _run_sweep_point(self, index: int, value: float):
        spec = self.spec
        self.logger.info(f"[START]扫描点 {spec.sweep_param}={value}")
        params = spec.params_at(value)
        analytic: Dict[str, np.ndarray] = {}
        estimates: Dict[str, List[Estimate]] = {}
        converged = True
        if spec.runs_analytic:
            analytic, converged = self._analytic_metrics(params)
        if spec.runs_montecarlo:
            estimates = self._mc_metrics(params)
        rows = self._build_rows(value, _PointResult(analytic, estimates, converged))
        with self.results_lock:
            self.results.append((index, rows))
        self.logger.info(f"[DONE]扫描点 {spec.sweep_param}={value}")

    def _analytic_metrics(self, params: SystemParams) -> Tuple[Dict[str, np.ndarray], bool]:
        """解析引擎在一个扫描点上的全部指标；收敛标志覆盖该点的所有积分"""
        wanted = set(self.spec.metrics)
        if params.is_multi_cell:
            context = MultiCellContext(params, self.spec.quad)
            assoc, split, rate = context.assoc_probs_multi, context.coverage_split_multi, context.rate_multi
        else:
            context = SingleCellContext(params, self.spec.quad)
            assoc, split, rate = (context.ergodic_assoc_single, context.coverage_split_single,
                                  context.achievable_rate_single)
        values: Dict[str, np.ndarray] = {}
        if wanted & set(ASSOCIATION_METRICS):
            p_ad, p_ai, p_blind = assoc()
            values.update(P_Ad=np.array([p_ad]), P_AI=np.array([p_ai]), blind_ratio=np.array([p_blind]))
        if wanted & set(COVERAGE_METRICS):
            direct, reflected = split(self.gamma_linear)
            values.update(coverage=np.asarray(direct + reflected), coverage_direct=np.asarray(direct),
                          coverage_reflected=np.asarray(reflected))
        if 'rate' in wanted:
            values['rate'] = np.array([rate()])
        for item in context.diagnostics:
            self.logger.warning(f"[QUAD]积分未收敛: {item}")
        return values, not context.diagnostics

    def _mc_metrics(self, params: SystemParams) -> Dict[str, List[Estimate]]:
        """蒙特卡洛引擎在一个扫描点上的全部指标（各指标共用同一组试验）"""
        spec = self.spec
        frame = simulate(params, spec.n_trials, spec.seed, spec.workers)
        gamma = list(self.gamma_linear)
        estimates = {
            'coverage': coverage_from_trials(frame, gamma),
            'coverage_direct': coverage_from_trials(frame, gamma, AssociationKind.DIRECT),
            'coverage_reflected': coverage_from_trials(frame, gamma, AssociationKind.REFLECTED),
            'P_Ad': [kind_fraction(frame, AssociationKind.DIRECT)],
            'P_AI': [kind_fraction(frame, AssociationKind.REFLECTED)],
            'blind_ratio': [kind_fraction(frame, AssociationKind.BLIND)],
            'rate': [rate_from_trials(frame, params.bw_hz)],
        }
        return {metric: estimates[metric] for metric in spec.metrics}

    def _build_rows(self, value: float, point: _PointResult) -> List[ResultRow]:
        spec = self.spec
        rows: List[ResultRow] = []
        for metric in spec.metrics:
            gammas: Sequence[float] = spec.gamma0_grid_db if metric in COVERAGE_METRICS else (math.nan,)
            for i, gamma_db in enumerate(gammas):
                analytic = float(point.analytic[metric][i]) if metric in point.analytic else math.nan
                estimate = point.estimates[metric][i] if metric in point.estimates else None
                rows.append(ResultRow(
                    sweep_value=float(value),
                    metric=metric,
                    gamma0_db=float(gamma_db),
                    analytic=analytic,
                    mc_mean=estimate.mean if estimate else math.nan,
                    mc_half_width=estimate.half_width_95 if estimate else math.nan,
                    engines_agree=engines_agree(metric, analytic, estimate,
                                                spec.probability_slack, spec.rate_slack),
                    converged=point.converged,
                ))
        return rows


def run_experiment(spec: ExperimentSpec) -> pd.DataFrame:
    """运行实验并返回结果表，每个 (扫描值, 指标, γ0) 一行"""
    return ExperimentRunner(spec).run()


def _relative_change(values: pd.Series) -> pd.Series:
    base = values.iloc[0]
    if not math.isfinite(base) or base == 0:
        return pd.Series(math.nan, index=values.index)
    return (values - base) / abs(base)


def summarize_gains(table: pd.DataFrame) -> pd.DataFrame:
    """
    每个指标相对第一个扫描值的变化比例（解析与仿真分别计算）

    Returns:
        pd.DataFrame: 列为 sweep_value、metric、gamma0_db、analytic_gain、mc_gain
    """
    logger = logging.getLogger(__name__)
    columns = ['sweep_value', 'metric', 'gamma0_db', 'analytic_gain', 'mc_gain']
    if table.empty:
        return pd.DataFrame(columns=columns)
    parts = []
    for (metric, gamma_db), group in table.groupby(['metric', 'gamma0_db'], sort=False, dropna=False):
        group = group.sort_values('sweep_value', kind='stable')
        parts.append(pd.DataFrame({
            'sweep_value': group['sweep_value'].to_numpy(),
            'metric': metric,
            'gamma0_db': gamma_db,
            'analytic_gain': _relative_change(group['analytic']).to_numpy(),
            'mc_gain': _relative_change(group['mc_mean']).to_numpy(),
        }))
    gains = pd.concat(parts, ignore_index=True)[columns]
    for row in gains.itertuples(index=False):
        at = '' if math.isnan(row.gamma0_db) else f" @ {row.gamma0_db:g} dB"
        logger.info(f"[GAIN]{row.metric}{at}, 扫描值 {row.sweep_value:g}: "
                    f"解析 {row.analytic_gain:+.2%}, 仿真 {row.mc_gain:+.2%}")
    return gains
