import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from channel import (LN10, LinkBudget, mean_directional_gain, sample_directional_gains, sample_small_scale,
                     sinr_direct_single, sinr_multi, sinr_reflect_single)
from geom import (Disk, LosView, Point, Scene, SegmentSet, sample_blockages, sample_ppp,
                  sample_uniform_in_disk, segments_intersect_many)
from params import MultiCell, SingleCell, SystemParams, validate
from quad import upper_incomplete_gamma

logger = logging.getLogger(__name__)

TRIAL_COLUMNS = ['trial', 'kind', 'sinr', 'distance']
DEFAULT_CHUNK = 256
Z_95 = 1.96
# 视距概率统计时每批处理的链路数
_LINK_BATCH = 10000


class AssociationKind(str, Enum):
    DIRECT = 'direct'
    REFLECTED = 'reflected'
    BLIND = 'blind'


@dataclass(frozen=True)
class AssociationOutcome:
    """关联结果：直连（bs, xi）、经 RIS 反射（bs, ris, s, r）或盲区"""
    kind: AssociationKind
    bs: Optional[Point] = None
    ris: Optional[Point] = None
    xi: Optional[float] = None
    s: Optional[float] = None
    r: Optional[float] = None

    @property
    def eta(self) -> Optional[float]:
        return self.s * self.r if self.kind is AssociationKind.REFLECTED else None

    @property
    def distance(self) -> float:
        if self.kind is AssociationKind.DIRECT:
            return self.xi
        if self.kind is AssociationKind.REFLECTED:
            return self.eta
        return math.nan

    @classmethod
    def direct(cls, bs, xi: float) -> 'AssociationOutcome':
        return cls(AssociationKind.DIRECT, bs=Point(*map(float, bs)), xi=float(xi))

    @classmethod
    def reflected(cls, bs, ris, s: float, r: float) -> 'AssociationOutcome':
        return cls(AssociationKind.REFLECTED, bs=Point(*map(float, bs)), ris=Point(*map(float, ris)),
                   s=float(s), r=float(r))

    @classmethod
    def blind(cls) -> 'AssociationOutcome':
        return cls(AssociationKind.BLIND)


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width_95: float
    n_trials: int
    n_effective: int

    @classmethod
    def from_indicators(cls, hits: np.ndarray, n_effective: Optional[int] = None) -> 'Estimate':
        """二项比例估计，半宽为 1.96 倍标准误"""
        hits = np.asarray(hits, dtype=bool)
        n = len(hits)
        if n == 0:
            return cls(math.nan, math.nan, 0, 0)
        p = float(hits.mean())
        half = Z_95 * math.sqrt(p * (1.0 - p) / n)
        return cls(p, half, n, n if n_effective is None else int(n_effective))

    @classmethod
    def from_samples(cls, values: np.ndarray, n_effective: Optional[int] = None) -> 'Estimate':
        """样本均值估计，半宽为 1.96 倍样本标准误"""
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n == 0:
            return cls(math.nan, math.nan, 0, 0)
        spread = float(values.std(ddof=1)) if n > 1 else 0.0
        return cls(float(values.mean()), Z_95 * spread / math.sqrt(n), n,
                   n if n_effective is None else int(n_effective))


class TrialRecord(NamedTuple):
    trial: int
    kind: str
    sinr: float
    distance: float


class _Links(NamedTuple):
    """典型用户视角下各基站的可达链路"""
    xi: np.ndarray
    bs_los: np.ndarray
    eta: np.ndarray
    ris_index: np.ndarray
    ris_s: np.ndarray
    ris_r: np.ndarray


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def simulation_radius(params: SystemParams) -> float:
    """多小区仿真圆盘半径：显式截断半径，否则 max(6/c, 5·r_v)"""
    scenario = params.scenario
    if not isinstance(scenario, MultiCell):
        raise ValueError("仿真截断半径仅适用于多小区场景")
    if scenario.truncation_radius_m is not None:
        return scenario.truncation_radius_m
    return max(6.0 / params.los_decay_rate, 5.0 * scenario.r_v)


def _link_table(scene: Scene, user: np.ndarray, view: LosView) -> _Links:
    bss = np.asarray(scene.bss, dtype=float).reshape(-1, 2)
    ris = np.asarray(scene.ris, dtype=float).reshape(-1, 2)
    n_bs = len(bss)
    xi = np.hypot(*(bss - user).T) if n_bs else np.empty(0)
    bs_los = view.visible(bss)
    eta = np.full(n_bs, np.inf)
    ris_index = np.full(n_bs, -1)
    ris_s = np.full(n_bs, np.nan)
    ris_r = np.full(n_bs, np.nan)
    visible_ris = np.nonzero(view.visible(ris))[0]
    nlos = np.nonzero(~bs_los)[0]
    if len(visible_ris) and len(nlos):
        r = np.hypot(*(ris[visible_ris] - user).T)
        gap = bss[nlos, None, :] - ris[None, visible_ris, :]
        s = np.hypot(gap[..., 0], gap[..., 1])
        product = s * r[None, :]
        best = np.argmin(product, axis=1)
        rows = np.arange(len(nlos))
        eta[nlos] = product[rows, best]
        ris_index[nlos] = visible_ris[best]
        ris_s[nlos] = s[rows, best]
        ris_r[nlos] = r[best]
    return _Links(xi, bs_los, eta, ris_index, ris_s, ris_r)


def _strongest(links: _Links, params: SystemParams) -> Tuple[AssociationKind, int]:
    """按时间平均接收功率选择服务基站，返回 (类型, 基站下标)"""
    with np.errstate(divide='ignore'):
        direct_score = np.where(links.bs_los, params.alpha * LN10 - params.beta * np.log(links.xi), -np.inf)
        reflect_score = np.where(np.isfinite(links.eta),
                                 2.0 * params.alpha * LN10 + 2.0 * math.log(params.n_ris)
                                 - params.beta * np.log(links.eta), -np.inf)
    if len(direct_score) == 0:
        return AssociationKind.BLIND, -1
    best_direct = int(np.argmax(direct_score))
    best_reflect = int(np.argmax(reflect_score))
    if not np.isfinite(direct_score[best_direct]) and not np.isfinite(reflect_score[best_reflect]):
        return AssociationKind.BLIND, -1
    if direct_score[best_direct] >= reflect_score[best_reflect]:
        return AssociationKind.DIRECT, best_direct
    return AssociationKind.REFLECTED, best_reflect


def associate(scene: Scene, user, params: SystemParams, view: Optional[LosView] = None) -> AssociationOutcome:
    """
    按时间平均信道增益为用户选择服务链路

    单小区：基站视距则直连，否则选视距 RIS 中 s·r 最小者，否则为盲区；
    多小区：在视距基站直连与可反射非视距基站的最强 RIS 路径之间取接收功率最大者。
    """
    user = np.asarray(user, dtype=float)
    view = view or LosView(user, scene.blockages)
    bss = np.asarray(scene.bss, dtype=float).reshape(-1, 2)
    if isinstance(params.scenario, SingleCell):
        bs = bss[0]
        if view.visible(bs[None, :])[0]:
            return AssociationOutcome.direct(bs, math.hypot(*(bs - user)))
        ris = np.asarray(scene.ris, dtype=float).reshape(-1, 2)
        candidates = ris[view.visible(ris)]
        if len(candidates) == 0:
            return AssociationOutcome.blind()
        s = np.hypot(*(candidates - bs).T)
        r = np.hypot(*(candidates - user).T)
        best = int(np.argmin(s * r))
        return AssociationOutcome.reflected(bs, candidates[best], s[best], r[best])

    links = _link_table(scene, user, view)
    kind, index = _strongest(links, params)
    if kind is AssociationKind.DIRECT:
        return AssociationOutcome.direct(bss[index], links.xi[index])
    if kind is AssociationKind.REFLECTED:
        ris = np.asarray(scene.ris, dtype=float)[links.ris_index[index]]
        return AssociationOutcome.reflected(bss[index], ris, links.ris_s[index], links.ris_r[index])
    return AssociationOutcome.blind()


def _single_cell_trial(params: SystemParams, rng: np.random.Generator) -> Tuple[AssociationKind, float, float]:
    region = Disk(Point(0.0, 0.0), params.scenario.radius_m)
    blockages = sample_blockages(params, region, rng)
    ris = sample_ppp(params.lambda_R, region, rng)
    user = sample_uniform_in_disk(1, region, rng)
    scene = Scene(region, blockages, ris, user, np.zeros((1, 2)))
    outcome = associate(scene, user[0], params)
    if outcome.kind is AssociationKind.DIRECT:
        h = sample_small_scale(params.n_bs * params.n_ue, rng)
        return outcome.kind, sinr_direct_single(outcome.xi, h, params), outcome.xi
    if outcome.kind is AssociationKind.REFLECTED:
        hs = sample_small_scale(params.n_bs * params.n_ris, rng)
        hr = sample_small_scale(params.n_ris * params.n_ue, rng)
        return outcome.kind, sinr_reflect_single(outcome.s, outcome.r, hs, hr, params), outcome.eta
    return outcome.kind, 0.0, math.nan


def _multi_cell_scene(params: SystemParams, rng: np.random.Generator) -> Scene:
    region = Disk(Point(0.0, 0.0), simulation_radius(params))
    blockages = sample_blockages(params, region, rng)
    bss = sample_ppp(params.scenario.lambda_Y, region, rng)
    ris = sample_ppp(params.lambda_R, region, rng)
    return Scene(region, blockages, ris, np.zeros((1, 2)), bss)


def _multi_cell_trial(params: SystemParams, rng: np.random.Generator) -> Tuple[AssociationKind, float, float]:
    scene = _multi_cell_scene(params, rng)
    user = np.zeros(2)
    links = _link_table(scene, user, LosView(user, scene.blockages))
    kind, index = _strongest(links, params)
    if kind is AssociationKind.BLIND:
        return kind, 0.0, math.nan

    if kind is AssociationKind.DIRECT:
        h = sample_small_scale(params.n_bs * params.n_ue, rng)
        target = LinkBudget.direct(links.xi[index], h, params)
        distance = links.xi[index]
    else:
        hs = sample_small_scale(params.n_bs * params.n_ris, rng)
        hr = sample_small_scale(params.n_ris * params.n_ue, rng)
        target = LinkBudget.reflected(links.ris_s[index], links.ris_r[index], hs, hr, params)
        distance = links.eta[index]

    others = np.arange(len(links.xi)) != index
    los_idx = np.nonzero(links.bs_los & others)[0]
    ris_idx = np.nonzero(~links.bs_los & np.isfinite(links.eta) & others)[0]
    interferers = []
    if len(los_idx):
        means = sample_directional_gains(params.n_bs, params.n_ue, params.psi_bs, params.psi_ue, rng, len(los_idx))
        interferers.append(LinkBudget.direct(links.xi[los_idx], sample_small_scale(means, rng), params))
    if len(ris_idx):
        means_s = sample_directional_gains(params.n_bs, params.n_ris, params.psi_bs, params.psi_ris, rng, len(ris_idx))
        means_r = sample_directional_gains(params.n_ris, params.n_ue, params.psi_ris, params.psi_ue, rng, len(ris_idx))
        interferers.append(LinkBudget.reflected(links.ris_s[ris_idx], links.ris_r[ris_idx],
                                                sample_small_scale(means_s, rng), sample_small_scale(means_r, rng),
                                                params))
    return kind, sinr_multi(target, interferers, params.noise_w), distance


def _simulate_chunk(params: SystemParams, seed: int, start: int, stop: int) -> List[TrialRecord]:
    trial_fn = _multi_cell_trial if params.is_multi_cell else _single_cell_trial
    records = []
    for trial in range(start, stop):
        kind, sinr, distance = trial_fn(params, _trial_rng(seed, trial))
        records.append(TrialRecord(trial, kind.value, float(sinr), float(distance)))
    return records


def _log_tail_bound(params: SystemParams):
    """截断圆盘外视距干扰的期望上界（相对噪声功率）"""
    radius = simulation_radius(params)
    c = params.los_decay_rate
    if not c > 0:
        logger.info(f"[MC]多小区截断半径 {radius:.1f} m（无遮挡，外部干扰仅按路径损耗衰减）")
        return
    mean_gain = mean_directional_gain(params.n_bs, params.n_ue, params.psi_bs, params.psi_ue)
    kernel = c ** (params.beta - 2.0) * upper_incomplete_gamma(2.0 - params.beta, c * radius)
    tail = 2.0 * math.pi * params.scenario.lambda_Y * params.p0_w * mean_gain * 10.0 ** params.alpha * kernel
    logger.info(f"[MC]多小区截断半径 {radius:.1f} m，外部视距干扰期望上界 {tail:.3e} W"
                f"（相对噪声 {tail / params.noise_w:.3e}）")


def simulate(params: SystemParams, n_trials: int, seed: int, workers: int = 1,
             chunk_size: int = DEFAULT_CHUNK) -> pd.DataFrame:
    """
    运行蒙特卡洛试验，每次试验独立采样场景、关联并计算 SINR

    Args:
        params (SystemParams): 系统参数
        n_trials (int): 试验次数
        seed (int): 主种子，第 i 次试验使用子流 (seed, i)
        workers (int): 进程数，1 表示在当前进程内运行

    Returns:
        pd.DataFrame: 每次试验一行，列为 trial、kind、sinr、distance（盲区 sinr 为 0）
    """
    params = validate(params)
    if n_trials < 1:
        raise ValueError(f"试验次数必须 ≥ 1: {n_trials}")
    if params.is_multi_cell:
        _log_tail_bound(params)
        if params.idle_bs_interfere:
            logger.info("[MC]idle_bs_interfere 对仿真无影响：无视距 RIS 的非视距基站没有到达用户的传播路径")
    chunks = [(start, min(start + chunk_size, n_trials)) for start in range(0, n_trials, chunk_size)]
    logger.info(f"[START]蒙特卡洛仿真: {n_trials} 次试验, {len(chunks)} 个分块, 进程数 {workers}")
    if workers <= 1:
        parts = [_simulate_chunk(params, seed, start, stop) for start, stop in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_simulate_chunk, params, seed, start, stop) for start, stop in chunks]
            parts = [future.result() for future in futures]
    frame = pd.DataFrame([record for part in parts for record in part], columns=TRIAL_COLUMNS)
    logger.info(f"[DONE]蒙特卡洛仿真完成: 盲区比例 {(frame['kind'] == AssociationKind.BLIND.value).mean():.4f}")
    return frame


def coverage_from_trials(frame: pd.DataFrame, gamma0_grid: Sequence[float],
                         kind: Optional[AssociationKind] = None) -> List[Estimate]:
    """各阈值下 SINR > γ0 的比例；kind 给定时只统计该关联类型的覆盖"""
    sinr = frame['sinr'].to_numpy()
    effective = int((frame['kind'] != AssociationKind.BLIND.value).sum())
    mask = np.ones(len(frame), dtype=bool) if kind is None else (frame['kind'] == kind.value).to_numpy()
    return [Estimate.from_indicators(mask & (sinr > gamma), effective) for gamma in gamma0_grid]


def rate_from_trials(frame: pd.DataFrame, bw_hz: float) -> Estimate:
    """每次试验速率 W·log2(1+SINR) 的均值"""
    effective = int((frame['kind'] != AssociationKind.BLIND.value).sum())
    return Estimate.from_samples(bw_hz * np.log2(1.0 + frame['sinr'].to_numpy()), effective)


def kind_fraction(frame: pd.DataFrame, kind: AssociationKind) -> Estimate:
    return Estimate.from_indicators((frame['kind'] == kind.value).to_numpy())


def run_coverage(params: SystemParams, gamma0_grid: Sequence[float], n_trials: int, seed: int,
                 workers: int = 1) -> List[Estimate]:
    return coverage_from_trials(simulate(params, n_trials, seed, workers), gamma0_grid)


def run_rate(params: SystemParams, n_trials: int, seed: int, workers: int = 1) -> Estimate:
    return rate_from_trials(simulate(params, n_trials, seed, workers), params.bw_hz)


def run_blind_ratio(params: SystemParams, n_trials: int, seed: int, workers: int = 1) -> Estimate:
    return kind_fraction(simulate(params, n_trials, seed, workers), AssociationKind.BLIND)


def los_frequency(params: SystemParams, lengths: Sequence[float], n_links: int, seed: int) -> pd.DataFrame:
    """
    统计各链路长度下的视距频率，并与 exp(-c·d) 比较

    每条链路独立采样遮挡场（中心落在链路外接圆扩展 len_max/2 的圆盘内）。

    Returns:
        pd.DataFrame: 列 length、n_links、los_freq、theory、sigma、z_score
    """
    rows = []
    c = params.los_decay_rate
    for index, d in enumerate(lengths):
        rng = _trial_rng(seed, index)
        region = Disk(Point(0.0, 0.0), 0.5 * d).inflated(0.5 * params.len_max)
        a = np.array([-0.5 * d, 0.0])
        b = np.array([0.5 * d, 0.0])
        visible = 0
        done = 0
        while done < n_links:
            batch = min(_LINK_BATCH, n_links - done)
            counts = rng.poisson(params.lambda_b * region.area, batch) if params.lambda_b > 0 else np.zeros(batch, int)
            total = int(counts.sum())
            owner = np.repeat(np.arange(batch), counts)
            segments = SegmentSet(sample_uniform_in_disk(total, region, rng),
                                  rng.uniform(params.len_min, params.len_max, total),
                                  rng.uniform(0.0, 2.0 * math.pi, total))
            blocked = segments_intersect_many(a, b, segments.starts, segments.ends)
            visible += int(np.sum(np.bincount(owner[blocked], minlength=batch) == 0))
            done += batch
        freq = visible / n_links
        theory = math.exp(-c * d)
        sigma = math.sqrt(theory * (1.0 - theory) / n_links)
        rows.append({'length': float(d), 'n_links': n_links, 'los_freq': freq, 'theory': theory,
                     'sigma': sigma, 'z_score': (freq - theory) / sigma if sigma > 0 else 0.0})
        logger.info(f"[CHECK]链路长度 {d:.1f} m: 视距频率 {freq:.4f}, 理论值 {theory:.4f}")
    return pd.DataFrame(rows, columns=['length', 'n_links', 'los_freq', 'theory', 'sigma', 'z_score'])


def sample_eta_given_xi(params: SystemParams, xi: float, n_scenes: int, seed: int) -> np.ndarray:
    """单小区：用户位于 (ξ, 0) 时视距 RIS 的最小距离积 s·r，无视距 RIS 时为 inf"""
    radius = params.scenario.radius_m
    region = Disk(Point(0.0, 0.0), radius)
    user = np.array([xi, 0.0])
    out = np.full(n_scenes, np.inf)
    for scene_index in range(n_scenes):
        rng = _trial_rng(seed, scene_index)
        blockages = sample_blockages(params, region, rng)
        ris = sample_ppp(params.lambda_R, region, rng)
        visible = ris[LosView(user, blockages).visible(ris)]
        if len(visible):
            out[scene_index] = float(np.min(np.hypot(*visible.T) * np.hypot(*(visible - user).T)))
    return out


def sample_eta0_greedy(params: SystemParams, n_scenes: int, seed: int) -> np.ndarray:
    """多小区：最近视距 RIS 距离 r0 乘以该 RIS 到最近非视距基站的距离 s0，缺失时为 inf"""
    out = np.full(n_scenes, np.inf)
    user = np.zeros(2)
    for scene_index in range(n_scenes):
        scene = _multi_cell_scene(params, _trial_rng(seed, scene_index))
        view = LosView(user, scene.blockages)
        ris = scene.ris[view.visible(scene.ris)]
        nlos = scene.bss[~view.visible(scene.bss)]
        if len(ris) == 0 or len(nlos) == 0:
            continue
        r = np.hypot(*ris.T)
        nearest = ris[int(np.argmin(r))]
        out[scene_index] = float(r.min() * np.min(np.hypot(*(nlos - nearest).T)))
    return out


def sample_nearest_los_bs(params: SystemParams, n_scenes: int, seed: int) -> np.ndarray:
    """多小区：最近视距基站距离，缺失时为 inf"""
    out = np.full(n_scenes, np.inf)
    user = np.zeros(2)
    for scene_index in range(n_scenes):
        scene = _multi_cell_scene(params, _trial_rng(seed, scene_index))
        los = scene.bss[LosView(user, scene.blockages).visible(scene.bss)]
        if len(los):
            out[scene_index] = float(np.min(np.hypot(*los.T)))
    return out


def sup_distance(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """
    经验分布与（子）分布函数的上确界距离；样本中的 inf 计入总数但不落在任何有限 x 上
    """
    samples = np.asarray(samples, dtype=float)
    n = len(samples)
    finite = np.sort(samples[np.isfinite(samples)])
    if len(finite) == 0:
        return 0.0 if n == 0 else float(np.max(np.abs(np.asarray(cdf(np.array([1e12]))))))
    model = np.asarray(cdf(finite), dtype=float)
    steps = np.arange(1, len(finite) + 1) / n
    return float(max(np.max(np.abs(steps - model)), np.max(np.abs(steps - 1.0 / n - model))))
