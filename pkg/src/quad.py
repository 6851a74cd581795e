import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Iterable, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, special

logger = logging.getLogger(__name__)

# 误差估计满足容差的若干倍以内时，舍入告警不视为未收敛
_ROUNDOFF_SLACK = 10.0
# 反常积分尾部扩展的最大次数
_MAX_TAIL_EXTENSIONS = 8


class DivergentIntegralError(ValueError):
    """衰减率非正时反常积分发散"""


@dataclass(frozen=True)
class QuadSpec:
    """
    数值积分配置

    Args:
        rel_tol / abs_tol: 相对/绝对容差
        max_depth: 自适应细分的子区间上限
        truncation_factor: 反常积分截断在 truncation_factor 个衰减长度处
        excluded_radius: 干扰积分在原点附近的排除半径，单位 m
        panel_nodes: 固定规则每个分段的节点数
        radial_nodes: 单小区用户距离 ξ 的 Gauss-Legendre 节点数
        grid_points: 分布函数表的对数网格点数
    """
    rel_tol: float = 1e-6
    abs_tol: float = 1e-10
    max_depth: int = 200
    truncation_factor: float = 40.0
    excluded_radius: float = 0.5
    panel_nodes: int = 16
    radial_nodes: int = 48
    grid_points: int = 400

    def __post_init__(self):
        problems = []
        if not self.rel_tol > 0:
            problems.append(f"rel_tol: 必须为正数，当前为 {self.rel_tol}")
        if not self.abs_tol > 0:
            problems.append(f"abs_tol: 必须为正数，当前为 {self.abs_tol}")
        if self.max_depth < 1:
            problems.append(f"max_depth: 必须 ≥ 1，当前为 {self.max_depth}")
        if not self.truncation_factor > 0:
            problems.append(f"truncation_factor: 必须为正数，当前为 {self.truncation_factor}")
        if not self.excluded_radius > 0:
            problems.append(f"excluded_radius: 必须为正数，当前为 {self.excluded_radius}")
        for key in ('panel_nodes', 'radial_nodes', 'grid_points'):
            if getattr(self, key) < 2:
                problems.append(f"{key}: 必须 ≥ 2，当前为 {getattr(self, key)}")
        if problems:
            raise ValueError("; ".join(problems))

    def scaled(self, factor: float) -> 'QuadSpec':
        """绝对容差按被积量的量纲缩放"""
        return replace(self, abs_tol=self.abs_tol * factor)


DEFAULT_QUAD = QuadSpec()


class QuadResult(NamedTuple):
    value: float
    error: float
    converged: bool


def integrate_1d(f: Callable[[float], float], a: float, b: float, spec: Optional[QuadSpec] = None,
                 points: Optional[Iterable[float]] = None) -> QuadResult:
    """
    一维自适应 Gauss-Kronrod 积分

    Args:
        f: 被积函数
        a, b: 积分区间，要求 a ≤ b
        spec (QuadSpec): 容差配置
        points: 被积函数的拐点/间断点，区间内部的点作为细分断点

    Returns:
        QuadResult: 积分值、误差估计与收敛标记
    """
    spec = spec or DEFAULT_QUAD
    a = float(a)
    b = float(b)
    if not b >= a:
        raise ValueError(f"积分区间非法: [{a}, {b}]")
    if a == b:
        return QuadResult(0.0, 0.0, True)
    kwargs = {}
    if points is not None:
        inner = sorted({float(p) for p in points if a < p < b})
        if inner:
            kwargs['points'] = inner
    out = integrate.quad(f, a, b, epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                         limit=spec.max_depth, full_output=1, **kwargs)
    value, error = float(out[0]), float(out[1])
    tolerance = max(spec.abs_tol, spec.rel_tol * abs(value))
    converged = math.isfinite(value) and (len(out) == 3 or error <= _ROUNDOFF_SLACK * tolerance)
    if not converged:
        logger.warning(f"[QUAD]积分未收敛: 区间[{a:.6g}, {b:.6g}], 积分值 {value:.6g}, 误差估计 {error:.3g}")
    return QuadResult(value, error, converged)


def integrate_improper(f: Callable[[float], float], c: float, spec: Optional[QuadSpec] = None,
                       lower: float = 0.0) -> QuadResult:
    """
    [lower, ∞) 上的反常积分，被积函数以 e^{-c·x} 衰减

    先积分到 lower + truncation_factor/c，再以 |f(上限)|/c 估计尾部质量；
    尾部超过 abs_tol 时按同样长度继续向外扩展。

    Raises:
        DivergentIntegralError: c ≤ 0
    """
    spec = spec or DEFAULT_QUAD
    if not c > 0:
        raise DivergentIntegralError(f"衰减率 c={c} 非正，反常积分发散")
    span = spec.truncation_factor / c
    upper = lower + span
    value, error, converged = integrate_1d(f, lower, upper, spec)
    tail = abs(float(f(upper))) / c
    extensions = 0
    while tail > spec.abs_tol:
        if extensions >= _MAX_TAIL_EXTENSIONS:
            converged = False
            logger.warning(f"[QUAD]反常积分尾部未衰减: 上限 {upper:.6g}, 尾部估计 {tail:.3g}")
            break
        extra = integrate_1d(f, upper, upper + span, spec)
        value += extra.value
        error += extra.error
        converged = converged and extra.converged
        upper += span
        tail = abs(float(f(upper))) / c
        extensions += 1
    return QuadResult(value, error + tail, converged)


def integrate_2d(f: Callable[[float, float], float], a: float, b: float,
                 inner_bounds: Callable[[float], Tuple[float, float]], spec: Optional[QuadSpec] = None,
                 points: Optional[Iterable[float]] = None,
                 inner_points: Optional[Callable[[float], Iterable[float]]] = None) -> QuadResult:
    """
    二重积分 ∫_a^b ∫_{lo(x)}^{hi(x)} f(x, y) dy dx，内层上下限由外层变量决定
    """
    flags = []

    def outer(x):
        lo, hi = inner_bounds(x)
        if not hi > lo:
            return 0.0
        res = integrate_1d(lambda y: f(x, y), lo, hi, spec, inner_points(x) if inner_points else None)
        flags.append(res.converged)
        return res.value

    res = integrate_1d(outer, a, b, spec, points)
    return QuadResult(res.value, res.error, res.converged and all(flags))


def integrate_3d(f: Callable[[float, float, float], float], a: float, b: float,
                 mid_bounds: Callable[[float], Tuple[float, float]],
                 inner_bounds: Callable[[float, float], Tuple[float, float]],
                 spec: Optional[QuadSpec] = None) -> QuadResult:
    """三重积分，中层上下限依赖外层变量，内层上下限依赖外层与中层变量"""
    flags = []

    def outer(x):
        lo, hi = mid_bounds(x)
        if not hi > lo:
            return 0.0
        res = integrate_2d(lambda y, z: f(x, y, z), lo, hi, lambda y: inner_bounds(x, y), spec)
        flags.append(res.converged)
        return res.value

    res = integrate_1d(outer, a, b, spec)
    return QuadResult(res.value, res.error, res.converged and all(flags))


@lru_cache(maxsize=32)
def _legendre(n: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(a, b, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    [a, b] 上的 n 点 Gauss-Legendre 节点与权重；a、b 可为数组，结果末维为节点维
    """
    t, w = _legendre(int(n))
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * t, half * w


def cosine_gauss(a, b, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    代换 x = m - h·cos(u) 后在 u ∈ [0, π] 上做 Gauss-Legendre，
    吸收区间端点处的平方根型奇异（如截断 arccos 窗口）
    """
    u, wu = gauss_legendre(0.0, math.pi, n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    return mid - half * np.cos(u), wu * half * np.sin(u)


def composite_gauss(edges, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """按分段边界拼接的复合 Gauss-Legendre 规则，返回展平的节点与权重"""
    edges = np.asarray(edges, dtype=float)
    nodes, weights = gauss_legendre(edges[:-1], edges[1:], n)
    return nodes.ravel(), weights.ravel()


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    if not 0 < lo < hi:
        raise ValueError(f"对数网格范围非法: [{lo}, {hi}]")
    return np.geomspace(lo, hi, n)


def trapezoid_weights(u: np.ndarray) -> np.ndarray:
    """非均匀网格上的梯形积分权重"""
    u = np.asarray(u, dtype=float)
    weights = np.zeros_like(u)
    step = np.diff(u)
    weights[1:] += 0.5 * step
    weights[:-1] += 0.5 * step
    return weights


def exp_radial_moment(a, c: float):
    """∫_0^a e^{-c·r}·r dr 的闭式值；c = 0 时为 a²/2"""
    a = np.asarray(a, dtype=float)
    if c == 0:
        return 0.5 * a * a
    y = c * a
    return (-np.expm1(-y) - y * np.exp(-y)) / (c * c)


@dataclass(frozen=True, eq=False)
class LogGridTable:
    """
    对数网格上的单调函数表，按 ln x 分段线性插值

    x ≤ 0 处取 0；低于网格下限取首值，高于上限取末值（饱和值）。
    """
    x: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if x.ndim != 1 or x.shape != values.shape[-1:] or len(x) < 2:
            raise ValueError("函数表的网格与取值维度不一致")
        if np.any(x <= 0) or np.any(np.diff(x) <= 0):
            raise ValueError("函数表网格必须为正且严格递增")
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, '_log_x', np.log(x))

    @property
    def log_x(self) -> np.ndarray:
        return self._log_x

    @property
    def saturation(self) -> float:
        return float(self.values[-1])

    def locate(self, log_x) -> Tuple[np.ndarray, np.ndarray]:
        """ln x 在网格中的左端下标与插值比例，网格外截断到端点"""
        pos = np.interp(np.asarray(log_x, dtype=float), self._log_x, np.arange(len(self.x), dtype=float))
        left = np.minimum(np.floor(pos).astype(int), len(self.x) - 2)
        return left, pos - left

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            log_x = np.log(np.where(x > 0, x, self.x[0]))
        out = np.interp(log_x, self._log_x, self.values)
        out = np.where(x > 0, out, 0.0)
        return float(out) if out.ndim == 0 else out


def _standard_product_pdf(u: float, spec: Optional[QuadSpec] = None) -> float:
    """单位均值指数变量乘积的密度 ∫ exp(-e^t - u·e^{-t}) dt（对数代换）"""
    log_u = math.log(u)
    lo = min(0.5 * log_u, log_u) - 4.5
    hi = max(0.5 * log_u, 0.0) + 4.5
    return integrate_1d(lambda t: math.exp(-math.exp(t) - u * math.exp(-t)), lo, hi, spec).value


def product_exp_pdf(z: float, mean_a: float, mean_b: float, spec: Optional[QuadSpec] = None) -> float:
    """
    两个独立指数变量（均值 mean_a、mean_b）乘积的概率密度

    Args:
        z (float): 取值点，z ≤ 0 时返回 0

    Returns:
        float: 密度值，与 (2/(ab))·K0(2·sqrt(z/(ab))) 一致
    """
    if not (mean_a > 0 and mean_b > 0):
        raise ValueError(f"指数分布均值必须为正数: {mean_a}, {mean_b}")
    if z <= 0:
        return 0.0
    scale = mean_a * mean_b
    return _standard_product_pdf(z / scale, spec) / scale


def product_exp_sf(t, mean_a: float, mean_b: float):
    """乘积的上尾概率 P(h_a·h_b > t) = 2√u·K1(2√u)，u = t/(ab)"""
    u = np.asarray(t, dtype=float) / (mean_a * mean_b)
    root = 2.0 * np.sqrt(np.maximum(u, 0.0))
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        tail = root * special.k1e(root) * np.exp(-root)
    out = np.where(u > 0, tail, 1.0)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=4)
def product_exp_log_weights(step: float = 0.1, lo: float = -40.0, hi: float = 6.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    单位均值乘积在对数网格 t = ln z 上的离散化权重

    Returns:
        (t, weights): E[g(Z)] ≈ Σ weights·g(ab·e^t)，权重之和约为 1
    """
    t = np.arange(lo, hi + 0.5 * step, step)
    density = np.array([_standard_product_pdf(math.exp(v)) for v in t])
    weights = density * np.exp(t) * step
    weights[0] *= 0.5
    weights[-1] *= 0.5
    t.setflags(write=False)
    weights.setflags(write=False)
    return t, weights


def upper_incomplete_gamma(a: float, x):
    """
    上不完全伽马函数 Γ(a, x)，a 可取任意实数（a ≤ 0 时向下递推），x > 0
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("上不完全伽马函数要求 x > 0")
    if a > 0:
        out = special.gamma(a) * special.gammaincc(a, x)
    elif a == 0:
        out = special.exp1(x)
    else:
        out = (upper_incomplete_gamma(a + 1.0, x) - x ** a * np.exp(-x)) / a
    return float(out) if np.ndim(out) == 0 else out
