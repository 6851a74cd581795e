import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Tuple, Union

import numpy as np

from params import SystemParams
from quad import QuadResult, QuadSpec, integrate_1d

MAIN = 'main'
SIDE = 'side'
LOBE_PAIRS: Tuple[Tuple[str, str], ...] = ((MAIN, MAIN), (MAIN, SIDE), (SIDE, MAIN), (SIDE, SIDE))
LN10 = math.log(10.0)
# 频谱效率积分上限的倍增封顶，单位 bit/s/Hz
_MAX_SPECTRAL_EFFICIENCY = 512.0
# 速率积分在 γ→0 处的阈值下限
_MIN_THRESHOLD = 1e-300

ArrayLike = Union[float, np.ndarray]


def _scalar_or_array(value: np.ndarray) -> ArrayLike:
    return float(value) if np.ndim(value) == 0 else value


class DirectionalGain(NamedTuple):
    value: float
    lobe_pair: Tuple[str, str]


def large_scale_gain(d: ArrayLike, alpha: float, beta: float) -> ArrayLike:
    """大尺度增益 g = 10^α·d^{-β}"""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("链路距离必须为正数")
    return _scalar_or_array(np.exp(alpha * LN10 - beta * np.log(d)))


def reflected_gain(s: ArrayLike, r: ArrayLike, alpha: float, beta: float) -> ArrayLike:
    """RIS 反射链路的乘积增益 10^{2α}/(s·r)^β"""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(s <= 0) or np.any(r <= 0):
        raise ValueError("反射链路两段距离必须为正数")
    return _scalar_or_array(np.exp(2.0 * alpha * LN10 - beta * (np.log(s) + np.log(r))))


def lobe_gains(n: int) -> Tuple[float, float]:
    """
    扇形天线模型的主瓣/旁瓣增益

    Returns:
        (M, m): M = n，m = 1/sin²(3π/(2√n))
    """
    if n < 1:
        raise ValueError(f"天线单元数必须 ≥ 1: {n}")
    return float(n), 1.0 / math.sin(3.0 * math.pi / (2.0 * math.sqrt(n))) ** 2


def directional_gain_law(nt: int, nr: int, psit: float, psir: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    收发两端随机指向时方向增益的四点分布

    Returns:
        (values, probs): 依次对应 LOBE_PAIRS 的增益值与概率
    """
    for psi in (psit, psir):
        if not 0 < psi <= 2.0 * math.pi:
            raise ValueError(f"主瓣宽度必须位于 (0, 2π]: {psi}")
    big_t, small_t = lobe_gains(nt)
    big_r, small_r = lobe_gains(nr)
    pt = psit / (2.0 * math.pi)
    pr = psir / (2.0 * math.pi)
    values = np.array([big_t * big_r, big_t * small_r, small_t * big_r, small_t * small_r])
    probs = np.array([pt * pr, pt * (1.0 - pr), (1.0 - pt) * pr, (1.0 - pt) * (1.0 - pr)])
    return values, probs


def mean_directional_gain(nt: int, nr: int, psit: float, psir: float) -> float:
    values, probs = directional_gain_law(nt, nr, psit, psir)
    return float(np.dot(values, probs))


def sample_directional_gain(nt: int, nr: int, psit: float, psir: float,
                            rng: np.random.Generator) -> DirectionalGain:
    values, probs = directional_gain_law(nt, nr, psit, psir)
    index = int(rng.choice(len(values), p=probs))
    return DirectionalGain(float(values[index]), LOBE_PAIRS[index])


def sample_directional_gains(nt: int, nr: int, psit: float, psir: float,
                             rng: np.random.Generator, size: int) -> np.ndarray:
    values, probs = directional_gain_law(nt, nr, psit, psir)
    return values[rng.choice(len(values), size=size, p=probs)]


def sample_small_scale(mean_gain: ArrayLike, rng: np.random.Generator, size=None) -> ArrayLike:
    """指数分布小尺度衰落，均值为 mean_gain"""
    mean = np.asarray(mean_gain, dtype=float)
    if np.any(mean <= 0):
        raise ValueError("小尺度衰落均值必须为正数")
    return _scalar_or_array(rng.exponential(mean, size))


def sinr_direct_single(xi: ArrayLike, h: ArrayLike, params: SystemParams) -> ArrayLike:
    """单小区直连链路 SNR：10^α·P0·h/(ξ^β·σ²)"""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("用户到基站距离必须为正数")
    gain = large_scale_gain(xi, params.alpha, params.beta)
    return _scalar_or_array(np.asarray(gain) * params.p0_w * np.asarray(h, dtype=float) / params.noise_w)


def sinr_reflect_single(s: ArrayLike, r: ArrayLike, hs: ArrayLike, hr: ArrayLike,
                        params: SystemParams) -> ArrayLike:
    """单小区 RIS 反射链路 SNR：10^{2α}·P0·hs·hr/((s·r)^β·σ²)"""
    gain = reflected_gain(s, r, params.alpha, params.beta)
    fading = np.asarray(hs, dtype=float) * np.asarray(hr, dtype=float)
    return _scalar_or_array(np.asarray(gain) * params.p0_w * fading / params.noise_w)


@dataclass(frozen=True)
class LinkBudget:
    """
    链路预算：大尺度增益、小尺度衰落（反射链路为两段之积）与发射功率

    字段可以是数组，用于一次描述一组同类干扰链路。
    """
    large_scale: ArrayLike
    small_scale: ArrayLike
    p0_w: float

    def __post_init__(self):
        if np.any(np.asarray(self.large_scale) < 0) or np.any(np.asarray(self.small_scale) < 0):
            raise ValueError("链路增益不能为负")

    @property
    def power_w(self) -> ArrayLike:
        return _scalar_or_array(np.asarray(self.large_scale) * self.p0_w * np.asarray(self.small_scale))

    @classmethod
    def direct(cls, d: ArrayLike, h: ArrayLike, params: SystemParams) -> 'LinkBudget':
        return cls(large_scale_gain(d, params.alpha, params.beta), h, params.p0_w)

    @classmethod
    def reflected(cls, s: ArrayLike, r: ArrayLike, hs: ArrayLike, hr: ArrayLike,
                  params: SystemParams) -> 'LinkBudget':
        fading = np.asarray(hs, dtype=float) * np.asarray(hr, dtype=float)
        return cls(reflected_gain(s, r, params.alpha, params.beta), _scalar_or_array(fading), params.p0_w)


def sinr_multi(target: LinkBudget, interferers: Iterable[LinkBudget], noise_w: float) -> float:
    """目标链路功率 / (噪声 + 全部干扰功率)"""
    if not noise_w > 0:
        raise ValueError(f"噪声功率必须为正数: {noise_w}")
    interference = sum(float(np.sum(link.power_w)) for link in interferers)
    return float(target.power_w) / (noise_w + interference)


def achievable_rate(coverage_at: Callable[[float], ArrayLike], bw_hz: float,
                    spec: Optional[QuadSpec] = None) -> QuadResult:
    """
    由覆盖概率求平均可达速率 ∫_0^∞ P(SINR > 2^{t/W} - 1) dt

    积分上限从 W 开始倍增，直到覆盖概率低于 abs_tol。
    """
    spec = spec or QuadSpec()

    def integrand(t):
        gamma = max(math.expm1(t / bw_hz * math.log(2.0)), _MIN_THRESHOLD)
        return float(np.squeeze(coverage_at(gamma)))

    horizon = bw_hz
    while integrand(horizon) > spec.abs_tol and horizon < bw_hz * _MAX_SPECTRAL_EFFICIENCY:
        horizon *= 2.0
    return integrate_1d(integrand, 0.0, horizon, spec.scaled(bw_hz))
