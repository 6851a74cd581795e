import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from channel import LN10, achievable_rate
from geom import arc_half_angle
from params import SingleCell, SystemParams, validate
from quad import (QuadResult, QuadSpec, cosine_gauss, exp_radial_moment, gauss_legendre,
                  integrate_1d, integrate_2d, log_grid, product_exp_log_weights)

ArrayLike = Union[float, np.ndarray]
# 反射距离积网格覆盖 [1e-8·R², 2·R²]
_GRID_FLOOR = 1e-8
_GRID_CEIL = 2.0
# 阈值下限，避免 ln(0)
_MIN_GAMMA = 1e-300


@dataclass(frozen=True, eq=False)
class _RadialState:
    """用户距离 ξ 的求积节点及各节点上预计算的量"""
    nodes: np.ndarray
    weights: np.ndarray
    los: np.ndarray
    reflection: np.ndarray
    tables: np.ndarray


def _window_breakpoints(x: float, xi: float, radius: float) -> List[float]:
    """s·(s+ξ) = x 与 s·|s-ξ| = x 的正根，θ 窗口在这些点改变形态"""
    points = [xi, 0.5 * (-xi + math.sqrt(xi * xi + 4.0 * x)), 0.5 * (xi + math.sqrt(xi * xi + 4.0 * x))]
    disc = xi * xi - 4.0 * x
    if disc >= 0:
        points += [0.5 * (xi - math.sqrt(disc)), 0.5 * (xi + math.sqrt(disc))]
    return [p for p in points if 0.0 < p < radius]


class SingleCellContext:
    """
    单小区解析引擎：关联概率、反射距离积分布、条件/遍历覆盖概率与可达速率

    Args:
        params (SystemParams): 单小区场景参数
        quad (QuadSpec): 数值积分配置
    """

    def __init__(self, params: SystemParams, quad: Optional[QuadSpec] = None):
        self.params = validate(params)
        if not isinstance(params.scenario, SingleCell):
            raise ValueError("单小区解析需要 SingleCell 场景")
        self.quad = quad or QuadSpec()
        self.radius = params.scenario.radius_m
        self.c = params.los_decay_rate
        self.alpha = params.alpha
        self.beta = params.beta
        self.direct_mean = float(params.n_bs * params.n_ue)
        self.bs_ris_mean = float(params.n_bs * params.n_ris)
        self.ris_ue_mean = float(params.n_ris * params.n_ue)
        self.diagnostics: List[str] = []
        self.logger = logging.getLogger(__name__)
        self._lock = threading.RLock()
        self._tables: Dict[float, np.ndarray] = {}
        self._radial: Optional[_RadialState] = None
        self.x_grid = log_grid(_GRID_FLOOR * self.radius ** 2, _GRID_CEIL * self.radius ** 2, self.quad.grid_points)
        self._log_grid = np.log(self.x_grid)

    def _record(self, result: QuadResult, label: str) -> float:
        if not result.converged:
            with self._lock:
                self.diagnostics.append(f"{label}: 误差估计 {result.error:.3g}")
        return result.value

    def _check_xi(self, xi: float):
        if not 0 <= xi <= self.radius * (1.0 + 1e-12):
            raise ValueError(f"用户距离 ξ={xi} 超出小区范围 [0, {self.radius}]")

    def p_los(self, d: ArrayLike) -> ArrayLike:
        """视距概率 exp(-c·d)"""
        d = np.asarray(d, dtype=float)
        if np.any(d < 0):
            raise ValueError("距离不能为负")
        out = np.exp(-self.c * d)
        return float(out) if out.ndim == 0 else out

    def reflection_prob_single(self, xi: float) -> float:
        """
        用户距基站 ξ 时小区内至少存在一个与用户视距的 RIS 的概率 P_R^s(ξ)

        以用户为极点，方向 ψ 上小区边界的距离为 r(ψ) = sqrt(R² - ξ²sin²ψ) - ξ·cosψ，
        径向积分 ∫ e^{-cr}·r dr 取闭式，对 ψ 做自适应积分（关于 ψ 对称，积分半周后加倍）。
        """
        self._check_xi(xi)
        if self.params.lambda_R == 0:
            return 0.0
        radius, c = self.radius, self.c

        def sector(psi):
            edge = math.sqrt(max(radius * radius - (xi * math.sin(psi)) ** 2, 0.0)) - xi * math.cos(psi)
            return float(exp_radial_moment(max(edge, 0.0), c))

        half = self._record(integrate_1d(sector, 0.0, math.pi, self.quad), f"P_R^s(ξ={xi:.4g})")
        return -math.expm1(-2.0 * self.params.lambda_R * half)

    def assoc_probs_single(self, xi: float) -> Tuple[float, float, float]:
        """(P_Ad^s, P_AI^s, P_blind^s)，三者之和为 1"""
        los = self.p_los(xi)
        reflect = self.reflection_prob_single(xi)
        return los, (1.0 - los) * reflect, (1.0 - los) * (1.0 - reflect)

    def eta_cdf_given_xi(self, x: float, xi: float) -> float:
        """
        F_{η|ξ}(x)：视距 RIS 中距离积 s·r 的最小值不超过 x 的概率

        s 为 RIS 到基站距离，对每个 s，θ 窗口由 cosθ 位于
        [max(-1, (s⁴+s²ξ²-x²)/(2s³ξ)), min(1, (s²+ξ²)/(2sξ))] 给出，正负 θ 对称加倍。
        """
        self._check_xi(xi)
        if x <= 0 or self.params.lambda_R == 0:
            return 0.0
        radius, c = self.radius, self.c
        if xi == 0.0:
            edge = min(radius, math.sqrt(x))
            mass = 2.0 * math.pi * self.params.lambda_R * float(exp_radial_moment(edge, c))
            return -math.expm1(-mass)

        def window(s):
            lower = (s ** 4 + s * s * xi * xi - x * x) / (2.0 * s ** 3 * xi)
            upper = (s * s + xi * xi) / (2.0 * s * xi)
            lo, hi = max(-1.0, lower), min(1.0, upper)
            if lo > hi:
                return 0.0, 0.0
            return math.acos(hi), math.acos(lo)

        def density(s, theta):
            r = math.sqrt(max(s * s + xi * xi - 2.0 * s * xi * math.cos(theta), 0.0))
            return s * math.exp(-c * r)

        result = integrate_2d(density, 0.0, radius, window, self.quad, points=_window_breakpoints(x, xi, radius))
        mass = 2.0 * self.params.lambda_R * self._record(result, f"F_η|ξ(x={x:.4g}, ξ={xi:.4g})")
        return -math.expm1(-mass)

    def _arc_mass(self, xi: float) -> np.ndarray:
        """以用户为圆心的弧长形式计算网格上各 x 处的视距 RIS 期望个数"""
        radius, c, lam = self.radius, self.c, self.params.lambda_R
        x = self.x_grid
        if xi == 0.0:
            return 2.0 * math.pi * lam * exp_radial_moment(np.minimum(radius, np.sqrt(x)), c)
        col = x[:, None]
        root_plus = np.sqrt(xi * xi + 4.0 * col)
        root_minus = np.sqrt(np.maximum(xi * xi - 4.0 * col, 0.0))
        ones = np.ones_like(col)
        candidates = np.concatenate([
            0.0 * ones, 0.5 * (-xi + root_plus), 0.5 * (xi + root_plus), 0.5 * (xi - root_minus),
            0.5 * (xi + root_minus), col / radius, (radius - xi) * ones, (radius + xi) * ones,
        ], axis=1)
        edges = np.sort(np.clip(candidates, 0.0, radius + xi), axis=1)
        r, w = cosine_gauss(edges[:, :-1], edges[:, 1:], self.quad.panel_nodes)
        with np.errstate(divide='ignore', invalid='ignore'):
            rho = np.minimum(radius, x[:, None, None] / r)
        phi = arc_half_angle(r, xi, rho)
        integrand = np.exp(-c * r) * 2.0 * phi * r
        return lam * np.sum(np.where(w > 0, w * integrand, 0.0), axis=(1, 2))

    def eta_cdf_table(self, xi: float) -> np.ndarray:
        """F_{η|ξ} 在共享对数网格 x_grid 上的取值"""
        self._check_xi(xi)
        key = float(xi)
        with self._lock:
            table = self._tables.get(key)
        if table is None:
            if self.params.lambda_R == 0:
                table = np.zeros_like(self.x_grid)
            else:
                table = np.maximum.accumulate(-np.expm1(-self._arc_mass(key)))
            table.setflags(write=False)
            with self._lock:
                self._tables[key] = table
        return table

    def _radial_state(self) -> _RadialState:
        with self._lock:
            if self._radial is None:
                nodes, weights = gauss_legendre(0.0, self.radius, self.quad.radial_nodes)
                weights = weights * 2.0 * nodes / self.radius ** 2
                self._radial = _RadialState(
                    nodes=nodes,
                    weights=weights,
                    los=np.exp(-self.c * nodes),
                    reflection=np.array([self.reflection_prob_single(float(v)) for v in nodes]),
                    tables=np.stack([self.eta_cdf_table(float(v)) for v in nodes]),
                )
                self.logger.debug(f"单小区径向节点预计算完成: {len(nodes)} 个节点")
            return self._radial

    def _reflected_expectation(self, tables: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """
        E[F_{η|ξ}(τ₂)]，τ₂ = (P0·h_s·h_r·10^{2α}/(σ²γ0))^{1/β}，按乘积 h_s·h_r 的对数网格权重求期望

        Returns:
            np.ndarray: 形状 (len(tables), len(gamma))
        """
        t, omega = product_exp_log_weights()
        params = self.params
        log_k = (math.log(params.p0_w) + 2.0 * self.alpha * LN10 - math.log(params.noise_w)
                 - np.log(np.maximum(gamma, _MIN_GAMMA))) / self.beta
        log_x = log_k[:, None] + (math.log(self.bs_ris_mean * self.ris_ue_mean) + t[None, :]) / self.beta
        pos = np.interp(log_x, self._log_grid, np.arange(len(self.x_grid), dtype=float))
        left = np.minimum(np.floor(pos).astype(int), len(self.x_grid) - 2)
        frac = pos - left
        values = tables[:, left] * (1.0 - frac) + tables[:, left + 1] * frac
        return values @ omega

    def _direct_term(self, xi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        log_tau = (self.beta * np.log(xi)[:, None] + math.log(self.params.noise_w)
                   + np.log(gamma)[None, :] - math.log(self.params.p0_w) - self.alpha * LN10)
        return np.exp(-np.exp(log_tau) / self.direct_mean)

    def _check_gamma(self, gamma0: ArrayLike) -> np.ndarray:
        gamma = np.atleast_1d(np.asarray(gamma0, dtype=float))
        if np.any(gamma <= 0):
            raise ValueError("SINR 阈值 γ0 必须为正数")
        return gamma

    def cond_coverage_single(self, xi: float, gamma0: ArrayLike) -> ArrayLike:
        """给定用户距离 ξ 的覆盖概率：直连项 + 反射项"""
        if not 0 < xi <= self.radius * (1.0 + 1e-12):
            raise ValueError(f"用户距离 ξ={xi} 必须位于 (0, {self.radius}]")
        gamma = self._check_gamma(gamma0)
        los = self.p_los(xi)
        direct = los * self._direct_term(np.array([xi]), gamma)[0]
        reflected = (1.0 - los) * self._reflected_expectation(self.eta_cdf_table(xi)[None, :], gamma)[0]
        out = direct + reflected
        return float(out[0]) if np.ndim(gamma0) == 0 else out

    def coverage_split_single(self, gamma0: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
        """遍历覆盖概率的直连部分与反射部分"""
        gamma = self._check_gamma(gamma0)
        state = self._radial_state()
        direct = (state.weights * state.los) @ self._direct_term(state.nodes, gamma)
        reflected = (state.weights * (1.0 - state.los)) @ self._reflected_expectation(state.tables, gamma)
        if np.ndim(gamma0) == 0:
            return float(direct[0]), float(reflected[0])
        return direct, reflected

    def ergodic_coverage_single(self, gamma0: ArrayLike) -> ArrayLike:
        """小区内用户均匀分布下的遍历覆盖概率 (2/R²)∫ P_cov|ξ·ξ dξ"""
        direct, reflected = self.coverage_split_single(gamma0)
        return direct + reflected

    def ergodic_assoc_single(self) -> Tuple[float, float, float]:
        """用户平均的 (P_Ad, P_AI, P_blind)"""
        state = self._radial_state()
        p_ad = float(state.weights @ state.los)
        p_ai = float(state.weights @ ((1.0 - state.los) * state.reflection))
        return p_ad, p_ai, 1.0 - p_ad - p_ai

    def achievable_rate_single(self) -> float:
        """用户平均可达速率，bit/s"""
        result = achievable_rate(self.ergodic_coverage_single, self.params.bw_hz, self.quad)
        return self._record(result, "单小区可达速率")
