import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from channel import LN10, achievable_rate, mean_directional_gain
from geom import arc_half_angle
from params import MultiCell, SystemParams, validate
from quad import (DivergentIntegralError, LogGridTable, QuadResult, QuadSpec, composite_gauss, cosine_gauss,
                  exp_radial_moment, gauss_legendre, integrate_1d, integrate_2d, integrate_improper, log_grid,
                  product_exp_sf, trapezoid_weights, upper_incomplete_gamma)

ArrayLike = Union[float, np.ndarray]
# η0 分布表的网格下限，单位 m²
_ETA_GRID_FLOOR = 1e-3
# 干扰矩表的边界点数
_PROFILE_POINTS = 48
# ξ0 密度截断：低于峰值的 abs_tol 倍
_XI_PANELS = 24
_R0_PANELS = 16
_ANGLE_NODES = 12


class ExistenceProbs(NamedTuple):
    p_los_bs: float
    p_reflective_bs: float
    reflective_count_divergent: bool


@dataclass(frozen=True, eq=False)
class ServedDistributions:
    """
    服务基站距离的子概率密度及其求积节点

    f_xi: 直连服务时 ξ0 的子密度；f_eta: 反射服务时 η0 的子密度
    """
    xi_nodes: np.ndarray
    xi_weights: np.ndarray
    f_xi: np.ndarray
    eta_grid: np.ndarray
    eta_weights: np.ndarray
    f_eta: np.ndarray
    p_ad: float
    p_ai: float

    @property
    def direct_mass(self) -> float:
        return float(self.xi_weights @ self.f_xi)

    @property
    def reflected_mass(self) -> float:
        return float(self.eta_weights @ self.f_eta)


class _LogLogCurve:
    """边界→干扰矩的对数-对数插值，低于首点取首值，高于末点按末段斜率外推"""

    def __init__(self, boundaries: np.ndarray, values: np.ndarray):
        self._log_b = np.log(boundaries)
        self._log_q = np.log(np.maximum(values, 1e-300))
        self._slope = (self._log_q[-1] - self._log_q[-2]) / (self._log_b[-1] - self._log_b[-2])

    def __call__(self, boundary: ArrayLike) -> np.ndarray:
        log_b = np.log(np.maximum(np.asarray(boundary, dtype=float), np.exp(self._log_b[0])))
        inside = np.interp(log_b, self._log_b, self._log_q)
        beyond = self._log_q[-1] + self._slope * (log_b - self._log_b[-1])
        return np.exp(np.where(log_b > self._log_b[-1], beyond, inside))


@dataclass(frozen=True, eq=False)
class InterferenceProfile:
    """Q1..Q4 作为服务距离（ξ0 或 η0）的函数"""
    q1: Callable[[ArrayLike], np.ndarray]
    q2: Callable[[ArrayLike], np.ndarray]
    q3: Callable[[ArrayLike], np.ndarray]
    q4: Callable[[ArrayLike], np.ndarray]


class MultiCellContext:
    """
    多小区解析引擎：稀疏化基站密度、存在概率、最近链路分布、关联概率、盲区比例、
    干扰矩 Q1..Q4、覆盖概率与可达速率

    Args:
        params (SystemParams): 多小区场景参数
        quad (QuadSpec): 数值积分配置
    """

    def __init__(self, params: SystemParams, quad: Optional[QuadSpec] = None):
        self.params = validate(params)
        if not isinstance(params.scenario, MultiCell):
            raise ValueError("多小区解析需要 MultiCell 场景")
        if not params.scenario.lambda_Y > 0:
            raise ValueError(f"多小区解析要求基站密度 λ_Y > 0，当前为 {params.scenario.lambda_Y}")
        self.c = params.los_decay_rate
        if not self.c > 0:
            raise DivergentIntegralError("多小区解析要求 λ_b·E[L] > 0，否则距离积分发散")
        self.quad = quad or QuadSpec()
        self.lambda_Y = params.scenario.lambda_Y
        self.alpha = params.alpha
        self.beta = params.beta
        self.assoc_const = math.exp((self.alpha * LN10 + 2.0 * math.log(params.n_ris)) / self.beta)
        self.horizon = self.quad.truncation_factor / self.c
        self.direct_mean = float(params.n_bs * params.n_ue)
        self.bs_ris_mean = float(params.n_bs * params.n_ris)
        self.ris_ue_mean = float(params.n_ris * params.n_ue)
        self.interferer_direct_mean = mean_directional_gain(params.n_bs, params.n_ue, params.psi_bs, params.psi_ue)
        self.interferer_bs_ris_mean = mean_directional_gain(params.n_bs, params.n_ris, params.psi_bs, params.psi_ris)
        self.interferer_ris_ue_mean = mean_directional_gain(params.n_ris, params.n_ue, params.psi_ris, params.psi_ue)
        self.diagnostics: List[str] = []
        self.logger = logging.getLogger(__name__)
        self._lock = threading.RLock()
        self._p_rm: Optional[float] = None
        self._exists: Optional[ExistenceProbs] = None
        self._eta_table: Optional[LogGridTable] = None
        self._served: Optional[ServedDistributions] = None
        self._profile: Optional[InterferenceProfile] = None

    def _record(self, result: QuadResult, label: str) -> float:
        if not result.converged:
            with self._lock:
                self.diagnostics.append(f"{label}: 误差估计 {result.error:.3g}")
        return result.value

    def p_los(self, d: ArrayLike) -> ArrayLike:
        d = np.asarray(d, dtype=float)
        if np.any(d < 0):
            raise ValueError("距离不能为负")
        out = np.exp(-self.c * d)
        return float(out) if out.ndim == 0 else out

    def _void_exponent(self, density: float, x: ArrayLike) -> np.ndarray:
        """∫_0^x density·e^{-cξ}·2πξ dξ 的闭式值"""
        return 2.0 * math.pi * density * exp_radial_moment(x, self.c)

    def bs_densities(self, xi: ArrayLike) -> Tuple[ArrayLike, ArrayLike, ArrayLike]:
        """(λ_Y^L, λ̃_Y^N, λ_Y^{N_I})：视距、可反射非视距、不可达非视距基站密度"""
        los = self.p_los(xi)
        p_rm = self.multi_reflection_prob()
        nlos = self.lambda_Y * (1.0 - np.asarray(los))
        reflective = nlos * p_rm
        idle = nlos - reflective
        if np.ndim(los) == 0:
            return self.lambda_Y * los, float(reflective), float(idle)
        return self.lambda_Y * los, reflective, idle

    def multi_reflection_prob(self) -> float:
        """P_R^m：平面上至少存在一个与典型用户视距的 RIS 的概率"""
        with self._lock:
            if self._p_rm is None:
                lam = self.params.lambda_R
                if lam == 0:
                    self._p_rm = 0.0
                else:
                    result = integrate_improper(lambda r: lam * math.exp(-self.c * r) * 2.0 * math.pi * r,
                                                self.c, self.quad)
                    self._p_rm = -math.expm1(-self._record(result, "P_R^m"))
            return self._p_rm

    def exists_probs(self) -> ExistenceProbs:
        """
        (P_L, P_N^R)：存在视距基站的概率，以及存在可反射非视距基站的概率

        可反射非视距基站的期望个数在无界平面上发散，只要 λ_Y·P_R^m > 0 即取 P_N^R = 1。
        """
        with self._lock:
            if self._exists is None:
                result = integrate_improper(
                    lambda x: self.lambda_Y * math.exp(-self.c * x) * 2.0 * math.pi * x, self.c, self.quad)
                p_los_bs = -math.expm1(-self._record(result, "P_L"))
                divergent = self.lambda_Y * self.multi_reflection_prob() > 0
                if divergent:
                    self.logger.debug("可反射非视距基站期望个数发散，P_N^R 取 1")
                self._exists = ExistenceProbs(p_los_bs, 1.0 if divergent else 0.0, divergent)
            return self._exists

    def nearest_los_bs_pdf(self, x: ArrayLike) -> ArrayLike:
        """最近视距基站距离 ξ0 的子概率密度（质量为 P_L）"""
        return self._nearest_pdf(self.lambda_Y, x)

    def nearest_los_ris_pdf(self, x: ArrayLike) -> ArrayLike:
        """最近视距 RIS 距离 r0 的子概率密度（质量为 P_R^m）"""
        return self._nearest_pdf(self.params.lambda_R, x)

    def _nearest_pdf(self, density: float, x: ArrayLike) -> ArrayLike:
        x = np.asarray(x, dtype=float)
        out = density * np.exp(-self.c * x) * 2.0 * math.pi * x * np.exp(-self._void_exponent(density, x))
        out = np.where(x > 0, out, 0.0)
        return float(out) if out.ndim == 0 else out

    def _conditional_mass(self, x: float, r0: np.ndarray) -> np.ndarray:
        """
        给定最近视距 RIS 距离 r0，距离积 r0·s ≤ x 的可反射非视距基站期望个数

        基站须落在以 RIS 为圆心、半径 ρ = x/r0 的圆盘内；以用户为极点按半径 ξ 分解：
        ξ ≤ ρ - r0 的整圆部分取闭式，其余部分对圆弧张角做固定规则积分。
        """
        r0 = np.asarray(r0, dtype=float)
        rho = x / r0
        full = np.maximum(rho - r0, 0.0)
        disk_part = math.pi * (0.5 * full * full - exp_radial_moment(full, self.c))
        xi, w = cosine_gauss(np.abs(r0 - rho), r0 + rho, 2 * self.quad.panel_nodes)
        phi = arc_half_angle(xi, r0[..., None], rho[..., None])
        arc_part = np.sum(w * -np.expm1(-self.c * xi) * phi * xi, axis=-1)
        return 2.0 * self.lambda_Y * self.multi_reflection_prob() * (disk_part + arc_part)

    def eta0_cdf_given_r0(self, x: float, r0: float) -> float:
        """
        F_{η0|r0}(x)：以用户为极点的 (ξ, θ) 窗口积分，θ 窗口正负对称加倍
        """
        if not r0 > 0:
            raise ValueError(f"最近视距 RIS 距离必须为正数: {r0}")
        p_rm = self.multi_reflection_prob()
        if x <= 0 or p_rm == 0:
            return 0.0
        rho = x / r0

        def window(xi):
            if xi == 0:
                return (0.0, math.pi) if r0 < rho else (0.0, 0.0)
            lower = (r0 ** 4 + r0 * r0 * xi * xi - x * x) / (2.0 * r0 ** 3 * xi)
            upper = (r0 * r0 + xi * xi) / (2.0 * r0 * xi)
            lo, hi = max(-1.0, lower), min(1.0, upper)
            if lo > hi:
                return 0.0, 0.0
            return math.acos(hi), math.acos(lo)

        def density(xi, theta):
            return self.lambda_Y * -math.expm1(-self.c * xi) * p_rm * xi

        result = integrate_2d(density, 0.0, r0 + rho, window, self.quad, points=[abs(r0 - rho)])
        return -math.expm1(-2.0 * self._record(result, f"F_η0|r0(x={x:.4g}, r0={r0:.4g})"))

    def eta0_cdf(self, x: float) -> float:
        """F_{η0}(x) = ∫ F_{η0|r0}(x)·f_{r0}(r0) dr0，无视距 RIS 的概率作为缺失质量"""
        if x <= 0 or self.params.lambda_R == 0:
            return 0.0

        def integrand(r):
            if r <= 0:
                return 0.0
            mass = float(self._conditional_mass(x, np.array([r]))[0])
            return -math.expm1(-mass) * self.nearest_los_ris_pdf(r)

        return self._record(integrate_improper(integrand, self.c, self.quad), f"F_η0(x={x:.4g})")

    def _r0_quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        scale = 0.05 / math.sqrt(max(self.params.lambda_R, 1e-12) * math.pi)
        edges = np.concatenate([[0.0], np.geomspace(min(scale, self.horizon / 1e3), self.horizon, _R0_PANELS)])
        return composite_gauss(edges, self.quad.panel_nodes)

    def eta0_cdf_table(self) -> LogGridTable:
        """F_{η0} 在对数网格 [1e-3, (T/c)²] 上的表，r0 按几何分段的复合规则积分"""
        with self._lock:
            if self._eta_table is None:
                grid = log_grid(_ETA_GRID_FLOOR, self.horizon ** 2, self.quad.grid_points)
                if self.params.lambda_R == 0:
                    values = np.zeros_like(grid)
                else:
                    r0, w = self._r0_quadrature()
                    weighted = w * self.nearest_los_ris_pdf(r0)
                    values = np.array([weighted @ -np.expm1(-self._conditional_mass(x, r0)) for x in grid])
                    values = np.maximum.accumulate(values)
                self._eta_table = LogGridTable(grid, values)
                self.logger.debug(f"F_η0 表构建完成: {len(grid)} 个网格点, 饱和值 {values[-1]:.6g}")
            return self._eta_table

    def _xi_quadrature(self) -> Tuple[np.ndarray, np.ndarray]:
        """ξ0 的复合规则节点，截断在子密度低于峰值 abs_tol 倍处"""
        probe = np.geomspace(1e-3, 2.0 * self.horizon, 4000)
        density = self.nearest_los_bs_pdf(probe)
        keep = np.nonzero(density >= self.quad.abs_tol * density.max())[0]
        upper = probe[min(keep[-1] + 1, len(probe) - 1)]
        edges = np.concatenate([[0.0], np.geomspace(min(1.0, upper / 1e3), upper, _XI_PANELS)])
        return composite_gauss(edges, self.quad.panel_nodes)

    def _los_bs_tail(self, y: np.ndarray) -> np.ndarray:
        """∫_y^∞ f_{ξ0} = exp(-Λ(y)) - exp(-Λ(∞))"""
        total = 2.0 * math.pi * self.lambda_Y / self.c ** 2
        return np.exp(-self._void_exponent(self.lambda_Y, y)) - math.exp(-total)

    def served_distributions(self) -> ServedDistributions:
        """
        直连/反射服务距离的子密度

        f̃_ξ0(x) = f_ξ0(x)·(1 - F_η0(k·x))；
        f̃_η0(x) = F_η0'(x)·(∫_{x/k}^∞ f_ξ0 + 1 - P_L)，导数由对数网格上的中心差分得到。
        """
        with self._lock:
            if self._served is None:
                p_rm = self.multi_reflection_prob()
                p_los_bs = self.exists_probs().p_los_bs
                table = self.eta0_cdf_table()
                xi_nodes, xi_weights = self._xi_quadrature()
                f_xi = self.nearest_los_bs_pdf(xi_nodes)
                reflected_wins = table(self.assoc_const * xi_nodes)
                f_xi_served = f_xi * (1.0 - reflected_wins)

                eta = table.x
                slope = np.maximum(np.gradient(table.values, table.log_x), 0.0) / eta
                f_eta = slope * (self._los_bs_tail(eta / self.assoc_const) + 1.0 - p_los_bs)
                eta_weights = trapezoid_weights(table.log_x) * eta

                p_ad = float(xi_weights @ f_xi_served)
                p_ai = float(xi_weights @ (f_xi * reflected_wins)) + (1.0 - p_los_bs) * p_rm
                self._served = ServedDistributions(xi_nodes, xi_weights, f_xi_served, eta,
                                                   eta_weights, np.maximum(f_eta, 0.0), p_ad, p_ai)
                self.logger.debug(f"服务距离分布: P_Ad={p_ad:.6f}, P_AI={p_ai:.6f}")
            return self._served

    def assoc_probs_multi(self) -> Tuple[float, float, float]:
        """(P_Ad, P_AI, P_blind)"""
        served = self.served_distributions()
        return served.p_ad, served.p_ai, 1.0 - served.p_ad - served.p_ai

    def _direct_scale(self) -> float:
        return self.params.p0_w * self.interferer_direct_mean * math.exp(self.alpha * LN10)

    def _reflected_scale(self) -> float:
        return (self.params.p0_w * self.interferer_bs_ris_mean * self.interferer_ris_ue_mean
                * math.exp(2.0 * self.alpha * LN10))

    def los_interference_integral(self, lower: float, spec: Optional[QuadSpec] = None) -> QuadResult:
        """∫_lower^∞ ξ^{1-β}·e^{-cξ} dξ（视距干扰基站的径向核）"""
        lower = max(lower, self.quad.excluded_radius)
        beta, c = self.beta, self.c
        return integrate_improper(lambda x: x ** (1.0 - beta) * math.exp(-c * x), c, spec or self.quad, lower=lower)

    def _los_interference_closed(self, lower: ArrayLike) -> np.ndarray:
        lower = np.maximum(np.asarray(lower, dtype=float), self.quad.excluded_radius)
        kernel = self.c ** (self.beta - 2.0) * upper_incomplete_gamma(2.0 - self.beta, self.c * lower)
        return 2.0 * math.pi * self.lambda_Y * self._direct_scale() * np.asarray(kernel)

    def _reflected_interference(self, boundaries: np.ndarray, include_ris_los: bool,
                                density_factor: float) -> np.ndarray:
        """
        经最强 RIS 反射的非视距干扰（Q2/Q4），以 RIS 为极点计算

        r: 用户到 RIS 距离（权重 f_R(r)·r^{-β}，Q2 另乘 P_LoS(r)）；s: RIS 到干扰基站距离（核 s^{1-β}）；
        干扰基站须满足 |y| ≥ 边界，对应 cosϑ ≥ (b² - r² - s²)/(2rs)。s 超出分段范围的部分按整圆远场尾部取闭式。
        """
        eps = self.quad.excluded_radius
        beta, c = self.beta, self.c
        n = max(self.quad.panel_nodes // 2, 4)
        r_edges = np.concatenate([[eps], np.geomspace(2.0 * eps, self.horizon, 12)])
        r, r_w = composite_gauss(r_edges, n)
        radial = r_w * self.nearest_los_ris_pdf(r) * r ** (-beta)
        if include_ris_los:
            radial = radial * np.exp(-c * r)
        s_hi = self.horizon + float(np.max(boundaries)) + self.horizon
        s_edges = np.concatenate([[eps], np.geomspace(2.0 * eps, s_hi, 16)])
        s, s_w = composite_gauss(s_edges, n)
        s_kernel = s_w * s ** (1.0 - beta)
        far_tail = 2.0 * math.pi * s_hi ** (2.0 - beta) / (beta - 2.0)

        rr = r[:, None]
        ss = s[None, :]
        out = np.empty(len(boundaries))
        for i, b in enumerate(boundaries):
            kappa = (b * b - rr * rr - ss * ss) / (2.0 * rr * ss)
            top = np.arccos(np.clip(kappa, -1.0, 1.0))
            theta, t_w = gauss_legendre(0.0, top, _ANGLE_NODES)
            xi = np.sqrt(np.maximum(rr[..., None] ** 2 + ss[..., None] ** 2
                                    + 2.0 * rr[..., None] * ss[..., None] * np.cos(theta), 0.0))
            angular = 2.0 * np.sum(t_w * -np.expm1(-c * xi), axis=-1)
            out[i] = radial @ (angular @ s_kernel + far_tail)
        return self.lambda_Y * density_factor * self._reflected_scale() * out

    def _reflected_density_factor(self, served: str) -> float:
        p_rm = self.multi_reflection_prob()
        if served == 'direct':
            return 1.0
        return 1.0 if self.params.idle_bs_interfere else p_rm

    def interference_moments(self, boundary: float, served: str = 'direct') -> Tuple[float, float]:
        """
        服务距离给定时的平均干扰功率

        Args:
            boundary (float): 直连服务时为 ξ0，反射服务时为 η0
            served (str): 'direct' 返回 (Q1, Q2)，'reflected' 返回 (Q3, Q4)
        """
        if not boundary > 0:
            raise ValueError(f"服务距离必须为正数: {boundary}")
        if served not in ('direct', 'reflected'):
            raise ValueError(f"served 只能为 'direct' 或 'reflected': {served}")
        lower = boundary if served == 'direct' else boundary / self.assoc_const
        kernel = self._record(self.los_interference_integral(lower), f"Q_LoS(边界={lower:.4g})")
        q_los = 2.0 * math.pi * self.lambda_Y * self._direct_scale() * kernel
        q_ris = float(self._reflected_interference(np.array([lower]), served == 'direct',
                                                   self._reflected_density_factor(served))[0])
        return q_los, q_ris

    def interference_profile(self) -> InterferenceProfile:
        """Q1..Q4 在对数边界网格上制表，覆盖积分内插值使用"""
        with self._lock:
            if self._profile is None:
                boundaries = np.geomspace(self.quad.excluded_radius, self.horizon, _PROFILE_POINTS)
                q2 = _LogLogCurve(boundaries, self._reflected_interference(
                    boundaries, True, self._reflected_density_factor('direct')))
                q4 = _LogLogCurve(boundaries, self._reflected_interference(
                    boundaries, False, self._reflected_density_factor('reflected')))
                k = self.assoc_const
                self._profile = InterferenceProfile(
                    q1=self._los_interference_closed,
                    q2=q2,
                    q3=lambda eta: self._los_interference_closed(np.asarray(eta) / k),
                    q4=lambda eta: q4(np.asarray(eta) / k),
                )
            return self._profile

    def coverage_split_multi(self, gamma0: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
        """覆盖概率的直连部分与反射部分"""
        gamma = np.atleast_1d(np.asarray(gamma0, dtype=float))
        if np.any(gamma <= 0):
            raise ValueError("SINR 阈值 γ0 必须为正数")
        served = self.served_distributions()
        profile = self.interference_profile()
        noise = self.params.noise_w
        p0 = self.params.p0_w

        xi = served.xi_nodes
        load_direct = ((noise + profile.q1(xi) + profile.q2(xi)) * xi ** self.beta
                       / (self.direct_mean * p0 * math.exp(self.alpha * LN10)))
        direct = (served.xi_weights * served.f_xi) @ np.exp(-np.outer(load_direct, gamma))

        eta = served.eta_grid
        load_reflected = ((noise + profile.q3(eta) + profile.q4(eta)) * eta ** self.beta
                          / (p0 * math.exp(2.0 * self.alpha * LN10)))
        tail = product_exp_sf(np.outer(load_reflected, gamma), self.bs_ris_mean, self.ris_ue_mean)
        reflected = (served.eta_weights * served.f_eta) @ tail
        if np.ndim(gamma0) == 0:
            return float(direct[0]), float(reflected[0])
        return direct, reflected

    def coverage_multi(self, gamma0: ArrayLike) -> ArrayLike:
        """多小区遍历覆盖概率"""
        direct, reflected = self.coverage_split_multi(gamma0)
        return direct + reflected

    def rate_multi(self) -> float:
        """多小区可达速率，bit/s"""
        return self._record(achievable_rate(self.coverage_multi, self.params.bw_hz, self.quad), "多小区可达速率")
