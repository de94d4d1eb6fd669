import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .errors import ConvexityError, GaugeError, LabError, SlopeMismatchError, SolverDivergenceError
from .functionals import ding_first_variation, ding_value
from .radial_model import (Grid, RadialWeight, edge_derivative_rows, first_derivative, football,
                           ma_density, second_derivative_operator, volume_weights)
from .twister import (TwisterKind, TwisterSpec, conical, no_twister, smooth_background,
                      smoothing_profile)

logger = logging.getLogger(__name__)

UNIQUE_TOL = 1e-6


class GaugeMode(Enum):
    """规范条件"""
    CENTER_BARYCENTER = "center_barycenter"
    PIN_VALUE = "pin_value"
    NONE = "none"


@dataclass
class SolverConfig:
    """牛顿求解器配置"""
    tol: float = 1e-10
    max_iter: int = 60
    damping: int = 40
    gauge: GaugeMode = GaugeMode.CENTER_BARYCENTER
    pin_x: float = 0.0
    pin_value: float = 0.0
    bisections: int = 10
    continuation_steps: int = 4

    def __post_init__(self):
        self.gauge = GaugeMode(self.gauge)
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.continuation_steps < 0:
            raise ValueError(f"continuation_steps must be >= 0, got {self.continuation_steps}")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "SolverConfig":
        return cls(tol=float(config.get('tol', 1e-10)),
                   max_iter=int(config.get('max_iter', 60)),
                   damping=int(config.get('damping', 40)),
                   gauge=config.get('gauge', 'center_barycenter'),
                   pin_x=float(config.get('pin_x', 0.0)),
                   pin_value=float(config.get('pin_value', 0.0)),
                   bisections=int(config.get('bisections', 10)),
                   continuation_steps=int(config.get('continuation_steps', 4)))


@dataclass
class KESolution:
    """求解结果及残差证书"""
    weight: RadialWeight
    residual: float
    iterations: int
    trace: List[float] = field(default_factory=list)


@dataclass
class _Equation:
    """phi'' = (1 + nu) * M * K * e^{-t*phi} / Z，nu 吸收离散质量缺口"""
    log_kernel: np.ndarray
    t: float
    M: float
    rate_minus: float
    rate_plus: float
    offset_target: float = 0.0
    slope_targets: Tuple[float, float] = (0.0, 0.0)
    barycenter: Optional[float] = None


class MongeAmpereNewton:
    """带状牛顿求解器

    未知量 [phi, nu, mu]：两端为对称的斜率条件，截距（或钉点）与重心各占一行加边，
    归一化积分的秩一项用 Sherman-Morrison 处理。
    """

    def __init__(self, grid: Grid, cfg: SolverConfig):
        self.grid = grid
        self.cfg = cfg
        self.n = grid.n
        self.x = grid.x
        self.q = grid.quadrature_weights()
        self.D2 = second_derivative_operator(self.n, grid.h)
        self.left, self.right = edge_derivative_rows(self.n, grid.h)
        self.logger = logging.getLogger(__name__)

    def _density(self, eq: _Equation, omega: np.ndarray, phi: np.ndarray) -> np.ndarray:
        lg = eq.log_kernel - eq.t * phi
        e = np.exp(lg - lg.max())
        return eq.M * e / np.dot(omega, e)

    @staticmethod
    def _apply(row: dict, phi: np.ndarray) -> float:
        return sum(c * phi[j] for j, c in row.items())

    def offset_sum(self, eq: _Equation, omega: np.ndarray, phi: np.ndarray, a: tuple) -> float:
        """渐近截距 b- + b+（含指数尾部修正）"""
        rho = self._density(eq, omega, phi)
        b_minus = phi[0] - a[0] * self.x[0] - rho[0] / eq.rate_minus ** 2
        b_plus = phi[-1] - a[1] * self.x[-1] - rho[-1] / eq.rate_plus ** 2
        return float(b_minus + b_plus)

    def _edge_rows(self, eq: _Equation, phi: np.ndarray, rho: np.ndarray, a: tuple) -> Tuple[float, float]:
        """phi'(-x_max) = a- + 尾部质量，phi'(x_max) = a+ - 尾部质量"""
        left = self._apply(self.left, phi) - a[0] - rho[0] / eq.rate_minus - eq.slope_targets[0]
        right = self._apply(self.right, phi) - a[1] + rho[-1] / eq.rate_plus - eq.slope_targets[1]
        return left, right

    def boundary_defect(self, eq: _Equation, phi: RadialWeight) -> Tuple[Tuple[float, float], float]:
        """phi 在边界行上的离散残差：(两端斜率行, 截距和)"""
        omega = volume_weights(self.grid, eq.rate_minus, eq.rate_plus)
        a = (phi.slope_minus, phi.slope_plus)
        rho = self._density(eq, omega, phi.samples)
        edges = self._edge_rows(replace(eq, slope_targets=(0.0, 0.0)), phi.samples, rho, a)
        return edges, self.offset_sum(eq, omega, phi.samples, a)

    def _residual(self, eq: _Equation, omega, z, a, pin):
        n = self.n
        phi, nu = z[:n], z[n]
        rho = self._density(eq, omega, phi)
        ma = self.D2 @ phi
        G = np.empty(len(z))
        interior = ma[1:n - 1] - rho[1:n - 1]
        G[1:n - 1] = interior - nu * rho[1:n - 1]
        if eq.barycenter is not None:
            G[1:n - 1] += z[n + 1] * rho[1:n - 1] * first_derivative(phi, self.grid.h)[1:n - 1]
            G[n + 1] = np.dot(self.q * self.x, rho) / eq.M - eq.barycenter
        G[0], G[n - 1] = self._edge_rows(eq, phi, rho, a)
        if pin is None:
            G[n] = self.offset_sum(eq, omega, phi, a) - eq.offset_target
        else:
            G[n] = phi[pin[0]] - pin[1]
        return G, rho, float(np.max(np.abs(interior)))

    def _jacobian(self, eq: _Equation, omega, z, rho, pin):
        n, t, M = self.n, eq.t, eq.M
        size = len(z)
        phi, nu = z[:n], z[n]
        rows, cols, vals = [], [], []

        def put(i, j, value):
            rows.append(i)
            cols.append(j)
            vals.append(value)

        for j, c in self.left.items():
            put(0, j, c + (t * rho[0] / eq.rate_minus if j == 0 else 0.0))
        for j, c in self.right.items():
            put(n - 1, j, c - (t * rho[-1] / eq.rate_plus if j == n - 1 else 0.0))
        if pin is None:
            put(n, 0, 1.0 + t * rho[0] / eq.rate_minus ** 2)
            put(n, n - 1, 1.0 + t * rho[-1] / eq.rate_plus ** 2)
        else:
            put(n, pin[0], 1.0)
        for i in range(1, n - 1):
            put(i, n, -rho[i])

        mask = np.zeros(n)
        mask[1:-1] = 1.0
        core = sp.diags(mask) @ (self.D2 + sp.diags((1.0 + nu) * t * rho))
        A = sp.bmat([[core, None], [None, sp.csr_matrix((size - n, size - n))]], format='csr')
        A = A + sp.csr_matrix((vals, (rows, cols)), shape=(size, size))

        u = np.zeros(size)
        u[0] = -rho[0] / eq.rate_minus
        u[1:n - 1] = -(1.0 + nu) * rho[1:n - 1]
        u[n - 1] = rho[-1] / eq.rate_plus
        if pin is None:
            u[n] = -(rho[0] / eq.rate_minus ** 2 + rho[-1] / eq.rate_plus ** 2)
        v = np.zeros(size)
        v[:n] = (t / M) * omega * rho
        if eq.barycenter is not None:
            col = np.zeros((size, 1))
            col[1:n - 1, 0] = rho[1:n - 1] * first_derivative(phi, self.grid.h)[1:n - 1]
            moment = np.dot(self.q * self.x, rho)
            row = np.zeros((1, size))
            row[0, :n] = (-t * self.q * self.x * rho + moment * v[:n]) / M
            A = A.tolil()
            A[:, n + 1] = col
            A[n + 1, :] = row
            A = A.tocsr()
        return A, u, v

    def solve(self, eq: _Equation, phi_init: RadialWeight, pin: Optional[tuple] = None,
              label: str = "solve") -> KESolution:
        """阻尼牛顿迭代，步长减半全局化"""
        n = self.n
        a = (phi_init.slope_minus, phi_init.slope_plus)
        omega = volume_weights(self.grid, eq.rate_minus, eq.rate_plus)
        z = np.zeros(n + (2 if eq.barycenter is not None else 1))
        z[:n] = phi_init.samples
        trace: List[float] = []
        G, rho, interior = self._residual(eq, omega, z, a, pin)
        norm = float(np.max(np.abs(G)))
        self.logger.debug(f"{label}: 初始残差 {norm:.3e}")

        for iteration in range(self.cfg.max_iter + 1):
            trace.append(norm)
            if norm <= self.cfg.tol:
                self.logger.info(f"{label}: 收敛, 迭代 {iteration} 次, 残差 {interior:.3e}, 质量缺口 {z[n]:.1e}")
                return KESolution(RadialWeight(self.grid, z[:n].copy(), a[0], a[1]), interior, iteration, trace)
            if iteration == self.cfg.max_iter:
                break

            A, u, v = self._jacobian(eq, omega, z, rho, pin)
            try:
                lu = splu(A.tocsc())
            except RuntimeError as e:
                raise SolverDivergenceError(f"{label}: singular Jacobian ({e})", trace)
            y = lu.solve(-G)
            w = lu.solve(u)
            delta = y - w * (np.dot(v, y) / (1.0 + np.dot(v, w)))

            step = 1.0
            for _ in range(self.cfg.damping + 1):
                trial = z + step * delta
                G_t, rho_t, interior_t = self._residual(eq, omega, trial, a, pin)
                norm_t = float(np.max(np.abs(G_t)))
                if np.isfinite(norm_t) and norm_t < norm:
                    break
                step *= 0.5
            else:
                if norm <= 10.0 * self.cfg.tol:
                    self.logger.warning(f"{label}: 残差停滞于 {norm:.3e}，按收敛处理")
                    return KESolution(RadialWeight(self.grid, z[:n].copy(), a[0], a[1]), interior, iteration, trace)
                self.logger.error(f"{label}: 步长减半 {self.cfg.damping} 次仍未下降")
                raise SolverDivergenceError(f"{label}: damping exhausted (last residual {norm:.3e})", trace)

            z, G, rho, interior, norm = trial, G_t, rho_t, interior_t, norm_t
            self.logger.debug(f"{label}: 迭代 {iteration + 1}, 残差 {norm:.3e}, 步长 {step:g}")

        self.logger.error(f"{label}: 达到最大迭代次数 {self.cfg.max_iter}")
        raise SolverDivergenceError(f"{label}: maximum iterations reached ({norm:.3e})", trace)


def _pin(grid: Grid, cfg: SolverConfig) -> Optional[tuple]:
    if cfg.gauge != GaugeMode.PIN_VALUE:
        return None
    return int(np.argmin(np.abs(grid.x - cfg.pin_x))), cfg.pin_value


def _check_mass(phi: RadialWeight, M: float):
    if abs(phi.degree - M) > 1e-9 * (1.0 + M):
        raise SlopeMismatchError(f"initial degree {phi.degree:g} but twister requires mass {M:g}")


def _twisted_equation(tw: TwisterSpec, phi_init: RadialWeight, t: float = 1.0,
                      phi0: Optional[RadialWeight] = None) -> _Equation:
    log_kernel = -tw.weight.samples
    if phi0 is not None and t < 1.0:
        log_kernel = log_kernel - (1.0 - t) * phi0.samples
    rate_minus = -(phi_init.slope_minus + tw.weight.slope_minus)
    rate_plus = phi_init.slope_plus + tw.weight.slope_plus
    return _Equation(log_kernel, t, tw.mass_M, rate_minus, rate_plus)


def barycenter(phi: RadialWeight) -> float:
    """Monge-Ampere 重心 int x*phi'' / M"""
    ma = ma_density(phi)
    return phi.grid.integrate(phi.x * ma.samples) / ma.mass


def normalize_automorphism(phi: RadialWeight) -> RadialWeight:
    """平移 x -> x + a 使 Monge-Ampere 重心为零（三次样条重采样）"""
    if ma_density(phi).mass <= 0.0:
        raise ConvexityError("normalization needs positive Monge-Ampere mass")
    shift = barycenter(phi)
    if abs(shift) < 1e-14:
        return phi
    x = phi.x
    target = x + shift
    spline = CubicSpline(x, phi.samples)
    b_minus, b_plus = phi.tail_offsets
    samples = np.where(target < x[0], phi.slope_minus * target + b_minus,
                       np.where(target > x[-1], phi.slope_plus * target + b_plus, spline(np.clip(target, x[0], x[-1]))))
    logger.debug(f"重心归一化: 平移 {shift:.6g}")
    return RadialWeight(phi.grid, samples, phi.slope_minus, phi.slope_plus)


def solve_twisted_ke_report(tw: TwisterSpec, phi_init: RadialWeight, cfg: SolverConfig,
                            barycenter_target: Optional[float] = None) -> KESolution:
    """求解 phi'' = M e^{-phi-w} / int e^{-phi-w}"""
    _check_mass(phi_init, tw.mass_M)
    phi_init.check_convex(what="initial weight")
    eq = _twisted_equation(tw, phi_init)
    if tw.is_degenerate:
        if cfg.gauge != GaugeMode.CENTER_BARYCENTER:
            raise GaugeError(f"twister {tw.tag} admits the translation automorphism")
        if barycenter_target is None:
            phi_init = normalize_automorphism(phi_init)
            eq.barycenter = 0.0
        else:
            eq.barycenter = barycenter_target
    solver = MongeAmpereNewton(phi_init.grid, cfg)
    logger.info(f"开始求解扭曲 KE 方程: twister={tw.tag}, M={tw.mass_M:g}, gauge={cfg.gauge.value}")
    return solver.solve(eq, phi_init, _pin(phi_init.grid, cfg), label=f"ke[{tw.tag}]")


def solve_twisted_ke(tw: TwisterSpec, phi_init: RadialWeight, cfg: SolverConfig) -> RadialWeight:
    return solve_twisted_ke_report(tw, phi_init, cfg).weight


def ke_residual(phi: RadialWeight, tw: TwisterSpec) -> float:
    """sup |phi'' - M e^{-tau} / int e^{-tau}|（内部节点）"""
    return float(phi.degree * np.max(np.abs(ding_first_variation(phi, tw).samples[1:-1])))


def continuity_path(tw: TwisterSpec, phi0: RadialWeight, schedule: Sequence[float],
                    cfg: SolverConfig) -> List[RadialWeight]:
    """连续性路径 phi'' = M e^{-t*phi-(1-t)*phi0-w} / int(同)，热启动并对失败步二分"""
    schedule = [float(t) for t in schedule]
    if not schedule:
        raise LabError("continuity path needs a non-empty schedule")
    if schedule[0] != 0.0 or schedule[-1] != 1.0 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise LabError("schedule must increase from 0 to 1")
    _check_mass(phi0, tw.mass_M)

    solver = MongeAmpereNewton(phi0.grid, cfg)
    pin = _pin(phi0.grid, cfg)
    members: List[RadialWeight] = []
    current, t_done = phi0, None
    for t_target in schedule:
        pending = [t_target]
        halvings = 0
        while pending:
            t = pending[-1]
            eq = _twisted_equation(tw, phi0, t, phi0)
            if t == 1.0 and tw.is_degenerate:
                if cfg.gauge != GaugeMode.CENTER_BARYCENTER:
                    raise GaugeError(f"twister {tw.tag} admits the translation automorphism")
                eq.barycenter = 0.0
                current = normalize_automorphism(current)
            try:
                current = solver.solve(eq, current, pin, label=f"continuity[t={t:.4g}]").weight
                t_done = t
                pending.pop()
            except SolverDivergenceError as e:
                halvings += 1
                if halvings > cfg.bisections or t_done is None:
                    logger.error(f"连续性路径在 t={t:.4g} 处失败: {e}")
                    raise SolverDivergenceError(f"continuity path failed at t={t:.6g}", e.trace)
                midpoint = 0.5 * (t_done + t)
                logger.info(f"连续性路径: t={t:.4g} 失败，二分插入 t={midpoint:.4g}")
                pending.append(midpoint)
        members.append(current)
    return members


@dataclass
class CDSReport:
    """常数路径检验结果"""
    weights: List[RadialWeight]
    deviations: List[float]

    @property
    def max_deviation(self) -> float:
        return max(self.deviations)


def cds_path(phi_base: RadialWeight, schedule: Sequence[float], cfg: SolverConfig) -> CDSReport:
    """phi'' = C e^{-s(phi - phi_base)} phi_base''，C 由质量确定；检验解是否恒为 phi_base"""
    if not len(schedule):
        raise LabError("cds path needs a non-empty schedule")
    d2 = phi_base.hessian()
    if np.any(d2 <= 0.0):
        raise ConvexityError("cds path needs phi_base'' > 0", np.nonzero(d2 <= 0.0)[0])
    log_d2 = np.log(d2)
    h = phi_base.grid.h
    rate_minus = (log_d2[1] - log_d2[0]) / h
    rate_plus = -(log_d2[-1] - log_d2[-2]) / h
    solver = MongeAmpereNewton(phi_base.grid, cfg)
    pin = _pin(phi_base.grid, cfg)

    weights, deviations = [], []
    for s in schedule:
        s = float(s)
        eq = _Equation(s * phi_base.samples + log_d2, s, phi_base.degree, rate_minus, rate_plus)
        # 边界数据取自 phi_base 自身的离散残差，边界行在 phi_base 处恰为零
        eq.slope_targets, eq.offset_target = solver.boundary_defect(eq, phi_base)
        phi = solver.solve(eq, phi_base, pin, label=f"cds[s={s:.4g}]").weight
        weights.append(phi)
        deviations.append(float(np.max(np.abs(phi.samples - phi_base.samples))))
    logger.info(f"常数路径检验: 最大偏离 {max(deviations):.3e}")
    return CDSReport(weights, deviations)


def aligned_distance(phi: RadialWeight, psi: RadialWeight, window: float) -> float:
    """窗口 |x| <= window 内模去常数的 sup 距离"""
    mask = np.abs(phi.x) <= window
    diff = phi.samples[mask] - psi.samples[mask]
    return float(0.5 * (diff.max() - diff.min()))


def cone_limit_study(beta: float, eps_list: Sequence[float], window: float, cfg: SolverConfig,
                     grid: Grid, mass_scale: float = 1.0) -> Dict[str, Any]:
    """eps -> 0 时光滑化解收敛到锥角解"""
    eps_list = [float(e) for e in eps_list]
    if not eps_list or any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise LabError("eps_list must be positive and strictly decreasing")
    if window > grid.x_max:
        raise LabError(f"window {window} exceeds x_max {grid.x_max}")

    target = football(beta, grid)
    if mass_scale != 1.0:
        target = solve_twisted_ke(conical(beta, grid, mass_scale), target.scaled(mass_scale), cfg)
    rows = []
    current = target.without_curvature()
    for eps in eps_list:
        tw = smoothing_profile(beta, eps, grid, mass_scale)
        solution = solve_twisted_ke_report(tw, current, cfg)
        current = solution.weight
        report = ding_value(current, target, tw)
        rows.append({
            'eps': eps,
            'dist': aligned_distance(current, target, window),
            'mass': ma_density(current).mass,
            'F': report.F,
            'D': report.D,
            'residual': solution.residual,
            'symmetry': float(np.max(np.abs(current.samples - current.samples[::-1]))),
        })
    dists = [r['dist'] for r in rows]
    decreasing = all(b < a for a, b in zip(dists, dists[1:]))
    if not decreasing:
        logger.error(f"锥角极限距离未严格递减: {dists}")
    return {'beta': beta, 'window': window, 'rows': rows, 'decreasing': decreasing}


@dataclass
class UniquenessReport:
    """唯一性实验报告"""
    seeds: List[str]
    raw_distances: List[float]
    normalized_distances: List[float]
    residuals: List[float]
    verdict: str

    def as_dict(self) -> Dict[str, Any]:
        return {'seeds': self.seeds, 'raw_distances': self.raw_distances,
                'normalized_distances': self.normalized_distances,
                'residuals': self.residuals, 'verdict': self.verdict}


def uniqueness_experiment(tw: TwisterSpec, seeds: Sequence[RadialWeight], cfg: SolverConfig,
                          labels: Optional[Sequence[str]] = None, mapper=map) -> UniquenessReport:
    """从不同初值求解并比较；退化扭曲下比较平移归一化后的解

    mapper 可替换为线程池的 map，结果仍按初值顺序排列
    """
    if len(seeds) < 2:
        raise LabError(f"uniqueness experiment needs at least 2 seeds, got {len(seeds)}")
    labels = list(labels) if labels is not None else [f"seed{i}" for i in range(len(seeds))]
    def solve_one(seed: RadialWeight) -> KESolution:
        # 退化情形保留初值的位置，只在比较时商去平移
        target = barycenter(seed) if tw.is_degenerate else None
        return solve_twisted_ke_report(tw, seed, cfg, barycenter_target=target)

    solutions, residuals = [], []
    for label, solution in zip(labels, mapper(solve_one, seeds)):
        solutions.append(solution.weight)
        residuals.append(solution.residual)
        logger.info(f"唯一性实验: {label} 残差 {solution.residual:.3e}")

    normalized = [normalize_automorphism(s) for s in solutions]
    raw, norm = [], []
    for i, j in combinations(range(len(solutions)), 2):
        raw.append(float(np.max(np.abs(solutions[i].samples - solutions[j].samples))))
        norm.append(float(np.max(np.abs(normalized[i].samples - normalized[j].samples))))
    decisive = norm if tw.is_degenerate else raw
    verdict = "unique" if max(decisive) <= UNIQUE_TOL else "not unique"
    return UniquenessReport(labels, raw, norm, residuals, verdict)


__all__ = [
    'GaugeMode', 'SolverConfig', 'KESolution', 'TwisterKind', 'TwisterSpec', 'MongeAmpereNewton',
    'no_twister', 'smooth_background', 'smoothing_profile', 'conical', 'solve_twisted_ke',
    'solve_twisted_ke_report', 'ke_residual', 'continuity_path', 'cds_path', 'CDSReport',
    'cone_limit_study', 'normalize_automorphism', 'barycenter', 'uniqueness_experiment',
    'UniquenessReport', 'aligned_distance',
]
