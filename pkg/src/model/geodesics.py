import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.interpolate import BPoly, CubicSpline
from scipy.sparse.linalg import splu

from .errors import ConvexityError, LabError, SlopeMismatchError, SolverDivergenceError
from .functionals import ding_value
from .radial_model import (CONVEXITY_TOL, SUPPORT_REL, Grid, RadialWeight, first_derivative,
                           second_derivative, volume_density)
from .spectral import WeightedForms, delta_tau, k_gap
from .twister import TwisterSpec

logger = logging.getLogger(__name__)

SLOPE_TOL = 1e-12
DEFECT_REL = 1e-6
IDENTITY_REL = 1e-3
ELLIPTIC_REL = 1e-4


@dataclass
class LegendreDual:
    """凸共轭 phi*(p) 在 [a-, a+] 上的采样"""
    p: np.ndarray
    values: np.ndarray
    argmax: np.ndarray


@dataclass
class GeodesicPath:
    """时间参数化的权函数族 phi_s"""
    grid: Grid
    times: np.ndarray
    samples: np.ndarray
    slope_minus: float
    slope_plus: float
    residual: Optional[float] = None
    trace: List[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.times)

    @property
    def ds(self) -> float:
        return float(self.times[1] - self.times[0])

    def weight(self, j: int) -> RadialWeight:
        return RadialWeight(self.grid, self.samples[j], self.slope_minus, self.slope_plus)

    @property
    def weights(self) -> List[RadialWeight]:
        return [self.weight(j) for j in range(self.m)]

    def velocity(self) -> np.ndarray:
        return np.gradient(self.samples, self.ds, axis=0, edge_order=2)

    def acceleration(self) -> np.ndarray:
        U, ds = self.samples, self.ds
        acc = np.empty_like(U)
        acc[1:-1] = (U[2:] - 2.0 * U[1:-1] + U[:-2]) / ds ** 2
        if self.m >= 4:
            acc[0] = (2.0 * U[0] - 5.0 * U[1] + 4.0 * U[2] - U[3]) / ds ** 2
            acc[-1] = (2.0 * U[-1] - 5.0 * U[-2] + 4.0 * U[-3] - U[-4]) / ds ** 2
        else:
            acc[0] = acc[-1] = acc[1]
        return acc


@dataclass
class AuditRow:
    """沿测地线的 Ding 二阶变分分解"""
    s: float
    D: float
    D_second: float
    delta_tau: float
    k_term: float
    f_weighted: float
    E_second: float
    volume: float

    @property
    def assembled(self) -> float:
        return -self.E_second + (self.delta_tau + self.k_term + self.f_weighted * self.volume) / self.volume


@dataclass
class DefectReport:
    f: np.ndarray
    f_tau: np.ndarray
    identity_min: Optional[float] = None
    identity_max: Optional[float] = None

    def sup(self, interior: bool = True) -> float:
        f = self.f[1:-1] if interior else self.f
        return float(np.max(np.abs(f)))


def time_grid(m: int) -> np.ndarray:
    if m < 3:
        raise LabError(f"time grid needs m >= 3, got {m}")
    return np.linspace(0.0, 1.0, m)


def _check_endpoints(phi0: RadialWeight, phi1: RadialWeight):
    if (abs(phi0.slope_minus - phi1.slope_minus) > SLOPE_TOL
            or abs(phi0.slope_plus - phi1.slope_plus) > SLOPE_TOL):
        raise SlopeMismatchError(
            f"({phi0.slope_minus:g}, {phi0.slope_plus:g}) vs ({phi1.slope_minus:g}, {phi1.slope_plus:g})")
    if phi0.grid != phi1.grid:
        raise LabError("endpoints live on different grids")
    phi0.check_convex(what="geodesic start")
    phi1.check_convex(what="geodesic end")


def _inverse_gradient(phi: RadialWeight):
    """可分辨支撑上的 (phi', x) 单调对"""
    support = phi.support(SUPPORT_REL)
    g = phi.gradient()[support]
    x = phi.x[support]
    keep = np.concatenate([[True], np.diff(g) > 0.0])
    return g[keep], x[keep]


def legendre_dual(phi: RadialWeight, n_p: Optional[int] = None) -> LegendreDual:
    """phi*(p) = sup_x (p*x - phi(x))"""
    if phi.degree <= 0.0:
        raise LabError("Legendre dual needs slope_minus < slope_plus")
    phi.check_convex(what="Legendre input")
    n_p = n_p or phi.grid.n
    p = np.linspace(phi.slope_minus, phi.slope_plus, n_p)
    g, xs = _inverse_gradient(phi)
    x = phi.x
    argmax = np.where(p <= g[0], x[0], np.where(p >= g[-1], x[-1], 0.0))
    inside = (p > g[0]) & (p < g[-1])
    quintic = _quintic(phi)
    argmax[inside] = _gradient_inverse(phi, quintic, p[inside])
    values = p * argmax - quintic(argmax)
    # 区间外的 p 取网格上的离散上确界
    outside = ~inside
    if np.any(outside):
        brute = np.max(np.outer(p[outside], x) - phi.samples[None, :], axis=1)
        values[outside] = brute
    return LegendreDual(p, values, argmax)


def legendre_inverse(dual: LegendreDual, grid: Grid, chunk: int = 256) -> np.ndarray:
    """(phi*)*(x) = max_p (p*x - phi*(p))"""
    x = grid.x
    out = np.empty(grid.n)
    for start in range(0, grid.n, chunk):
        xs = x[start:start + chunk]
        out[start:start + chunk] = np.max(np.outer(xs, dual.p) - dual.values[None, :], axis=1)
    return out


def _quintic(phi: RadialWeight) -> BPoly:
    """以 (phi, phi', phi'') 为节点数据的五次 Hermite 插值"""
    data = np.column_stack([phi.samples, phi.gradient(), phi.hessian()])
    return BPoly.from_derivatives(phi.x, data)


def _gradient_inverse(phi: RadialWeight, quintic: BPoly, P: np.ndarray, steps: int = 3) -> np.ndarray:
    """求 phi'(x) = P：样条初值后做牛顿修正"""
    g, xs = _inverse_gradient(phi)
    x = CubicSpline(g, xs)(P)
    d1, d2 = quintic.derivative(1), quintic.derivative(2)
    for _ in range(steps):
        x = np.clip(x - (d1(x) - P) / d2(x), xs[0], xs[-1])
    return x


def exact_geodesic(phi0: RadialWeight, phi1: RadialWeight, m: int) -> GeodesicPath:
    """phi_s = ((1-s) phi0* + s phi1*)*，经梯度映射参数化并 Hermite 重采样"""
    _check_endpoints(phi0, phi1)
    times = time_grid(m)
    g0, _ = _inverse_gradient(phi0)
    g1, _ = _inverse_gradient(phi1)
    lo, hi = max(g0[0], g1[0]), min(g0[-1], g1[-1])
    P = np.unique(np.concatenate([g0, g1]))
    P = P[(P >= lo) & (P <= hi)]
    P = P[np.concatenate([[True], np.diff(P) > 1e-14])]

    q0, q1 = _quintic(phi0), _quintic(phi1)
    xp0 = _gradient_inverse(phi0, q0, P)
    xp1 = _gradient_inverse(phi1, q1, P)
    dual0 = P * xp0 - q0(xp0)
    dual1 = P * xp1 - q1(xp1)
    # phi_s'' = 1 / x_s'(P)
    inv0 = 1.0 / q0.derivative(2)(xp0)
    inv1 = 1.0 / q1.derivative(2)(xp1)

    x = phi0.x
    samples = np.empty((m, phi0.grid.n))
    samples[0] = phi0.samples
    samples[-1] = phi1.samples
    for j in range(1, m - 1):
        s = times[j]
        xs = (1.0 - s) * xp0 + s * xp1
        ys = P * xs - ((1.0 - s) * dual0 + s * dual1)
        curvature = 1.0 / ((1.0 - s) * inv0 + s * inv1)
        order = np.concatenate([[True], np.diff(xs) > 1e-14])
        xs, ys, ps, cs = xs[order], ys[order], P[order], curvature[order]
        inside = (x >= xs[0]) & (x <= xs[-1])
        row = np.empty_like(x)
        row[inside] = BPoly.from_derivatives(xs, np.column_stack([ys, ps, cs]))(x[inside])
        # 可分辨区域外沿切线延拓
        left = x < xs[0]
        right = x > xs[-1]
        row[left] = ys[0] + ps[0] * (x[left] - xs[0])
        row[right] = ys[-1] + ps[-1] * (x[right] - xs[-1])
        samples[j] = row
    logger.debug(f"Legendre 测地线: m={m}, 参数点 {len(P)}")
    return GeodesicPath(phi0.grid, times, samples, phi0.slope_minus, phi0.slope_plus)


def _space_derivatives(path: GeodesicPath):
    h = path.grid.h
    U = path.samples
    Uxx = np.array([second_derivative(row, h) for row in U])
    Usx = np.array([first_derivative(row, h) for row in path.velocity()])
    return Uxx, Usx


def geodesic_defect(path: GeodesicPath, eps: float = 0.0, tw: Optional[TwisterSpec] = None,
                    rho: Optional[np.ndarray] = None) -> DefectReport:
    """f = phi_ss - phi_sx^2/phi_xx，f_tau 以 tau'' 代替 phi''"""
    if path.m < 3:
        raise LabError("defect needs at least 3 times")
    Uxx, Usx = _space_derivatives(path)
    Uss = path.acceleration()
    twist = tw.weight.hessian() if tw is not None else np.zeros(path.grid.n)
    f = np.zeros_like(Uxx)
    f_tau = np.zeros_like(Uxx)
    for j in range(path.m):
        row = Uxx[j]
        scale = float(np.max(row))
        bad = np.nonzero(row[1:-1] < -CONVEXITY_TOL * max(1.0, scale))[0] + 1
        if len(bad):
            raise ConvexityError(f"phi_xx <= 0 at time s={path.times[j]:.4g}", bad.tolist())
        mask = row > DEFECT_REL * scale
        f[j, mask] = Uss[j, mask] - Usx[j, mask] ** 2 / row[mask]
        tau_xx = row + twist
        f_tau[j, mask] = Uss[j, mask] - Usx[j, mask] ** 2 / tau_xx[mask]

    report = DefectReport(f, f_tau)
    if eps > 0.0:
        if rho is None:
            rho = path.weight(0).hessian()
        ratios = []
        for j in range(1, path.m - 1):
            mask = Uxx[j] > DEFECT_REL * float(np.max(Uxx[j]))
            mask &= rho > IDENTITY_REL * float(np.max(rho))
            ratios.append(f[j, mask] * Uxx[j, mask] / rho[mask])
        ratios = np.concatenate(ratios)
        report.identity_min = float(ratios.min())
        report.identity_max = float(ratios.max())
    return report


def convexity_audit(path: GeodesicPath, tw: TwisterSpec, defects: Optional[DefectReport] = None) -> List[AuditRow]:
    """沿路径逐时刻计算 D, D'', delta_tau, k, int f e^{-tau}, E''"""
    grid = path.grid
    defects = defects or geodesic_defect(path, tw=tw)
    velocity = path.velocity()
    start = path.weight(0)
    Uxx, _ = _space_derivatives(path)

    values = []
    for j in range(path.m):
        phi = path.weight(j)
        tau = tw.total_weight(phi)
        u = velocity[j]
        forms = WeightedForms(tau)
        volume = volume_density(tau)
        f = defects.f[j]
        values.append({
            'D': ding_value(phi, start, tw).D,
            'delta_tau': delta_tau(tau, u, forms),
            'k': k_gap(phi, tau, u),
            'f_weighted': grid.integrate(f * volume.samples) / volume.mass,
            'E_second': grid.integrate(f * Uxx[j]) / phi.degree,
            'volume': volume.mass,
        })

    D = np.array([v['D'] for v in values])
    ds = path.ds
    D2 = np.empty_like(D)
    D2[1:-1] = (D[2:] - 2.0 * D[1:-1] + D[:-2]) / ds ** 2
    if path.m >= 4:
        D2[0] = (2.0 * D[0] - 5.0 * D[1] + 4.0 * D[2] - D[3]) / ds ** 2
        D2[-1] = (2.0 * D[-1] - 5.0 * D[-2] + 4.0 * D[-3] - D[-4]) / ds ** 2
    else:
        D2[0] = D2[-1] = D2[1]

    rows = [AuditRow(float(path.times[j]), float(D[j]), float(D2[j]), v['delta_tau'], v['k'],
                     v['f_weighted'], v['E_second'], v['volume']) for j, v in enumerate(values)]
    worst = max(abs(r.D_second - r.assembled) for r in rows[1:-1]) if path.m > 2 else 0.0
    logger.info(f"凸性审计: {path.m} 个时刻, min D''={D2[1:-1].min():.3e}, 分解偏差 {worst:.3e}")
    return rows


class EpsilonGeodesicSolver:
    """二维实 Monge-Ampere 方程 U_ss U_xx - U_sx^2 = eps*rho 的牛顿求解"""

    def __init__(self, grid: Grid, m: int, cfg):
        self.grid = grid
        self.m = m
        self.cfg = cfg
        self.times = time_grid(m)
        self.logger = logging.getLogger(__name__)
        n, mi = grid.n, m - 2
        h, ds = grid.h, 1.0 / (m - 1)
        self.n, self.mi, self.h, self.ds = n, mi, h, ds
        S2 = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(mi, mi)) / ds ** 2
        S1 = sp.diags([-1.0, 1.0], [-1, 1], shape=(mi, mi)) / (2.0 * ds)
        X2 = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / h ** 2
        X1 = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n)) / (2.0 * h)
        E = sp.lil_matrix((n, n))
        E[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
        E[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2.0 * h)
        I_n, I_m = sp.identity(n), sp.identity(mi)
        # 未知量按空间优先排列: k = i*mi + (j-1)
        self.K_ss = sp.kron(I_n, S2).tocsr()
        self.K_xx = sp.kron(X2, I_m).tocsr()
        self.K_sx = sp.kron(X1, S1).tocsr()
        self.K_edge = sp.kron(E.tocsr(), I_m).tocsr()
        interior = np.zeros(n)
        interior[1:-1] = 1.0
        self.interior = np.repeat(interior, mi)

    def _flat(self, a: np.ndarray) -> np.ndarray:
        return a.T.ravel()

    def _derivatives(self, U: np.ndarray):
        h, ds = self.h, self.ds
        Uss = np.zeros((self.mi, self.n))
        Uxx = np.zeros((self.mi, self.n))
        Usx = np.zeros((self.mi, self.n))
        Uss[:] = (U[2:] - 2.0 * U[1:-1] + U[:-2]) / ds ** 2
        Uxx[:, 1:-1] = (U[1:-1, 2:] - 2.0 * U[1:-1, 1:-1] + U[1:-1, :-2]) / h ** 2
        Usx[:, 1:-1] = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4.0 * ds * h)
        return Uss, Uxx, Usx

    def _residual(self, U, eps, rho, slopes):
        Uss, Uxx, Usx = self._derivatives(U)
        R = Uss * Uxx - Usx ** 2 - eps * rho[None, :]
        h = self.h
        R[:, 0] = (-3.0 * U[1:-1, 0] + 4.0 * U[1:-1, 1] - U[1:-1, 2]) / (2.0 * h) - slopes[0]
        R[:, -1] = (3.0 * U[1:-1, -1] - 4.0 * U[1:-1, -2] + U[1:-1, -3]) / (2.0 * h) - slopes[1]
        return R, (Uss, Uxx, Usx)

    def _elliptic(self, parts, window: np.ndarray) -> bool:
        """曲率支撑内 U_xx > 0 且 U_ss > 0"""
        Uss, Uxx, _ = parts
        return bool(np.all(Uxx[:, window] > 0.0) and np.all(Uss[:, window] > 0.0))

    def solve(self, phi0: RadialWeight, phi1: RadialWeight, eps: float, start: np.ndarray) -> GeodesicPath:
        """从 start 出发的阻尼牛顿迭代；试探步不得离开椭圆分支"""
        s = self.times[1:-1]
        g0, g1 = phi0.gradient(), phi1.gradient()
        slopes = ((1.0 - s) * g0[0] + s * g1[0], (1.0 - s) * g0[-1] + s * g1[-1])
        rho = phi0.hessian()
        window = np.zeros(self.n, dtype=bool)
        window[phi0.support(ELLIPTIC_REL)] = True
        window[[0, -1]] = False
        U = np.array(start, dtype=float)
        U[0], U[-1] = phi0.samples, phi1.samples

        R, parts = self._residual(U, eps, rho, slopes)
        norm = float(np.max(np.abs(R)))
        trace: List[float] = []
        for iteration in range(self.cfg.max_iter + 1):
            trace.append(norm)
            if norm <= self.cfg.tol:
                self.logger.info(f"eps 测地线收敛: eps={eps:g}, 迭代 {iteration} 次, 残差 {norm:.3e}")
                return GeodesicPath(self.grid, self.times, U, phi0.slope_minus, phi0.slope_plus, norm, trace)
            if iteration == self.cfg.max_iter:
                break
            Uss, Uxx, Usx = parts
            J = (sp.diags(self.interior * self._flat(Uxx)) @ self.K_ss
                 + sp.diags(self.interior * self._flat(Uss)) @ self.K_xx
                 - 2.0 * sp.diags(self.interior * self._flat(Usx)) @ self.K_sx
                 + self.K_edge)
            try:
                delta = splu(J.tocsc()).solve(-self._flat(R))
            except RuntimeError as e:
                raise SolverDivergenceError(f"eps geodesic: singular Jacobian ({e})", trace)
            delta = delta.reshape(self.n, self.mi).T

            keep = self._elliptic(parts, window)
            step = 1.0
            for _ in range(self.cfg.damping + 1):
                trial = U.copy()
                trial[1:-1] += step * delta
                R_t, parts_t = self._residual(trial, eps, rho, slopes)
                norm_t = float(np.max(np.abs(R_t)))
                if np.isfinite(norm_t) and norm_t < norm and (not keep or self._elliptic(parts_t, window)):
                    break
                step *= 0.5
            else:
                self.logger.error(f"eps 测地线: 步长减半 {self.cfg.damping} 次仍未下降")
                raise SolverDivergenceError(f"eps geodesic: damping exhausted (eps={eps:g})", trace)
            U, R, parts, norm = trial, R_t, parts_t, norm_t
            self.logger.debug(f"eps 测地线: 迭代 {iteration + 1}, 残差 {norm:.3e}, 步长 {step:g}")
        raise SolverDivergenceError(f"eps geodesic: maximum iterations reached (eps={eps:g})", trace)


def _lift(samples: np.ndarray, times: np.ndarray, amount: float) -> np.ndarray:
    """加上 amount * s(s-1)/2，即 eps 变化 amount 时的一阶修正"""
    U = samples.copy()
    U += amount * (0.5 * times * (times - 1.0))[:, None]
    return U


def _check_path_convex(path: GeodesicPath):
    Uxx, _ = _space_derivatives(path)
    for j in range(1, path.m - 1):
        row = Uxx[j]
        bad = np.nonzero(row[1:-1] < -CONVEXITY_TOL * max(1.0, float(np.max(row))))[0] + 1
        if len(bad):
            raise ConvexityError(f"eps geodesic lost convexity at s={path.times[j]:.4g}", bad.tolist())


def epsilon_geodesic(phi0: RadialWeight, phi1: RadialWeight, eps: float, cfg, m: int = 65,
                     start: Optional[GeodesicPath] = None) -> GeodesicPath:
    """eps 近似测地线，Dirichlet 时间边界与线性插值的斜率条件

    初值取 Legendre 测地线；直接求解失败时改用 continued_epsilon_geodesic。
    """
    if eps <= 0.0:
        raise LabError("eps must be positive; use exact_geodesic for eps = 0")
    _check_endpoints(phi0, phi1)
    if start is None:
        start = exact_geodesic(phi0, phi1, m)
    solver = EpsilonGeodesicSolver(phi0.grid, m, cfg)
    try:
        path = solver.solve(phi0, phi1, eps, _lift(start.samples, solver.times, eps))
        _check_path_convex(path)
        return path
    except (SolverDivergenceError, ConvexityError) as e:
        if cfg.continuation_steps == 0:
            raise
        logger.warning(f"eps={eps:g} 直接求解失败 ({e})，改为逐级延拓")
    return continued_epsilon_geodesic(phi0, phi1, eps, cfg, m, start)


def continued_epsilon_geodesic(phi0: RadialWeight, phi1: RadialWeight, eps: float, cfg, m: int = 65,
                               start: Optional[GeodesicPath] = None) -> GeodesicPath:
    """从 2^k * eps 逐级减半到 eps（k = continuation_steps, ..., 0），每级以上一级的解为初值"""
    if eps <= 0.0:
        raise LabError("eps must be positive; use exact_geodesic for eps = 0")
    _check_endpoints(phi0, phi1)
    if start is None:
        start = exact_geodesic(phi0, phi1, m)
    solver = EpsilonGeodesicSolver(phi0.grid, m, cfg)
    guess, previous = start.samples, 0.0
    for k in range(cfg.continuation_steps, -1, -1):
        level = eps * 2.0 ** k
        path = solver.solve(phi0, phi1, level, _lift(guess, solver.times, level - previous))
        guess, previous = path.samples, level
    _check_path_convex(path)
    return path


def path_energy_budget(path: GeodesicPath, tw: TwisterSpec) -> float:
    """int_0^1 int (f + delta_tau + k) e^{-tau}"""
    rows = convexity_audit(path, tw)
    per_time = np.array([r.f_weighted * r.volume + r.delta_tau + r.k_term for r in rows])
    return float(trapezoid(per_time, path.times))


def budget_within_fit(eps: Sequence[float], budgets: Sequence[float], factor: float = 2.5) -> bool:
    """每个 eps 处的能量预算不超过更小 eps 处线性拟合预测值的 factor 倍"""
    order = np.argsort(eps)
    e = np.asarray(eps, dtype=float)[order]
    b = np.asarray(budgets, dtype=float)[order]
    for k in range(1, len(e)):
        if k == 1:
            predicted = b[0] / e[0] * e[1]
        else:
            slope, intercept = np.polyfit(e[:k], b[:k], 1)
            predicted = slope * e[k] + intercept
        if b[k] > factor * predicted:
            logger.warning(f"能量预算超出拟合: eps={e[k]:g}, 预算 {b[k]:.4g}, 预测 {predicted:.4g}")
            return False
    return True


def epsilon_convergence(phi0: RadialWeight, phi1: RadialWeight, eps_list: Sequence[float], cfg,
                        tw: TwisterSpec, m: int = 65) -> Dict[str, Any]:
    """eps 减半时到 Legendre 测地线的距离比值与观测常数 C"""
    exact = exact_geodesic(phi0, phi1, m)
    rows = []
    for eps in eps_list:
        path = epsilon_geodesic(phi0, phi1, eps, cfg, m, start=exact)
        budget = path_energy_budget(path, tw)
        rows.append({'eps': float(eps),
                     'dist': float(np.max(np.abs(path.samples - exact.samples))),
                     'residual': path.residual,
                     'budget': budget,
                     'C': budget / eps})
    ratios = [a['dist'] / b['dist'] for a, b in zip(rows, rows[1:])]
    within = budget_within_fit([r['eps'] for r in rows], [r['budget'] for r in rows])
    return {'rows': rows, 'ratios': ratios, 'C_observed': max(r['C'] for r in rows), 'budget_ok': within}
