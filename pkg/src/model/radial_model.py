import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import ConvexityError, GridError, IntegrabilityError

logger = logging.getLogger(__name__)

# 二阶导数差分模板（系数需再除以 h^2）
_D2_7 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
_D2_5 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D2_3 = np.array([1.0, -2.0, 1.0])
_D2_EDGE = np.array([2.0, -5.0, 4.0, -1.0])

# 一阶导数差分模板（系数需再除以 h）
_D1_7 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D1_5 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_3 = np.array([-1.0, 0.0, 1.0]) / 2.0
_D1_EDGE = np.array([-3.0, 4.0, -1.0]) / 2.0

CONVEXITY_TOL = 1e-9
SUPPORT_REL = 1e-8


class WeightKind(Enum):
    """闭式权函数类型"""
    FUBINI_STUDY = "fubini_study"
    FOOTBALL = "football"
    DIVISOR_BACKGROUND = "divisor_background"
    AFFINE = "affine"


@dataclass(frozen=True)
class Grid:
    """对称均匀网格 x_i = -x_max + i*h"""
    x_max: float
    n: int

    @property
    def h(self) -> float:
        return 2.0 * self.x_max / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return self.h * (np.arange(self.n, dtype=float) - self.n // 2)

    @property
    def center(self) -> int:
        return self.n // 2

    def quadrature_weights(self) -> np.ndarray:
        """梯形公式权重"""
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    def integrate(self, samples: np.ndarray) -> float:
        return float(np.dot(self.quadrature_weights(), samples))


def build_grid(x_max: float, n: int) -> Grid:
    """构造网格并校验参数"""
    if int(n) != n or n % 2 == 0:
        raise GridError(f"grid size must be odd, got n={n}")
    if n < 129:
        raise GridError(f"grid size must be >= 129, got n={n}")
    if x_max < 10:
        raise GridError(f"x_max must be >= 10 (tails of e^-tau not negligible), got {x_max}")
    return Grid(float(x_max), int(n))


def _apply_stencil(samples: np.ndarray, center: np.ndarray, near: list, edge: np.ndarray) -> np.ndarray:
    """按中心模板、近边界模板和单侧模板计算导数"""
    n = len(samples)
    out = np.empty(n)
    half = len(center) // 2
    acc = np.zeros(n - 2 * half)
    for k, c in enumerate(center):
        if c != 0.0:
            acc += c * samples[k:n - 2 * half + k]
    out[half:n - half] = acc
    # 靠近边界逐级降阶
    for offset, stencil in near:
        r = len(stencil) // 2
        for i in (offset, n - 1 - offset):
            out[i] = np.dot(stencil, samples[i - r:i + r + 1])
    m = len(edge)
    out[0] = np.dot(edge, samples[:m])
    sign = -1.0 if edge is _D1_EDGE else 1.0
    out[-1] = sign * np.dot(edge, samples[::-1][:m])
    return out


def second_derivative(samples: np.ndarray, h: float) -> np.ndarray:
    """六阶中心差分，边界附近降阶，端点单侧二阶"""
    return _apply_stencil(np.asarray(samples, dtype=float), _D2_7,
                          [(2, _D2_5), (1, _D2_3)], _D2_EDGE) / h ** 2


def first_derivative(samples: np.ndarray, h: float) -> np.ndarray:
    """六阶中心差分一阶导数"""
    return _apply_stencil(np.asarray(samples, dtype=float), _D1_7,
                          [(2, _D1_5), (1, _D1_3)], _D1_EDGE) / h


def second_derivative_operator(n: int, h: float) -> sp.csr_matrix:
    """与 second_derivative 一致的稀疏矩阵"""
    rows, cols, vals = [], [], []

    def put(i: int, start: int, stencil: np.ndarray):
        for k, c in enumerate(stencil):
            rows.append(i)
            cols.append(start + k)
            vals.append(c)

    for i in range(3, n - 3):
        put(i, i - 3, _D2_7)
    for i in (2, n - 3):
        put(i, i - 2, _D2_5)
    for i in (1, n - 2):
        put(i, i - 1, _D2_3)
    put(0, 0, _D2_EDGE)
    put(n - 1, n - 4, _D2_EDGE[::-1])
    return sp.csr_matrix((np.array(vals) / h ** 2, (rows, cols)), shape=(n, n))


def edge_derivative_rows(n: int, h: float) -> Tuple[dict, dict]:
    """两端单侧一阶导数的系数 {列: 系数}"""
    left = {0: -1.5 / h, 1: 2.0 / h, 2: -0.5 / h}
    right = {n - 1: 1.5 / h, n - 2: -2.0 / h, n - 3: 0.5 / h}
    return left, right


def sech2(y: np.ndarray) -> np.ndarray:
    """数值稳定的 sech^2"""
    e = np.exp(-2.0 * np.abs(y))
    return 4.0 * e / (1.0 + e) ** 2


def log2cosh(y: np.ndarray) -> np.ndarray:
    """log(2cosh(y))"""
    return np.logaddexp(y, -y)


@dataclass(frozen=True, eq=False)
class RadialWeight:
    """直线上的权函数及其渐近斜率"""
    grid: Grid
    samples: np.ndarray
    slope_minus: float
    slope_plus: float
    curvature: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.shape != (self.grid.n,):
            raise GridError(f"expected {self.grid.n} samples, got {samples.shape}")
        object.__setattr__(self, 'samples', samples)
        if self.curvature is not None:
            object.__setattr__(self, 'curvature', np.asarray(self.curvature, dtype=float))

    @classmethod
    def from_function(cls, grid: Grid, f: Callable[[np.ndarray], np.ndarray],
                      slope_minus: float, slope_plus: float,
                      d2: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> "RadialWeight":
        x = grid.x
        return cls(grid, f(x), slope_minus, slope_plus, None if d2 is None else d2(x))

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @property
    def degree(self) -> float:
        return self.slope_plus - self.slope_minus

    @property
    def tail_offsets(self) -> Tuple[float, float]:
        """(b-, b+)，网格外 w(x) ~ a*x + b"""
        x = self.x
        return (float(self.samples[0] - self.slope_minus * x[0]),
                float(self.samples[-1] - self.slope_plus * x[-1]))

    def hessian(self) -> np.ndarray:
        """二阶导数：优先使用携带的闭式曲率"""
        if self.curvature is not None:
            return self.curvature
        return second_derivative(self.samples, self.grid.h)

    def gradient(self) -> np.ndarray:
        return first_derivative(self.samples, self.grid.h)

    def edge_slope_error(self) -> float:
        g = self.gradient()
        return float(max(abs(g[0] - self.slope_minus), abs(g[-1] - self.slope_plus)))

    def nonconvex_nodes(self, strict: bool = False) -> np.ndarray:
        d2 = self.hessian()
        tol = CONVEXITY_TOL * max(1.0, float(np.max(np.abs(d2))))
        bad = d2[1:-1] <= 0.0 if strict else d2[1:-1] < -tol
        return np.nonzero(bad)[0] + 1

    def check_convex(self, strict: bool = False, what: str = "weight"):
        bad = self.nonconvex_nodes(strict)
        if len(bad):
            raise ConvexityError(f"{what} is not convex", bad.tolist())

    def support(self, rel: float = SUPPORT_REL) -> slice:
        """曲率可分辨的连续区间（围绕曲率最大点）"""
        d2 = self.hessian()
        peak = int(np.argmax(d2))
        ok = d2 > rel * d2[peak]
        lo = peak
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        hi = peak
        while hi < len(d2) - 1 and ok[hi + 1]:
            hi += 1
        return slice(lo, hi + 1)

    def __add__(self, other: Union["RadialWeight", float]) -> "RadialWeight":
        if isinstance(other, RadialWeight):
            if other.grid != self.grid:
                raise GridError("weights live on different grids")
            return RadialWeight(self.grid, self.samples + other.samples,
                                self.slope_minus + other.slope_minus,
                                self.slope_plus + other.slope_plus,
                                self.hessian() + other.hessian())
        return RadialWeight(self.grid, self.samples + float(other),
                            self.slope_minus, self.slope_plus, self.curvature)

    __radd__ = __add__

    def __sub__(self, other: float) -> "RadialWeight":
        return self + (-float(other))

    def scaled(self, factor: float) -> "RadialWeight":
        curvature = None if self.curvature is None else factor * self.curvature
        return RadialWeight(self.grid, factor * self.samples,
                            factor * self.slope_minus, factor * self.slope_plus, curvature)

    def without_curvature(self) -> "RadialWeight":
        return RadialWeight(self.grid, self.samples, self.slope_minus, self.slope_plus)


@dataclass(frozen=True, eq=False)
class Density:
    """网格上的密度及其总质量"""
    grid: Grid
    samples: np.ndarray
    mass: float


def canonical_weight(kind: Union[str, WeightKind], grid: Grid, beta: Optional[float] = None,
                     a: float = 0.0, b: float = 0.0, shift: float = 0.0) -> RadialWeight:
    """闭式权函数；shift 表示 x -> x + shift 的平移"""
    kind = WeightKind(kind)
    if kind in (WeightKind.FUBINI_STUDY, WeightKind.DIVISOR_BACKGROUND):
        return RadialWeight.from_function(
            grid, lambda x: 2.0 * log2cosh((x + shift) / 2.0), -1.0, 1.0,
            lambda x: 0.5 * sech2((x + shift) / 2.0))
    if kind == WeightKind.FOOTBALL:
        if beta is None or not 0.0 < beta < 1.0:
            raise ValueError(f"cone angle beta must lie in (0, 1), got {beta}")
        return RadialWeight.from_function(
            grid, lambda x: 2.0 * log2cosh(beta * (x + shift) / 2.0), -beta, beta,
            lambda x: 0.5 * beta ** 2 * sech2(beta * (x + shift) / 2.0))
    return RadialWeight.from_function(grid, lambda x: a * (x + shift) + b, a, a, lambda x: np.zeros_like(x))


def fubini_study(grid: Grid, shift: float = 0.0) -> RadialWeight:
    return canonical_weight(WeightKind.FUBINI_STUDY, grid, shift=shift)


def football(beta: float, grid: Grid, shift: float = 0.0) -> RadialWeight:
    return canonical_weight(WeightKind.FOOTBALL, grid, beta=beta, shift=shift)


def divisor_background(grid: Grid) -> RadialWeight:
    return canonical_weight(WeightKind.DIVISOR_BACKGROUND, grid)


def affine(a: float, b: float, grid: Grid) -> RadialWeight:
    return canonical_weight(WeightKind.AFFINE, grid, a=a, b=b)


def ma_density(phi: RadialWeight) -> Density:
    """Monge-Ampere 密度 phi''

    质量 = 梯形积分 + 网格外尾部 (a+ - w'(x_max)) + (w'(-x_max) - a-)
    """
    phi.check_convex(what="Monge-Ampere input")
    d2 = phi.hessian()
    g = phi.gradient()
    tails = (phi.slope_plus - g[-1]) + (g[0] - phi.slope_minus)
    return Density(phi.grid, d2, phi.grid.integrate(d2) + float(tails))


def volume_weights(grid: Grid, rate_minus: float, rate_plus: float) -> np.ndarray:
    """梯形权重加指数尾部解析积分与端点修正"""
    if rate_minus <= 0.0 or rate_plus <= 0.0:
        raise IntegrabilityError(f"non-integrable tails: decay rates ({rate_minus}, {rate_plus})")
    w = grid.quadrature_weights()
    h2 = grid.h ** 2 / 12.0
    w[0] += 1.0 / rate_minus + h2 * rate_minus
    w[-1] += 1.0 / rate_plus + h2 * rate_plus
    return w


def volume_density(tau: RadialWeight) -> Density:
    """体积密度 e^{-tau}"""
    if not (tau.slope_minus < 0.0 < tau.slope_plus):
        raise IntegrabilityError(
            f"e^-tau not integrable: slopes ({tau.slope_minus}, {tau.slope_plus})")
    e = np.exp(-tau.samples)
    w = volume_weights(tau.grid, -tau.slope_minus, tau.slope_plus)
    return Density(tau.grid, e, float(np.dot(w, e)))


def ricci_density(phi: RadialWeight) -> Density:
    """Ricci 密度 -(log phi'')''；曲率支撑外视为仿射尾部，Ricci 为零"""
    phi.check_convex(what="Ricci input")
    d2 = phi.hessian()
    window = phi.support()
    if window.stop - window.start < 7:
        raise ConvexityError("Ricci density needs phi'' > 0 on a resolved interval",
                             list(range(window.start, window.stop)))
    ric = np.zeros(phi.grid.n)
    ric[window] = -second_derivative(np.log(d2[window]), phi.grid.h)
    return Density(phi.grid, ric, phi.grid.integrate(ric))


def save_weight(weight: RadialWeight, path: str):
    """以文本表格保存权函数"""
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# x w\n")
        for xi, wi in zip(weight.x, weight.samples):
            f.write(f"{xi:.17g}\t{wi:.17g}\n")
        f.write(f"# slope_minus={weight.slope_minus:.17g}\n")
        f.write(f"# slope_plus={weight.slope_plus:.17g}\n")
    logger.debug(f"权函数已保存: {path}")


def load_weight(path: str) -> RadialWeight:
    """读取 save_weight 写出的表格"""
    xs, ws, meta = [], [], {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith('#'):
                body = line[1:].strip()
                if '=' in body:
                    key, value = body.split('=', 1)
                    meta[key.strip()] = float(value)
                continue
            xi, wi = line.split('\t')
            xs.append(float(xi))
            ws.append(float(wi))
    if 'slope_minus' not in meta or 'slope_plus' not in meta:
        raise GridError(f"missing slope trailer in {path}")
    grid = build_grid(-xs[0], len(xs))
    if np.max(np.abs(grid.x - np.array(xs))) > 1e-12 * grid.x_max:
        raise GridError(f"nodes in {path} are not a uniform symmetric grid")
    return RadialWeight(grid, np.array(ws), meta['slope_minus'], meta['slope_plus'])
