import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvexityError, LabError
from .radial_model import SUPPORT_REL, RadialWeight, first_derivative, volume_weights
from .twister import TwisterSpec

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-10
CHI_POSITIVE = 1e-8
OPEN_WINDOW = 5
VERDICT_ANNIHILATES = "field annihilates twister"
VERDICT_CONTRADICTION = "contradiction: field must vanish"
VERDICT_INCONCLUSIVE = "inconclusive"


@dataclass
class SpectralPair:
    """加权 Laplace 算子的特征对"""
    eigenvalue: float
    u: np.ndarray
    rayleigh_residual: float


@dataclass
class FieldReport:
    """全纯向量场 c*z d/dz 的拟合"""
    c: float
    defect: float


def _staggered_difference(N: int, h: float) -> sp.csr_matrix:
    """半节点上的四阶交错差分，两端退化为二阶"""
    rows, cols, vals = [], [], []
    for k in range(N - 1):
        if 1 <= k <= N - 3:
            for j, c in zip((k - 1, k, k + 1, k + 2), (1.0, -27.0, 27.0, -1.0)):
                rows.append(k)
                cols.append(j)
                vals.append(c / (24.0 * h))
        else:
            rows += [k, k]
            cols += [k, k + 1]
            vals += [-1.0 / h, 1.0 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(N - 1, N))


def _midpoints(values: np.ndarray) -> np.ndarray:
    """节点值插值到半节点（四阶，两端线性）"""
    mid = 0.5 * (values[:-1] + values[1:])
    if len(values) >= 4:
        mid[1:-1] = (-values[:-3] + 9.0 * values[1:-2] + 9.0 * values[2:-1] - values[3:]) / 16.0
    return mid


class WeightedForms:
    """a(u,v) = int u'v'/tau'' e^{-tau}，b(u,v) = int uv e^{-tau}"""

    def __init__(self, tau: RadialWeight, window: Optional[slice] = None):
        if not (tau.slope_minus < 0.0 < tau.slope_plus):
            raise LabError(f"e^-tau not integrable: slopes ({tau.slope_minus}, {tau.slope_plus})")
        d2 = tau.hessian()
        self.tau = tau
        self.grid = tau.grid
        self.window = window if window is not None else tau.support(SUPPORT_REL)
        inner = d2[self.window]
        if np.any(inner <= 0.0):
            bad = np.nonzero(inner <= 0.0)[0] + self.window.start
            raise ConvexityError("tau'' must be positive on the resolvable support", bad.tolist())

        e = np.exp(-tau.samples)
        self.mass = volume_weights(self.grid, -tau.slope_minus, tau.slope_plus) * e
        self.volume = float(self.mass.sum())
        N = self.window.stop - self.window.start
        self.G = _staggered_difference(N, self.grid.h)
        self.kappa = _midpoints(e[self.window] / inner)
        self.stiffness = (self.G.T @ sp.diags(self.grid.h * self.kappa) @ self.G).tocsr()

        # 窗口外按常数延拓，外部质量并入端点
        lumped = self.mass[self.window].copy()
        lumped[0] += self.mass[:self.window.start].sum()
        lumped[-1] += self.mass[self.window.stop:].sum()
        self.window_mass = lumped

    def a(self, u: np.ndarray, v: Optional[np.ndarray] = None) -> float:
        v = u if v is None else v
        gu = self.G @ np.asarray(u, dtype=float)[self.window]
        gv = self.G @ np.asarray(v, dtype=float)[self.window]
        return float(np.dot(self.grid.h * self.kappa * gu, gv))

    def a_with(self, kappa: np.ndarray, u: np.ndarray) -> float:
        gu = self.G @ np.asarray(u, dtype=float)[self.window]
        return float(np.dot(self.grid.h * kappa, gu * gu))

    def b(self, u: np.ndarray, v: Optional[np.ndarray] = None) -> float:
        v = u if v is None else v
        return float(np.dot(self.mass, np.asarray(u, dtype=float) * np.asarray(v, dtype=float)))

    def mean(self, u: np.ndarray) -> float:
        return self.b(u, np.ones(self.grid.n)) / self.volume

    def project(self, u: np.ndarray) -> np.ndarray:
        """pi_perp: 去掉 e^{-tau} 加权均值"""
        return np.asarray(u, dtype=float) - self.mean(u)

    def extend(self, window_values: np.ndarray) -> np.ndarray:
        u = np.empty(self.grid.n)
        u[self.window] = window_values
        u[:self.window.start] = window_values[0]
        u[self.window.stop:] = window_values[-1]
        return u


def weighted_laplacian_form(tau: RadialWeight) -> WeightedForms:
    return WeightedForms(tau)


def rayleigh_quotient(forms: WeightedForms, u: np.ndarray) -> float:
    u = forms.project(u)
    return forms.a(u) / forms.b(u)


def lowest_spectrum(tau: RadialWeight, count: int, max_iter: int = 500, tol: float = 1e-13) -> List[SpectralPair]:
    """最小的 count 个非零特征值：块逆迭代 + Rayleigh-Ritz，常数模态逐步收缩"""
    if count < 1:
        raise LabError(f"count must be >= 1, got {count}")
    forms = weighted_laplacian_form(tau)
    B = forms.window_mass
    if np.any(B <= 0.0):
        raise LabError("discretization failure: non-positive mass entries")
    N = len(B)
    A = forms.stiffness
    lu = splu((A + sp.diags(B)).tocsc())

    def deflate(Y: np.ndarray) -> np.ndarray:
        return Y - np.outer(np.ones(N), B @ Y / B.sum())

    # 以 tau' 的幂为初始块
    slope = first_derivative(tau.samples, tau.grid.h)[forms.window]
    s = (slope - 0.5 * (slope.max() + slope.min())) / (0.5 * np.ptp(slope))
    block = count + 2
    Y = deflate(np.column_stack([s ** (j + 1) for j in range(block)]))

    theta_prev = np.full(count, np.inf)
    for iteration in range(max_iter):
        Z = deflate(lu.solve(B[:, None] * Y))
        Ar = Z.T @ (A @ Z)
        Br = Z.T @ (B[:, None] * Z)
        theta, C = scipy.linalg.eigh(0.5 * (Ar + Ar.T), 0.5 * (Br + Br.T))
        Y = Z @ C
        Y /= np.sqrt(np.einsum('ij,i,ij->j', Y, B, Y))
        if np.max(np.abs(theta[:count] - theta_prev)) <= tol * max(1.0, theta[count - 1]):
            break
        theta_prev = theta[:count]
    else:
        logger.warning(f"谱迭代达到上限 {max_iter} 次")
    logger.debug(f"谱迭代 {iteration + 1} 次, lambda_1={theta[0]:.12g}")

    reference = forms.extend(slope)
    pairs = []
    for j in range(count):
        u = forms.extend(Y[:, j])
        sign = np.sign(forms.b(u, reference)) or np.sign(u[-1]) or 1.0
        u = sign * u
        lam = float(theta[j])
        pairs.append(SpectralPair(lam, u, abs(forms.a(u) / forms.b(u) - lam)))
    return pairs


def eigenfunction_alignment(u: np.ndarray, tau: RadialWeight) -> float:
    """u 与 pi(tau') 的相对 sup 偏差（最优缩放后，仅在支撑窗口内）"""
    forms = weighted_laplacian_form(tau)
    slope = forms.project(tau.gradient())
    u = forms.project(u)
    scale = forms.b(u, slope) / forms.b(slope)
    window = forms.window
    return float(np.max(np.abs(u[window] / scale - slope[window])) / np.max(np.abs(slope[window])))


def delta_tau(tau: RadialWeight, u: np.ndarray, forms: Optional[WeightedForms] = None) -> float:
    """delta = a(u,u) - b(pi u, pi u)"""
    forms = forms or weighted_laplacian_form(tau)
    pu = forms.project(u)
    return forms.a(u) - forms.b(pu)


def k_gap(phi: RadialWeight, tau: RadialWeight, u: np.ndarray) -> float:
    """k = int (u'^2/phi'' - u'^2/tau'') e^{-tau}"""
    d2_phi = phi.hessian()
    d2_tau = tau.hessian()
    diff = d2_tau - d2_phi
    floor = -1e-12 * max(1.0, float(np.max(np.abs(d2_tau))))
    if np.any(diff[1:-1] < floor):
        raise ConvexityError("twister curvature is negative (tau'' < phi'')", (np.nonzero(diff[1:-1] < floor)[0] + 1).tolist())
    forms = WeightedForms(tau, window=phi.support(SUPPORT_REL))
    e = np.exp(-tau.samples[forms.window])
    kappa_phi = _midpoints(e / d2_phi[forms.window])
    return forms.a_with(kappa_phi, u) - forms.a(u)


def extract_field(phi_dot: np.ndarray, tau: RadialWeight) -> FieldReport:
    """w = phi_dot'/tau''，c 为加权平均，defect 为加权 sup |w - c|"""
    window = tau.support(SUPPORT_REL)
    d2 = tau.hessian()[window]
    if np.any(d2 <= 0.0):
        raise ConvexityError("tau'' must be positive on the resolvable support")
    w = first_derivative(np.asarray(phi_dot, dtype=float), tau.grid.h)[window] / d2
    weight = np.exp(-tau.samples[window]) * tau.grid.quadrature_weights()[window]
    c = float(np.dot(weight, w) / weight.sum())
    density = np.exp(-tau.samples[window])
    defect = float(np.max(np.abs(w - c) * density / density.max()))
    return FieldReport(c, defect)


def twister_kernel_check(field: FieldReport, tw: TwisterSpec) -> str:
    """径向形式的 X^alpha theta = 0，即 c*chi 恒为零"""
    chi = tw.chi.samples
    if float(np.max(np.abs(field.c * chi))) <= KERNEL_TOL:
        return VERDICT_ANNIHILATES
    positive = chi > CHI_POSITIVE
    run = longest = 0
    for flag in positive:
        run = run + 1 if flag else 0
        longest = max(longest, run)
    if longest >= OPEN_WINDOW and abs(field.c) > KERNEL_TOL:
        return VERDICT_CONTRADICTION
    return VERDICT_INCONCLUSIVE
