import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConvexityError
from .radial_model import Density, Grid, RadialWeight, affine, divisor_background, log2cosh

logger = logging.getLogger(__name__)

CHI_FLOOR = -1e-12


class TwisterKind(Enum):
    """扭曲项类型"""
    NONE = "none"
    SMOOTH_BACKGROUND = "smooth_background"
    SMOOTHED_CONE = "smoothed_cone"
    CONICAL = "conical"


@dataclass(frozen=True, eq=False)
class TwisterSpec:
    """扭曲项：径向势 weight、曲率 chi 与 Monge-Ampere 质量 M"""
    kind: TwisterKind
    weight: RadialWeight
    chi: Density
    mass_M: float
    beta: Optional[float] = None
    eps: Optional[float] = None
    c: Optional[float] = None

    @property
    def tag(self) -> str:
        if self.kind == TwisterKind.NONE:
            return "none"
        if self.kind == TwisterKind.CONICAL:
            return f"conical({self.beta:g})"
        if self.kind == TwisterKind.SMOOTHED_CONE:
            return f"smooth({self.eps:g})"
        return f"smooth(c={self.c:g})"

    @property
    def grid(self) -> Grid:
        return self.weight.grid

    @property
    def is_degenerate(self) -> bool:
        """扭曲曲率恒为零时存在平移自同构 z -> lambda z"""
        return float(np.max(np.abs(self.chi.samples))) <= 1e-12

    def total_weight(self, phi: RadialWeight) -> RadialWeight:
        return phi + self.weight


def _zero_density(grid: Grid) -> Density:
    return Density(grid, np.zeros(grid.n), 0.0)


def no_twister(grid: Grid, mass_scale: float = 1.0) -> TwisterSpec:
    return TwisterSpec(TwisterKind.NONE, affine(0.0, 0.0, grid), _zero_density(grid), 2.0 * mass_scale)


def smooth_background(c: float, grid: Grid, mass_scale: float = 1.0) -> TwisterSpec:
    """光滑扭曲 c*psi0，曲率 c*psi0''"""
    if not 0.0 < c < 1.0:
        raise ValueError(f"background coefficient must lie in (0, 1), got {c}")
    psi0 = divisor_background(grid)
    weight = psi0.scaled(c)
    chi = Density(grid, weight.hessian(), grid.integrate(weight.hessian()))
    return TwisterSpec(TwisterKind.SMOOTH_BACKGROUND, weight, chi,
                       (2.0 - 2.0 * c) * mass_scale, beta=1.0 - c, c=c)


def smoothing_profile(beta: float, eps: float, grid: Grid, mass_scale: float = 1.0) -> TwisterSpec:
    """光滑化锥角扭曲 (1-beta)*log q_eps，q_eps = 1 + 4*eps*cosh^2(x/2)"""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"cone angle beta must lie in (0, 1), got {beta}")
    if eps < 0.0:
        raise ValueError(f"smoothing eps must be >= 0, got {eps}")
    mass = 2.0 * beta * mass_scale
    if eps == 0.0:
        return TwisterSpec(TwisterKind.CONICAL, affine(0.0, 0.0, grid), _zero_density(grid),
                           mass, beta=beta, eps=0.0)

    x = grid.x
    # log q = log(1 + eps * e^{phi_FS})
    log_q = np.logaddexp(0.0, np.log(eps) + 2.0 * log2cosh(x / 2.0))
    cosh_x = np.cosh(x)
    q = 1.0 + 2.0 * eps + 2.0 * eps * cosh_x
    chi = (2.0 * eps * (1.0 + 2.0 * eps) * cosh_x + 4.0 * eps ** 2) / q ** 2
    if chi.min() < CHI_FLOOR:
        raise ConvexityError("smoothing profile curvature is negative", np.nonzero(chi < CHI_FLOOR)[0])

    factor = 1.0 - beta
    weight = RadialWeight(grid, factor * log_q, -factor, factor, factor * chi)
    logger.debug(f"光滑化扭曲: beta={beta}, eps={eps}, chi(0)={chi[grid.center]:.6g}")
    return TwisterSpec(TwisterKind.SMOOTHED_CONE, weight, Density(grid, chi, grid.integrate(chi)),
                       mass, beta=beta, eps=eps)


def conical(beta: float, grid: Grid, mass_scale: float = 1.0) -> TwisterSpec:
    return smoothing_profile(beta, 0.0, grid, mass_scale)
