import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Dict, List, Sequence

import numpy as np

from .errors import LabError, SlopeMismatchError
from .radial_model import Density, RadialWeight, first_derivative, ma_density, volume_density
from .twister import TwisterSpec, smoothing_profile

logger = logging.getLogger(__name__)

DEGREE_TOL = 1e-9
COERCIVE_SLOPE = 0.01
FLAT_WINDOW = 1.0
VERDICT_COERCIVE = "coercive-consistent"
VERDICT_VIOLATED = "properness violated"
VERDICT_INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class FunctionalReport:
    """Ding 泛函及其组成部分"""
    E: float
    F: float
    D: float
    J: float
    M: float
    twister: str

    def as_dict(self) -> Dict[str, Any]:
        return {'E': self.E, 'F': self.F, 'D': self.D, 'J': self.J, 'M': self.M, 'twister': self.twister}


@dataclass(frozen=True)
class PropernessReport:
    """properness 扫描结果"""
    J: List[float]
    D: List[float]
    a: float
    b: float
    verdict: str


def _check_degrees(phi: RadialWeight, phi0: RadialWeight):
    if abs(phi.degree - phi0.degree) > DEGREE_TOL * (1.0 + abs(phi0.degree)):
        raise SlopeMismatchError(f"degree {phi.degree:g} vs reference degree {phi0.degree:g}")


def energy_E(phi: RadialWeight, phi0: RadialWeight) -> float:
    """E = 1/2 * int (phi - phi0)(phi'' + phi0'')

    分部积分后只用一阶导数：E = int v phi0'' - 1/2 int (v')^2，v = phi - phi0。
    """
    _check_degrees(phi, phi0)
    grid = phi.grid
    v = phi.samples - phi0.samples
    dv = first_derivative(v, grid.h)
    return grid.integrate(v * ma_density(phi0).samples) - 0.5 * grid.integrate(dv * dv)


def functional_F(phi: RadialWeight, tw: TwisterSpec) -> float:
    """F = -log int e^{-(phi + twister)}"""
    return -float(np.log(volume_density(tw.total_weight(phi)).mass))


def aubin_J(phi: RadialWeight, phi0: RadialWeight) -> float:
    """J = int (phi - phi0) phi0'' / M - E/M = 1/(2M) int (v')^2"""
    _check_degrees(phi, phi0)
    dv = first_derivative(phi.samples - phi0.samples, phi.grid.h)
    return 0.5 * phi.grid.integrate(dv * dv) / phi0.degree


def ding_value(phi: RadialWeight, phi0: RadialWeight, tw: TwisterSpec) -> FunctionalReport:
    """D = -E/M + F"""
    E = energy_E(phi, phi0)
    F = functional_F(phi, tw)
    M = phi.degree
    J = aubin_J(phi, phi0)
    return FunctionalReport(E=E, F=F, D=-E / M + F, J=J, M=M, twister=tw.tag)


def ding_first_variation(phi: RadialWeight, tw: TwisterSpec) -> Density:
    """phi''/M - e^{-tau}/int e^{-tau}；dD(v) = -int (该密度) * v"""
    ma = ma_density(phi)
    vol = volume_density(tw.total_weight(phi))
    samples = ma.samples / phi.degree - vol.samples / vol.mass
    return Density(phi.grid, samples, phi.grid.integrate(samples))


def ding_derivative(phi: RadialWeight, tw: TwisterSpec, v: np.ndarray) -> float:
    """D 在方向 v 上的一阶变分"""
    return -phi.grid.integrate(ding_first_variation(phi, tw).samples * v)


def properness_scan(family: Sequence[RadialWeight], phi0: RadialWeight, tw: TwisterSpec) -> PropernessReport:
    """逐个计算 (J, D)，拟合下包络 D >= a*J + b 并给出结论"""
    if len(family) < 4:
        raise LabError(f"properness scan needs at least 4 members, got {len(family)}")
    J = np.array([aubin_J(phi, phi0) for phi in family])
    D = np.array([ding_value(phi, phi0, tw).D for phi in family])

    if np.ptp(J) > 0.0:
        a, _ = np.polyfit(J, D, 1)
    else:
        a = 0.0
    b = float(np.min(D - a * J))

    if a > COERCIVE_SLOPE:
        verdict = VERDICT_COERCIVE
    elif np.max(J) >= 1.0 and np.ptp(D) <= FLAT_WINDOW:
        verdict = VERDICT_VIOLATED
    else:
        verdict = VERDICT_INCONCLUSIVE
    logger.info(f"properness 扫描: {len(family)} 个成员, a={a:.4g}, b={b:.4g}, 结论={verdict}")
    return PropernessReport(J.tolist(), D.tolist(), float(a), b, verdict)


def twister_independence_constants(family: Sequence[RadialWeight], phi0: RadialWeight,
                                   twisters: Sequence[TwisterSpec]) -> List[Dict[str, Any]]:
    """记录两个光滑扭曲之间 sup |D_theta - D_theta'| 的常数 C'"""
    values = [[ding_value(phi, phi0, tw).D for phi in family] for tw in twisters]
    rows = []
    for i, j in combinations(range(len(twisters)), 2):
        gap = float(np.max(np.abs(np.array(values[i]) - np.array(values[j]))))
        rows.append({'first': twisters[i].tag, 'second': twisters[j].tag, 'C': gap})
    return rows


def epsilon_monotonicity(family: Sequence[RadialWeight], phi0: RadialWeight, beta: float,
                         eps_list: Sequence[float], slack: float = 1e-10) -> Dict[str, Any]:
    """D_eps 随 eps 减小单调不增，且 D_beta 不超过任何 D_eps"""
    grid = phi0.grid
    cone = smoothing_profile(beta, 0.0, grid)
    smoothed = [smoothing_profile(beta, eps, grid) for eps in eps_list]
    table, monotone, below = [], True, True
    for phi in family:
        d_eps = [ding_value(phi, phi0, tw).D for tw in smoothed]
        d_beta = ding_value(phi, phi0, cone).D
        # eps_list 递减，D_eps 应递减
        monotone &= all(later <= earlier + slack for earlier, later in zip(d_eps, d_eps[1:]))
        below &= all(d_beta <= value + slack for value in d_eps)
        table.append({'D_eps': d_eps, 'D_beta': d_beta})
    return {'eps': list(eps_list), 'rows': table, 'monotone': bool(monotone), 'cone_minimum': bool(below)}