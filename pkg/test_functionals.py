#!/usr/bin/env python3
"""测试 Ding 泛函、properness 扫描与 eps 单调性"""

import os
import sys

import numpy as np
import pytest

# 添加src目录到路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from model.errors import LabError, SlopeMismatchError
from model.functionals import (VERDICT_COERCIVE, VERDICT_VIOLATED, aubin_J, ding_derivative, ding_value,
                               energy_E, epsilon_monotonicity, properness_scan,
                               twister_independence_constants)
from model.radial_model import RadialWeight, build_grid, football, fubini_study, sech2
from model.twister import conical, no_twister, smooth_background, smoothing_profile

GRID = build_grid(40.0, 2049)


def sech_bump(c, x0):
    s = np.sqrt(sech2(GRID.x - x0))
    return RadialWeight(GRID, c * s, 0.0, 0.0, c * s * (1.0 - 2.0 * s * s))


def test_functionals_vanish_at_reference():
    phi = fubini_study(GRID)
    report = ding_value(phi, phi, no_twister(GRID))
    assert energy_E(phi, phi) == 0.0
    assert aubin_J(phi, phi) == 0.0
    assert abs(report.F) < 1e-9
    assert abs(report.D) < 1e-9
    assert report.twister == "none"


def test_constant_shift_leaves_ding_invariant():
    phi0 = fubini_study(GRID)
    tw = no_twister(GRID)
    shifted = ding_value(phi0 + 0.7, phi0, tw)
    # E 增加 M*c，F 增加 c
    assert abs(shifted.E - 2.0 * 0.7) < 1e-9
    assert abs(shifted.D) < 1e-9


def test_energy_rejects_mismatched_degree():
    with pytest.raises(SlopeMismatchError):
        energy_E(fubini_study(GRID), football(0.5, GRID))


def test_translation_invariance_under_conical_twister():
    phi0 = football(0.5, GRID)
    tw = conical(0.5, GRID)
    base = ding_value(phi0, phi0, tw)
    # 锥角扭曲下 F(football) = -log 2，沿平移轨道 D 保持不变
    assert abs(base.D + np.log(2.0)) < 1e-9
    for t in (0.5, 1.0, 2.0):
        moved = football(0.5, GRID, shift=t)
        assert abs(ding_value(moved, phi0, tw).D - base.D) < 1e-6
        assert aubin_J(moved, phi0) > 0.0


def test_first_variation_matches_difference_quotient():
    phi = fubini_study(GRID) + sech_bump(0.1, 0.5)
    phi0 = fubini_study(GRID)
    tw = no_twister(GRID)
    v = sech_bump(1.0, -0.3)
    delta = 1e-4
    plus = ding_value(phi + v.scaled(delta), phi0, tw).D
    minus = ding_value(phi + v.scaled(-delta), phi0, tw).D
    quotient = (plus - minus) / (2.0 * delta)
    assert abs(quotient - ding_derivative(phi, tw, v.samples)) < 1e-6


def test_properness_needs_four_members():
    phi0 = fubini_study(GRID)
    with pytest.raises(LabError):
        properness_scan([phi0, phi0, phi0], phi0, no_twister(GRID))


def test_translation_family_violates_properness():
    phi0 = football(0.5, GRID)
    family = [football(0.5, GRID, shift=t) for t in np.linspace(0.0, 8.0, 9)]
    report = properness_scan(family, phi0, conical(0.5, GRID))
    assert max(report.J) >= 1.0
    assert np.ptp(report.D) <= 1.0
    assert report.verdict == VERDICT_VIOLATED


def test_perturbation_family_is_coercive_for_positive_twister():
    reference = fubini_study(GRID).scaled(0.5)
    direction = sech_bump(0.05, 0.5)
    family = [reference + direction.scaled(lam) for lam in np.linspace(0.0, 1.0, 8)]
    report = properness_scan(family, reference, smooth_background(0.5, GRID))
    assert report.a > 0.0
    assert report.verdict == VERDICT_COERCIVE


def test_twister_independence_constant():
    reference = football(0.5, GRID)
    family = [reference + sech_bump(c, 0.0) for c in (0.0, 0.02, 0.04, 0.06)]
    background = smooth_background(0.5, GRID)
    smoothed = smoothing_profile(0.5, 1e-2, GRID)
    rows = twister_independence_constants(family, reference, [background, smoothed, background])
    assert len(rows) == 3
    assert all(np.isfinite(r['C']) for r in rows)
    # 同一扭曲的常数为零
    assert rows[1]['C'] == 0.0
    assert rows[0]['C'] > 0.0


def test_epsilon_monotonicity():
    family = [football(0.5, GRID, shift=t) for t in (0.0, 0.5, 1.0)]
    result = epsilon_monotonicity(family, football(0.5, GRID), 0.5, [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    assert result['monotone']
    assert result['cone_minimum']
    assert len(result['rows']) == 3


if __name__ == "__main__":
    print("=== 测试 Ding 泛函 ===")
    tests = [v for k, v in sorted(globals().items()) if k.startswith('test_') and callable(v)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"✅ {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"❌ {test.__name__}: {e}")
    sys.exit(1 if failed else 0)
