#!/usr/bin/env python3
"""测试扭曲 Kähler-Einstein 求解器、连续性路径与唯一性实验"""

import os
import sys

import numpy as np
import pytest

# 添加src目录到路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from model.einstein import (GaugeMode, SolverConfig, barycenter, cds_path, cone_limit_study, continuity_path,
                            ke_residual, normalize_automorphism, solve_twisted_ke, solve_twisted_ke_report,
                            uniqueness_experiment)
from model.errors import GaugeError, SlopeMismatchError
from model.radial_model import RadialWeight, build_grid, football, fubini_study, sech2
from model.twister import conical, no_twister, smooth_background, smoothing_profile

GRID = build_grid(40.0, 2049)
BETAS = (0.25, 0.5, 0.75)


def sech_bump(c, x0):
    s = np.sqrt(sech2(GRID.x - x0))
    return RadialWeight(GRID, c * s, 0.0, 0.0, c * s * (1.0 - 2.0 * s * s))


def sup(a, b):
    return float(np.max(np.abs(a.samples - b.samples)))


def test_closed_form_residuals():
    assert ke_residual(fubini_study(GRID), no_twister(GRID)) <= 1e-9
    for beta in BETAS:
        background = fubini_study(GRID).scaled(beta)
        assert ke_residual(background, smooth_background(1.0 - beta, GRID)) <= 1e-9
        assert ke_residual(football(beta, GRID), conical(beta, GRID)) <= 1e-9


def test_smoothing_curvature_is_nonnegative():
    for beta in np.linspace(0.1, 0.9, 9):
        for eps in (1e-4, 1e-3, 1e-2, 1e-1):
            tw = smoothing_profile(float(beta), eps, GRID)
            assert tw.chi.samples.min() >= -1e-12
            assert abs(tw.mass_M - 2.0 * beta) < 1e-12


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(continuation_steps=-1)
    cfg = SolverConfig.from_dict({'tol': 1e-9, 'gauge': 'pin_value', 'continuation_steps': 2})
    assert cfg.gauge == GaugeMode.PIN_VALUE
    assert cfg.continuation_steps == 2
    assert SolverConfig().continuation_steps == 4


def test_recovers_fubini_study_from_perturbed_seed():
    seed = fubini_study(GRID) + sech_bump(0.1, 0.7)
    solution = solve_twisted_ke_report(no_twister(GRID), seed, SolverConfig())
    assert solution.residual <= 1e-9
    assert abs(barycenter(solution.weight)) < 1e-8
    assert sup(solution.weight, fubini_study(GRID)) <= 1e-7


def test_recovers_background_solution():
    for beta in BETAS:
        target = fubini_study(GRID).scaled(beta)
        seed = target + sech_bump(0.1 * beta * beta, -0.4)
        phi = solve_twisted_ke(smooth_background(1.0 - beta, GRID), seed, SolverConfig())
        assert sup(phi, target) <= 1e-7


def test_recovers_football_after_centering():
    beta = 0.5
    seed = football(beta, GRID, shift=1.0) + sech_bump(0.02, 0.3)
    phi = solve_twisted_ke(conical(beta, GRID), seed, SolverConfig())
    assert sup(normalize_automorphism(phi), football(beta, GRID)) <= 1e-7


def test_solves_degenerate_twisters():
    # 无扭曲与锥角扭曲都带平移自由度，需要重心行
    phi = solve_twisted_ke(no_twister(GRID), fubini_study(GRID) + sech_bump(0.05, -0.3), SolverConfig())
    assert sup(phi, fubini_study(GRID)) <= 1e-7
    assert ke_residual(phi, no_twister(GRID)) <= 1e-9
    for beta in BETAS:
        report = solve_twisted_ke_report(conical(beta, GRID), football(beta, GRID) + sech_bump(0.01, 0.2),
                                         SolverConfig())
        assert report.residual <= 1e-9
        assert sup(report.weight, football(beta, GRID)) <= 1e-7


def test_degenerate_twister_needs_center_gauge():
    cfg = SolverConfig(gauge='none')
    with pytest.raises(GaugeError) as info:
        solve_twisted_ke(no_twister(GRID), fubini_study(GRID), cfg)
    assert "singular Jacobian, supply gauge" in str(info.value)


def test_seed_degree_must_match_mass():
    with pytest.raises(SlopeMismatchError):
        solve_twisted_ke(no_twister(GRID), football(0.5, GRID), SolverConfig())


def test_barycenter_and_normalization():
    shift = 32 * GRID.h
    moved = fubini_study(GRID, shift=shift)
    assert abs(barycenter(moved) + shift) < 1e-9
    assert sup(normalize_automorphism(moved), fubini_study(GRID)) < 1e-8
    # 平移量不在网格上时只有插值误差
    moved = football(0.5, GRID, shift=1.0)
    assert abs(barycenter(moved) + 1.0) < 1e-6
    assert sup(normalize_automorphism(moved), football(0.5, GRID)) <= 1e-6
    lifted = fubini_study(GRID) + 5.0
    assert sup(normalize_automorphism(lifted), lifted) <= 1e-12


def test_continuity_path_reaches_ke():
    beta = 0.5
    target = fubini_study(GRID).scaled(beta)
    phi0 = target + sech_bump(0.02, 0.5)
    members = continuity_path(smooth_background(1.0 - beta, GRID), phi0, [0.0, 0.5, 1.0], SolverConfig())
    assert len(members) == 3
    assert sup(members[-1], target) <= 1e-7


def test_continuity_path_with_degenerate_and_smoothed_twisters():
    beta = 0.5
    members = continuity_path(no_twister(GRID), fubini_study(GRID) + sech_bump(0.05, 0.4),
                              [0.0, 0.5, 1.0], SolverConfig())
    assert sup(members[-1], fubini_study(GRID)) <= 1e-7
    members = continuity_path(conical(beta, GRID), football(beta, GRID) + sech_bump(0.01, -0.3),
                              [0.0, 0.25, 0.75, 1.0], SolverConfig())
    assert len(members) == 4
    assert sup(members[-1], football(beta, GRID)) <= 1e-7
    tw = smoothing_profile(beta, 1e-2, GRID)
    direct = solve_twisted_ke(tw, football(beta, GRID), SolverConfig())
    members = continuity_path(tw, football(beta, GRID) + sech_bump(0.01, 0.6), [0.0, 0.5, 1.0], SolverConfig())
    assert sup(members[-1], direct) <= 1e-7


def test_cds_path_stays_at_football():
    for beta in BETAS:
        base = football(beta, GRID)
        report = cds_path(base, [0.0, 0.5, 1.0], SolverConfig())
        assert report.max_deviation <= 1e-7
    assert cds_path(fubini_study(GRID), [0.0, 1.0], SolverConfig()).max_deviation <= 1e-7


def test_cds_path_quarter_angle_on_fine_grid():
    grid = build_grid(40.0, 4097)
    report = cds_path(football(0.25, grid), np.linspace(0.0, 1.0, 11), SolverConfig())
    assert len(report.weights) == 11
    assert report.max_deviation <= 1e-7


def test_cone_limit_distance_decreases():
    study = cone_limit_study(0.5, [1e-1, 1e-2, 1e-3, 1e-4, 1e-5], 10.0, SolverConfig(), GRID)
    assert study['decreasing']
    assert all(row['residual'] <= 1e-8 for row in study['rows'])
    assert all(abs(row['mass'] - 1.0) <= 2e-8 for row in study['rows'])
    # 扭曲项关于 x 对称，解也是偶函数
    assert all(row['symmetry'] <= 1e-9 for row in study['rows'])


def test_uniqueness_with_positive_twister():
    beta = 0.5
    target = fubini_study(GRID).scaled(beta)
    seeds = [target + sech_bump(0.02, 0.5), target + sech_bump(-0.02, -0.8)]
    report = uniqueness_experiment(smooth_background(1.0 - beta, GRID), seeds, SolverConfig())
    assert report.verdict == "unique"
    assert max(report.raw_distances) <= 1e-8


def test_uniqueness_with_smoothed_cone():
    beta = 0.5
    tw = smoothing_profile(beta, 1e-3, GRID)
    seeds = [football(beta, GRID) + sech_bump(0.01, 0.2), football(beta, GRID) + sech_bump(-0.01, -0.4)]
    report = uniqueness_experiment(tw, seeds, SolverConfig())
    assert max(report.raw_distances) <= 1e-8


def test_uniqueness_modulo_translation_for_conical_twister():
    beta = 0.5
    seeds = [football(beta, GRID, shift=2.0), football(beta, GRID, shift=-2.0)]
    report = uniqueness_experiment(conical(beta, GRID), seeds, SolverConfig(), labels=['a', 'b'])
    assert report.seeds == ['a', 'b']
    assert max(report.raw_distances) > 1.0
    assert max(report.normalized_distances) <= 1e-6
    assert report.verdict == "unique"


if __name__ == "__main__":
    print("=== 测试扭曲 KE 求解 ===")
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
