#!/usr/bin/env python3
"""测试网格、径向权函数与密度"""

import os
import sys
import tempfile

import numpy as np
import pytest

# 添加src目录到路径
sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from model.errors import ConvexityError, GridError, IntegrabilityError
from model.radial_model import (RadialWeight, affine, build_grid, canonical_weight, football,
                                fubini_study, load_weight, ma_density, ricci_density, save_weight,
                                second_derivative, first_derivative, volume_density, volume_weights)

GRID = build_grid(40.0, 2049)


def test_grid_is_symmetric():
    x = GRID.x
    assert x[GRID.center] == 0.0
    assert x[0] == -40.0 and x[-1] == 40.0
    assert np.array_equal(x, -x[::-1])


def test_grid_rejects_bad_parameters():
    with pytest.raises(GridError):
        build_grid(40.0, 2048)
    with pytest.raises(GridError):
        build_grid(40.0, 127)
    with pytest.raises(GridError):
        build_grid(5.0, 1025)


def test_differences_exact_on_polynomials():
    grid = build_grid(20.0, 513)
    x = grid.x
    assert np.max(np.abs(second_derivative(x ** 2, grid.h) - 2.0)) < 1e-6
    assert np.max(np.abs(first_derivative(x ** 2, grid.h) - 2.0 * x)) < 1e-8


def test_fubini_study_closed_forms():
    phi = fubini_study(GRID)
    assert phi.degree == 2.0
    # 携带的曲率与差分一致
    fd = second_derivative(phi.samples, GRID.h)
    assert np.max(np.abs(fd[1:-1] - phi.hessian()[1:-1])) < 1e-8
    assert abs(ma_density(phi).mass - 2.0) < 1e-9
    assert abs(volume_density(phi).mass - 1.0) < 1e-9
    assert phi.edge_slope_error() < 1e-9


def test_fubini_study_is_ricci_flat_relative():
    grid = build_grid(40.0, 4097)
    phi = fubini_study(grid)
    ric = ricci_density(phi)
    mask = np.abs(grid.x) <= 30.0
    assert np.max(np.abs(ric.samples[mask] - phi.hessian()[mask])) < 1e-6


def test_football_mass():
    for grid in (GRID, build_grid(40.0, 4097)):
        for beta in (0.25, 0.5, 0.75):
            phi = football(beta, grid)
            assert abs(phi.degree - 2.0 * beta) < 1e-15
            # 网格外的尾部质量也计入
            assert abs(ma_density(phi).mass - phi.degree) <= 1e-8 * (1.0 + phi.degree)
            sampled = phi.without_curvature()
            assert abs(ma_density(sampled).mass - phi.degree) <= 1e-8 * (1.0 + phi.degree)
        phi = fubini_study(grid, shift=0.3)
        assert abs(ma_density(phi).mass - 2.0) <= 3e-8


def test_ricci_density_of_loaded_weight():
    grid = build_grid(40.0, 4097)
    phi = fubini_study(grid)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'fs.txt')
        save_weight(phi, path)
        loaded = load_weight(path)
    ric = ricci_density(loaded)
    # 尾部按仿射处理
    assert ric.samples[0] == 0.0 and ric.samples[-1] == 0.0
    mask = np.abs(grid.x) <= 10.0
    assert np.max(np.abs(ric.samples[mask] - phi.hessian()[mask])) < 1e-5
    with pytest.raises(ConvexityError):
        ricci_density(RadialWeight(grid, -grid.x ** 2, 0.0, 0.0))


def test_canonical_shift_translates():
    shifted = canonical_weight('fubini_study', GRID, shift=32 * GRID.h)
    base = fubini_study(GRID)
    assert np.max(np.abs(shifted.samples[:-32] - base.samples[32:])) < 1e-12


def test_convexity_violation_reports_nodes():
    concave = RadialWeight(GRID, -GRID.x ** 2, 0.0, 0.0)
    with pytest.raises(ConvexityError) as info:
        ma_density(concave)
    assert len(info.value.nodes) > 0


def test_wrong_sample_count():
    with pytest.raises(GridError):
        RadialWeight(GRID, np.zeros(GRID.n - 1), -1.0, 1.0)


def test_integrability_errors():
    with pytest.raises(IntegrabilityError):
        volume_weights(GRID, 0.0, 1.0)
    with pytest.raises(IntegrabilityError):
        volume_density(affine(0.0, 0.0, GRID))


def test_weight_arithmetic_carries_curvature():
    total = fubini_study(GRID) + football(0.5, GRID)
    assert total.slope_plus == 1.5 and total.slope_minus == -1.5
    assert np.allclose(total.hessian(), fubini_study(GRID).hessian() + football(0.5, GRID).hessian())
    shifted = total + 3.0
    assert np.allclose(shifted.samples - total.samples, 3.0)
    assert shifted.degree == total.degree


def test_save_load_round_trip():
    phi = football(0.5, GRID) + 0.125
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'weight.txt')
        save_weight(phi, path)
        with open(path, 'r', encoding='utf-8') as f:
            assert f.readline().strip() == "# x w"
        loaded = load_weight(path)
    assert np.array_equal(loaded.samples, phi.samples)
    assert loaded.slope_minus == phi.slope_minus
    assert loaded.slope_plus == phi.slope_plus
    assert loaded.grid == phi.grid


if __name__ == "__main__":
    print("=== 测试径向模型 ===")
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
