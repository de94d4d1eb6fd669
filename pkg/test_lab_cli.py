#!/usr/bin/env python3
"""测试实验配置解析、运行器退出码与报告输出"""

import csv
import json
import os
import sys
import tempfile

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.abspath(__file__))
# 添加src目录到路径
sys.path.insert(0, os.path.join(ROOT, 'src'))
sys.path.insert(0, ROOT)

from config.experiment import parse_config
from config.settings import Settings
from lab.reports import Manifest, format_value
from lab.runner import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, LabRunner
from model.errors import ConfigError
import run_lab

SETTINGS = os.path.join(ROOT, 'config.yaml')


def run(overrides):
    return run_lab.main(['run', '--settings', SETTINGS] + [f'--set={item}' for item in overrides])


def read_rows(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [row for row in csv.reader(f) if row and not row[0].startswith('#')]


def read_manifest(path):
    with open(path, 'r', encoding='utf-8') as f:
        return f.read()


def test_parse_cone_limit_config():
    text = """
    # 锥角极限
    experiment = cone-limit
    beta = 0.5
    eps_list = 1e-1, 1e-2, 1e-3
    window = 10.0
    """
    config = parse_config(text, Settings(SETTINGS))
    assert config.experiment == 'cone-limit'
    assert config.beta == 0.5
    assert config.eps_list == [0.1, 0.01, 0.001]
    assert config.n == 4097
    assert config.tol == 1e-10


def test_settings_update_feeds_defaults():
    settings = Settings(SETTINGS)
    settings.update('grid', 'n', 1025)
    settings.update('grid', 'x_max', 20.0)
    config = parse_config("experiment = spectrum\n", settings)
    assert config.n == 1025
    assert config.x_max == 20.0
    assert Settings(os.path.join(ROOT, 'missing.yaml')).grid == {}


def test_overrides_win_over_file():
    config = parse_config("experiment = spectrum\nn = 2049\n", None, ['n=1025', 'x_max=20'])
    assert config.n == 1025
    assert config.x_max == 20.0


def test_config_errors():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    assert "missing required key 'experiment'" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config("experiment = cone-limit\nbeta = 1.5\neps_list = 0.1, 0.01\n")
    with pytest.raises(ConfigError) as info:
        parse_config("experiment = spectrum\ncolour = red\n")
    assert "unknown key" in str(info.value)
    with pytest.raises(ConfigError) as info:
        parse_config("experiment = spectrum\nn = many\n")
    assert "type mismatch" in str(info.value)
    with pytest.raises(ConfigError):
        parse_config("experiment = spectrum\nn = 2048\n")
    with pytest.raises(ConfigError):
        parse_config("experiment = cone-limit\nbeta = 0.5\neps_list = 0.01, 0.1\n")
    with pytest.raises(ConfigError):
        parse_config("experiment = spectrum\nn = 1025\nn = 2049\n")


def test_echo_is_sorted_and_exact():
    config = parse_config("experiment = spectrum\nbeta = 0.1\n")
    lines = config.echo()
    assert lines == sorted(lines)
    assert "beta = 0.1" in lines


def test_cli_rejects_bad_beta():
    with tempfile.TemporaryDirectory() as tmp:
        status = run(['experiment=cone-limit', 'beta=1.5', 'eps_list=0.1,0.01', f'output_dir={tmp}'])
    assert status == EXIT_CONFIG


def test_spectrum_run():
    with tempfile.TemporaryDirectory() as tmp:
        status = run(['experiment=spectrum', 'count=2', f'output_dir={tmp}'])
        rows = read_rows(os.path.join(tmp, 'spectrum.csv'))
        manifest = read_manifest(os.path.join(tmp, 'manifest.txt'))
    assert status == EXIT_OK
    assert rows[0] == ['index', 'lambda', 'rayleigh_residual']
    assert abs(float(rows[1][1]) - 1.0) <= 1e-5
    assert "invariant closed_form_lambda1 = PASS" in manifest
    assert "exit_status = 0" in manifest


def test_slope_mismatch_exits_with_config_status():
    with tempfile.TemporaryDirectory() as tmp:
        status = run(['experiment=geodesic-audit', 'beta=0.5', 'start=fubini_study', 'end=football',
                      'n=2049', 'm=9', f'output_dir={tmp}'])
        manifest = read_manifest(os.path.join(tmp, 'manifest.txt'))
    assert status == EXIT_CONFIG
    assert "slope mismatch" in manifest
    assert "exit_status = 2" in manifest


def test_ke_solve_with_degenerate_twister():
    with tempfile.TemporaryDirectory() as tmp:
        status = run(['experiment=ke-solve', 'twister=none', 'n=2049', f'output_dir={tmp}'])
        manifest = read_manifest(os.path.join(tmp, 'manifest.txt'))
        assert os.path.exists(os.path.join(tmp, 'ke_solution.txt'))
    assert status == EXIT_OK
    assert "invariant closed_form_recovered = PASS" in manifest
    assert "note twister none, gauge center_barycenter" in manifest


def test_section_overrides_update_settings():
    with tempfile.TemporaryDirectory() as tmp:
        status = run(['experiment=spectrum', 'grid.n=2049', 'spectral.count=2', f'output_dir={tmp}'])
        rows = read_rows(os.path.join(tmp, 'spectrum.csv'))
        manifest = read_manifest(os.path.join(tmp, 'manifest.txt'))
    assert status == EXIT_OK
    assert len(rows) == 3
    assert "n = 2049" in manifest.splitlines()
    settings = Settings(SETTINGS)
    rest = settings.apply_overrides(['solver.continuation_steps=6', 'beta=0.5'])
    assert rest == ['beta=0.5']
    assert settings.solver['continuation_steps'] == 6
    with pytest.raises(ConfigError):
        settings.apply_overrides(['solver.tol=[1'])


def test_unexpected_failure_still_writes_manifest():
    def broken(config, writer, manifest):
        raise ValueError("shape mismatch")

    with tempfile.TemporaryDirectory() as tmp:
        config = parse_config("experiment = spectrum\n", Settings(SETTINGS), [f'output_dir={tmp}'])
        runner = LabRunner(Settings(SETTINGS))
        runner.handlers['spectrum'] = broken
        status = runner.run(config)
        manifest = read_manifest(os.path.join(tmp, 'manifest.txt'))
    assert status == EXIT_INVARIANT
    assert "error = ValueError: shape mismatch" in manifest


def test_manifest_and_value_format():
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1.0) / 3.0) == repr(1.0 / 3.0)
    assert format_value(np.bool_(True)) == "true"
    assert format_value(np.int64(7)) == "7"
    manifest = Manifest(["beta = 0.5"])
    manifest.certificate("residual", 1e-12)
    assert not manifest.invariant("mass", False, "off by 1e-3")
    manifest.note("grid 2049")
    assert manifest.first_failure == "mass"
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "manifest.txt")
        manifest.write(path, 0.5, EXIT_INVARIANT, files=["a.csv"])
        lines = read_manifest(path).splitlines()
    assert lines[:2] == ["# config", "beta = 0.5"]
    assert "certificate residual = 1e-12" in lines
    assert "invariant mass = FAIL  # off by 1e-3" in lines
    assert "note grid 2049" in lines
    assert "file a.csv" in lines
    assert lines[-1] == "exit_status = 1"


def test_uniqueness_with_background_twister():
    with tempfile.TemporaryDirectory() as tmp:
        config = parse_config("experiment = uniqueness\ntwister = background\nbeta = 0.5\nn = 2049\n",
                              Settings(SETTINGS), [f'output_dir={tmp}'])
        status = LabRunner(Settings(SETTINGS)).run(config)
        with open(os.path.join(tmp, 'uniqueness.json'), 'r', encoding='utf-8') as f:
            payload = json.load(f)
    assert status == EXIT_OK
    assert payload['verdict'] == 'unique'
    assert payload['twister'] == 'smooth(c=0.5)'


def test_runs_are_deterministic():
    outputs = []
    for _ in range(2):
        with tempfile.TemporaryDirectory() as tmp:
            run(['experiment=properness-scan', 'twister=background', 'beta=0.5', 'n=2049',
                 'family_size=6', f'output_dir={tmp}'])
            with open(os.path.join(tmp, 'properness.csv'), 'rb') as f:
                outputs.append(f.read())
    assert outputs[0] == outputs[1]
    assert b"verdict=" in outputs[0]


if __name__ == "__main__":
    print("=== 测试实验运行器 ===")
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
