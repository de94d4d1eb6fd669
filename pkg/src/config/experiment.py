import logging
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence

from model.errors import ConfigError, GridError
from model.einstein import GaugeMode
from model.radial_model import build_grid

logger = logging.getLogger(__name__)

EXPERIMENTS = ('ke-solve', 'geodesic-audit', 'cone-limit', 'uniqueness', 'properness-scan', 'spectrum')
TWISTERS = ('none', 'background', 'smoothed', 'conical')
WEIGHTS = ('fubini_study', 'football', 'background', 'perturbed', 'translated')
FAMILIES = ('translation', 'perturbation')


@dataclass
class ExperimentConfig:
    """一次实验运行的全部参数"""
    experiment: str
    x_max: float = 40.0
    n: int = 4097
    beta: Optional[float] = None
    eps: Optional[float] = None
    eps_list: List[float] = field(default_factory=list)
    window: float = 10.0
    m: int = 65
    seed: int = 0
    output_dir: str = "./results"
    tol: float = 1e-10
    max_iter: int = 60
    damping: int = 40
    gauge: str = "center_barycenter"
    parallel: bool = False
    count: int = 4
    family_size: int = 12
    mass_scale: float = 1.0
    twister: str = "none"
    start: str = "fubini_study"
    end: str = "perturbed"
    family: str = "perturbation"

    def solver_dict(self) -> Dict[str, Any]:
        return {'tol': self.tol, 'max_iter': self.max_iter, 'damping': self.damping, 'gauge': self.gauge}

    def echo(self) -> List[str]:
        """按键名排序的 key = value 行"""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ','.join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return lines


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ('true', 'yes', 'on', '1'):
        return True
    if lowered in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f"not a boolean: {text}")


def _convert(key: str, raw: str) -> Any:
    kind = _FIELD_TYPES[key]
    try:
        if key == 'eps_list':
            return [float(v) for v in raw.split(',') if v.strip()]
        if kind in (float, Optional[float]):
            return float(raw)
        if kind is int:
            if '.' in raw or 'e' in raw.lower():
                raise ValueError(f"not an integer: {raw}")
            return int(raw)
        if kind is bool:
            return _parse_bool(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"type mismatch for '{key}': {e}")


def _split_lines(text: str, origin: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{origin} line {number}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{origin} line {number}: duplicate key '{key}'")
        values[key] = raw
    return values


def _defaults(settings) -> Dict[str, Any]:
    if settings is None:
        return {}
    defaults: Dict[str, Any] = {}
    for section in (settings.grid, settings.solver, settings.audit, settings.properness, settings.output):
        for key, value in section.items():
            if key in _FIELD_TYPES and key != 'experiment':
                defaults[key] = value
    # spectral 节的 max_iter/tol 属于特征值迭代，不覆盖牛顿参数
    if 'count' in settings.spectral:
        defaults['count'] = settings.spectral['count']
    return defaults


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def validate(config: ExperimentConfig) -> ExperimentConfig:
    """检查数值范围与实验所需的键"""
    _require(config.experiment in EXPERIMENTS,
             f"unknown experiment '{config.experiment}', expected one of {', '.join(EXPERIMENTS)}")
    try:
        build_grid(config.x_max, config.n)
    except GridError as e:
        raise ConfigError(str(e))
    if config.beta is not None:
        _require(0.0 < config.beta < 1.0, f"beta must lie in (0, 1), got {config.beta}")
    if config.eps is not None:
        _require(config.eps >= 0.0, f"eps must be >= 0, got {config.eps}")
    _require(all(e > 0.0 for e in config.eps_list), "eps_list entries must be positive")
    _require(all(b < a for a, b in zip(config.eps_list, config.eps_list[1:])),
             "eps_list must be strictly decreasing")
    _require(0.0 < config.window <= config.x_max, f"window must lie in (0, x_max], got {config.window}")
    _require(config.m >= 3, f"m must be >= 3, got {config.m}")
    _require(config.tol > 0.0, f"tol must be positive, got {config.tol}")
    _require(config.max_iter >= 1, f"max_iter must be >= 1, got {config.max_iter}")
    _require(config.damping >= 0, f"damping must be >= 0, got {config.damping}")
    _require(config.count >= 1, f"count must be >= 1, got {config.count}")
    _require(config.family_size >= 4, f"family_size must be >= 4, got {config.family_size}")
    _require(config.mass_scale > 0.0, f"mass_scale must be positive, got {config.mass_scale}")
    _require(config.gauge in {g.value for g in GaugeMode}, f"unknown gauge '{config.gauge}'")
    _require(config.twister in TWISTERS, f"unknown twister '{config.twister}'")
    _require(config.start in WEIGHTS and config.start not in ('perturbed', 'translated'),
             f"start must be a closed-form weight, got '{config.start}'")
    _require(config.end in WEIGHTS, f"unknown end weight '{config.end}'")
    _require(config.family in FAMILIES, f"unknown family '{config.family}'")

    needs_beta = (config.twister != 'none' or config.start == 'football' or config.end == 'football'
                  or config.experiment == 'cone-limit')
    _require(not needs_beta or config.beta is not None, f"experiment '{config.experiment}' needs beta")
    if config.twister == 'smoothed' and config.experiment != 'cone-limit':
        _require(config.eps is not None and config.eps > 0.0, "twister 'smoothed' needs eps > 0")
    if config.experiment == 'cone-limit':
        _require(len(config.eps_list) >= 2, "cone-limit needs eps_list with at least 2 entries")
    return config


def parse_config(text: str, settings=None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """解析 key = value 格式的实验配置，overrides 覆盖文件中的同名键"""
    values = _split_lines(text, "config")
    for item in overrides:
        values.update(_split_lines(item, "--set"))
    if 'experiment' not in values:
        raise ConfigError("missing required key 'experiment'")

    merged: Dict[str, Any] = _defaults(settings)
    for key, raw in values.items():
        merged[key] = _convert(key, raw)
    try:
        config = ExperimentConfig(**merged)
    except TypeError as e:
        raise ConfigError(str(e))
    # yaml 默认值可能是 int，统一数值类型
    config.x_max = float(config.x_max)
    config.tol = float(config.tol)
    config.mass_scale = float(config.mass_scale)
    logger.debug(f"实验配置: {config.experiment}")
    return validate(config)
