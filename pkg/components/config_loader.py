"""
Configuration handling for experiment runs

Parses JSON experiment files, applies environment overrides loaded through
python-dotenv, provides the figure presets, and writes run manifests.
"""

import json
import logging
import os
import subprocess
from dataclasses import fields
from pathlib import Path
from typing import Dict, Any, List, Optional, Union

from . import __version__
from .models import DetectorConfig, ExperimentConfig


class ConfigError(ValueError):
    """Malformed or missing experiment configuration"""


_EXPERIMENT_KEYS = {f.name for f in fields(ExperimentConfig)}
_DETECTOR_KEYS = {f.name for f in fields(DetectorConfig)}

_TRUE_VALUES = {'1', 'true', 'yes', 'on'}

_INTEGER = 'an integer'
_NUMBER = 'a number'
_BOOLEAN = 'true or false'
_STRING = 'a string'
_NUMBER_LIST = 'a list of numbers'

_EXPERIMENT_TYPES = {
    'N': _INTEGER, 'K': _INTEGER, 'W': _INTEGER, 'D': _INTEGER, 'L': _INTEGER, 'eta': _INTEGER,
    'trials': _INTEGER, 'base_seed': _INTEGER, 'workers': _INTEGER,
    'd_over_lambda': _NUMBER, 'normalize_channel': _BOOLEAN, 'record_timing': _BOOLEAN,
    'output_dir': _STRING, 'snr_db_grid': _NUMBER_LIST,
}
_DETECTOR_TYPES = {
    'variant': _STRING, 'label': _STRING, 'init': _STRING, 'momentum_rule': _STRING,
    'B': _INTEGER, 'max_em_iters': _INTEGER, 'exact_inner_cap': _INTEGER,
    'rel_tol': _NUMBER, 'exact_inner_tol': _NUMBER, 'use_quantized': _BOOLEAN,
    'onebox_step_schedule': _NUMBER_LIST,
}


def _has_type(value: Any, kind: str) -> bool:
    # bool is a subclass of int but never a valid count or step
    if kind == _BOOLEAN:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if kind == _INTEGER:
        return isinstance(value, int)
    if kind == _NUMBER:
        return isinstance(value, (int, float))
    if kind == _STRING:
        return isinstance(value, str)
    return isinstance(value, list) and all(_has_type(item, _NUMBER) for item in value)


def _type_errors(data: Dict[str, Any], types: Dict[str, str], where: str) -> List[str]:
    return [
        f"{where}'{key}' must be {kind}, got {data[key]!r}"
        for key, kind in types.items()
        if key in data and not (key == 'label' and data[key] is None) and not _has_type(data[key], kind)
    ]


def parse_experiment_config(data: Dict[str, Any], source: str = '<dict>') -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed JSON object"""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")

    unknown = sorted(set(data) - _EXPERIMENT_KEYS)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {', '.join(unknown)}")
    missing = [key for key in ('N', 'K', 'W') if key not in data]
    if missing:
        raise ConfigError(f"{source}: missing required keys {', '.join(missing)}")

    errors = _type_errors(data, _EXPERIMENT_TYPES, '')
    detectors = data.get('detectors', [{}])
    if not isinstance(detectors, list):
        raise ConfigError(f"{source}: 'detectors' must be a list")
    for i, detector in enumerate(detectors):
        if not isinstance(detector, dict):
            raise ConfigError(f"{source}: detector {i} must be an object")
        unknown = sorted(set(detector) - _DETECTOR_KEYS)
        if unknown:
            raise ConfigError(f"{source}: detector {i} has unknown keys {', '.join(unknown)}")
        errors.extend(_type_errors(detector, _DETECTOR_TYPES, f"detector {i}: "))
    if errors:
        raise ConfigError(f"{source}: {'; '.join(errors)}")

    try:
        config = ExperimentConfig.from_dict(data)
        errors = config.validation_errors()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: {e}")
    if errors:
        raise ConfigError(f"{source}: {'; '.join(errors)}")
    return config


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a JSON experiment file"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})")
    except OSError as e:
        raise ConfigError(f"{path}: cannot be read ({e})")
    return parse_experiment_config(data, source=str(path))


def apply_environment_overrides(config: ExperimentConfig) -> ExperimentConfig:
    """
    Apply ONEBIT_* environment variables on top of the file values.

    ONEBIT_WORKERS, ONEBIT_RECORD_TIMING and ONEBIT_OUTPUT_DIR are honoured;
    call load_dotenv() beforehand to pick up a .env file.
    """
    workers = os.getenv('ONEBIT_WORKERS')
    if workers:
        try:
            config.workers = int(workers)
        except ValueError:
            raise ConfigError(f"ONEBIT_WORKERS must be an integer, got {workers!r}")
    timing = os.getenv('ONEBIT_RECORD_TIMING')
    if timing:
        config.record_timing = timing.strip().lower() in _TRUE_VALUES
    output_dir = os.getenv('ONEBIT_OUTPUT_DIR')
    if output_dir:
        config.output_dir = output_dir

    errors = config.validation_errors()
    if errors:
        raise ConfigError('; '.join(errors))
    return config


def preset_configs() -> Dict[str, ExperimentConfig]:
    """Settings of the published figures; far beyond desk scale, kept as ordinary configs"""
    em_lineup = [
        DetectorConfig(variant='zf', use_quantized=False),
        DetectorConfig(variant='zf', use_quantized=True),
        DetectorConfig(variant='onebox'),
        DetectorConfig(variant='em_apg', B=5),
    ]
    snr_grid = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0]
    return {
        'qam4_256x36x512': ExperimentConfig(N=256, K=36, W=512, D=1, snr_db_grid=snr_grid, detectors=em_lineup),
        'qam16_256x20x512': ExperimentConfig(N=256, K=20, W=512, D=2, snr_db_grid=snr_grid, detectors=em_lineup),
        'qam16_512x32x2048': ExperimentConfig(
            N=512, K=32, W=2048, D=2, snr_db_grid=snr_grid,
            detectors=[d for d in em_lineup if d.variant != 'onebox'],
        ),
        'qam16_512x36x1024': ExperimentConfig(
            N=512, K=36, W=1024, D=2, snr_db_grid=snr_grid,
            detectors=[d for d in em_lineup if d.variant != 'onebox'],
        ),
        'convergence_256x36x512': ExperimentConfig(
            N=256, K=36, W=512, D=1, snr_db_grid=[5.0], trials=1,
            detectors=[
                DetectorConfig(variant='em_exact'),
                DetectorConfig(variant='em_pg1'),
                DetectorConfig(variant='em_apg', B=5),
            ],
        ),
    }


def resolve_version() -> str:
    """git-describe style version string, or the package version outside a checkout"""
    try:
        completed = subprocess.run(
            ['git', 'describe', '--always', '--dirty'],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if completed.returncode == 0 and completed.stdout.strip():
            return completed.stdout.strip()
    except (OSError, subprocess.SubprocessError) as e:
        logging.debug(f"git describe unavailable: {e}")
    return f"v{__version__}"


def write_manifest(path: Union[str, Path], config: ExperimentConfig, command: str,
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """Record the fully resolved run next to its outputs"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        'command': command,
        'version': resolve_version(),
        'base_seed': config.base_seed,
        'workers': config.workers,
        'record_timing': config.record_timing,
        'config': config.to_dict(),
    }
    if extra:
        manifest.update(extra)
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path
