import os
import sys
import json
import math
import logging
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

CONFIG_PATH = os.path.join(os.path.dirname(__file__), 'config', 'config.yaml')
ENV_PATH = os.path.join(os.path.dirname(__file__), 'config', '.env')

THREADS_ENV = 'SASENTANGLE_THREADS'
LOG_LEVEL_ENV = 'SASENTANGLE_LOG_LEVEL'

REQUIRED_CONFIG_KEYS = ['log_level', 'log_format', 'threads', 'grid']
REQUIRED_GRID_KEYS = ['shift_min', 'shift_max', 'shift_step', 'theta_step_deg', 'w_points', 'w_max_gamma']


class JsonFormatter(logging.Formatter):
    def format(self, record):
        log_record = {
            'time': self.formatTime(record, self.datefmt),
            'level': record.levelname,
            'name': record.name,
            'message': record.getMessage(),
        }
        if record.exc_info:
            log_record['exc_info'] = self.formatException(record.exc_info)
        return json.dumps(log_record)


# Load YAML config
def load_yaml(path):
    with open(path, 'r', encoding='utf-8') as f:
        return yaml.safe_load(f) or {}


# Load JSON config
def load_json(path):
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e
    except OSError as e:
        raise OSError(f"cannot read {path}: {e.strerror or e}") from e


def load_config_file(path):
    """Load a JSON or YAML run configuration, chosen by file suffix."""
    if path.lower().endswith(('.yaml', '.yml')):
        try:
            return load_yaml(path)
        except OSError as e:
            raise OSError(f"cannot read {path}: {e.strerror or e}") from e
    return load_json(path)


def write_text(path, text):
    """Write an artifact, creating parent directories; errors carry the path."""
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def dump_json(data) -> str:
    """Deterministic JSON text (sorted keys, fixed indentation, trailing newline)."""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + '\n'


def merge_env_config(config):
    """Merge environment overrides (thread count, log level) into the settings dict"""
    load_dotenv(dotenv_path=ENV_PATH)

    threads = os.getenv(THREADS_ENV)
    if threads:
        try:
            config['threads'] = int(threads)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got '{threads}'")

    level = os.getenv(LOG_LEVEL_ENV)
    if level:
        config['log_level'] = level.upper()

    return config


# Validate config.yaml
def validate_config(cfg):
    missing = [k for k in REQUIRED_CONFIG_KEYS if k not in cfg]
    if missing:
        raise ValueError(f"Missing config keys: {missing}")
    for k in REQUIRED_GRID_KEYS:
        if k not in cfg['grid']:
            raise ValueError(f"Missing grid config key: {k}")

    # Validate log level
    if cfg['log_level'] not in ['DEBUG', 'INFO', 'WARNING', 'ERROR']:
        raise ValueError("log_level must be one of: DEBUG, INFO, WARNING, ERROR")

    # Validate log format
    if cfg['log_format'] not in ['json', 'text']:
        raise ValueError("log_format must be 'json' or 'text'")

    # Validate thread count
    if not isinstance(cfg['threads'], int) or cfg['threads'] < 1:
        raise ValueError("threads must be a positive integer")
    return True


def load_settings(path: Optional[str] = None) -> Dict[str, Any]:
    """Global settings: config.yaml, environment overrides, validation."""
    config = load_yaml(path or CONFIG_PATH)
    config = merge_env_config(config)
    validate_config(config)
    return config


def setup_logging(config, log_path=None):
    log_level = getattr(logging, str(config.get('log_level', 'INFO')).upper(), logging.INFO)
    log_format = config.get('log_format', 'text')
    log_path = log_path or config.get('log_file')
    if log_format == 'json':
        formatter = JsonFormatter()
    else:
        formatter = logging.Formatter('%(asctime)s %(levelname)s %(name)s %(message)s')
    handlers = []
    # Console output goes to stderr so stdout stays clean for reports
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    handlers.append(console_handler)
    if log_path:
        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)
    logging.basicConfig(level=log_level, handlers=handlers, force=True)


def parse_complex(value: Any, name: str = 'value') -> complex:
    """
    Parse a complex number given as [re, im], {"re": .., "im": ..}, a number
    or a Python-style string such as "0.37-0.07j".
    """
    if isinstance(value, complex):
        result = value
    elif isinstance(value, bool):
        raise ValueError(f"{name}: expected a number, got a boolean")
    elif isinstance(value, (int, float)):
        result = complex(value, 0.0)
    elif isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"{name}: complex pair must have exactly two entries [re, im]")
        result = complex(float(value[0]), float(value[1]))
    elif isinstance(value, dict):
        unknown = set(value) - {'re', 'im'}
        if unknown:
            raise ValueError(f"{name}: unknown keys {sorted(unknown)} in complex value")
        result = complex(float(value.get('re', 0.0)), float(value.get('im', 0.0)))
    elif isinstance(value, str):
        try:
            result = complex(value.replace(' ', '').replace('i', 'j'))
        except ValueError:
            raise ValueError(f"{name}: cannot parse complex value '{value}'") from None
    else:
        raise ValueError(f"{name}: unsupported complex value {value!r}")
    if not (math.isfinite(result.real) and math.isfinite(result.imag)):
        raise ValueError(f"{name}: complex value must be finite")
    return result


def complex_pair(value: complex) -> list:
    return [value.real, value.imag]
