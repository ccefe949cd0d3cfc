"""Layered YAML configuration: command-line flag > config file > built-in default.

The file mirrors DEFAULTS section by section; unknown sections or keys are
rejected so typos fail loudly. Secrets (proxy credentials) are read from the
environment by ``requests`` and never belong in the file.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

__all__ = ['DEFAULTS', 'ConfigError', 'load_config', 'resolve', 'write_resolved']


class ConfigError(ValueError):
    pass


DEFAULTS = {
    'generator': {
        'base': 'toy',          # 'toy' or a generator checkpoint path
        'toy_seed': 0,
        'resolution': 64,
    },
    'finetune': {
        'kimg': 40.0,
        'batch_size': 8,
        'generator_lr': 2.5e-3,
        'discriminator_lr': 2.5e-3,
        'r1_gamma': None,
        'lambda_sketch': 5e-6,
        'lambda_color': 3.75e3,
        'blur_kernel': 13,
        'blur_sigma': 10.0,
        'xflip': True,
        'ada': False,
        'seed': 0,
        'checkpoint_kimg': None,
        'sketch_backend': 'fallback',
        'sketch_weights': None,
        'perceptual_backend': 'toy',
    },
    'inversion': {
        'steps': 500,
        'lambda_noise': 1e5,
        'lr': 0.1,
        'seed': 0,
        'w_avg_samples': 10000,
        'perceptual_backend': 'toy',
        'zero_noise': False,
    },
    'dataset': {
        'output_size': 1024,
        'max_attempts': 3,
        'backoff': 0.5,
        'timeout': 30.0,
    },
    'composite': {
        'parser': 'palette',
        'mask_dir': None,
        'parser_weights': None,
        'parser_class_index': None,  # class name -> output channel of the external parser
        'classes': ['skin', 'brows', 'eyes', 'eyeglasses', 'ears', 'nose', 'mouth', 'lips', 'hair'],
        'erode_radius': None,   # None: scaled from 4 px at 1024
        'blur_kernel': None,
        'blur_sigma': None,
    },
    'evaluate': {
        'backend': 'toy',
        'embedder_weights': None,
        'cache_dir': None,
    },
    'runtime': {
        'jobs': 4,
    },
}


def _merge(base, override, where=''):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f'unknown config key {where}{key!r}')
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f'config section {where}{key!r} must be a mapping')
            out[key] = _merge(base[key], value, f'{where}{key}.')
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    """Defaults overlaid with the YAML file at ``path`` (if given)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'config file not found: {path}')
    try:
        data = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f'{path}: invalid YAML: {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError(f'{path}: top level must be a mapping')
    return _merge(DEFAULTS, data)


def resolve(config_path, section: str, flags: dict) -> dict:
    """Full config with ``flags`` (explicitly given values only) applied to ``section``."""
    cfg = load_config(config_path)
    for key, value in flags.items():
        if key not in cfg[section]:
            raise ConfigError(f'unknown key {section}.{key}')
        cfg[section][key] = value
    return cfg


def write_resolved(cfg: dict, out_dir, name: str = 'resolved_config.yaml') -> Path:
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg, sort_keys=True), encoding='utf-8')
    return path
