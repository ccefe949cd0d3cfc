import pytest
import yaml

from rend2real.config import DEFAULTS, ConfigError, load_config, resolve, write_resolved


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg == DEFAULTS and cfg is not DEFAULTS
    assert cfg['finetune']['kimg'] == 40.0
    assert cfg['inversion']['steps'] == 500 and cfg['inversion']['lambda_noise'] == 1e5
    assert cfg['finetune']['lambda_sketch'] == 5e-6 and cfg['finetune']['lambda_color'] == 3.75e3


def test_precedence_flag_over_file_over_default(tmp_path):
    path = tmp_path / 'c.yaml'
    path.write_text(yaml.safe_dump({'finetune': {'kimg': 10.0, 'batch_size': 4}}))
    cfg = resolve(path, 'finetune', {'kimg': 2.5})
    assert cfg['finetune']['kimg'] == 2.5              # flag
    assert cfg['finetune']['batch_size'] == 4          # file
    assert cfg['finetune']['seed'] == DEFAULTS['finetune']['seed']  # default


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / 'c.yaml'
    path.write_text(yaml.safe_dump({'finetune': {'kimgs': 1}}))
    with pytest.raises(ConfigError, match='kimgs'):
        load_config(path)
    path.write_text(yaml.safe_dump({'nonsense': {}}))
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        resolve(None, 'finetune', {'bogus': 1})


def test_invalid_yaml_and_missing_file(tmp_path):
    path = tmp_path / 'c.yaml'
    path.write_text('finetune: [unclosed')
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text('- a list')
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / 'absent.yaml')


def test_resolved_round_trip(tmp_path):
    cfg = resolve(None, 'inversion', {'steps': 7})
    path = write_resolved(cfg, tmp_path / 'out')
    assert load_config(path) == cfg
