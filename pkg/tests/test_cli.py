import csv
import json

import pytest
import torch
import yaml

from rend2real.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main
from rend2real.generators import save_pair
from rend2real.imaging import load_image, save_image
from rend2real.serialization import read_arrays


def _run(argv, capsys):
    status = main(argv)
    out, err = capsys.readouterr()
    return status, out, err


def _envelope(err):
    return json.loads(err.strip().splitlines()[-1])


def test_unknown_flag_is_usage_error(capsys):
    status, _, err = _run(['finetune', '--no-such-flag'], capsys)
    assert status == EXIT_USAGE
    env = _envelope(err)
    assert env['code'] == 'usage' and env['context']['exit_status'] == EXIT_USAGE


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / 'bad.yaml'
    cfg.write_text(yaml.safe_dump({'inversion': {'stepz': 3}}))
    status, _, err = _run(['realify', '--checkpoint', str(tmp_path / 'x.r2r'), str(tmp_path / 'a.png'),
                           '--out', str(tmp_path / 'o'), '--config', str(cfg)], capsys)
    assert status == EXIT_CONFIG and _envelope(err)['code'] == 'config'


def test_missing_checkpoint_exit_code(tmp_path, capsys):
    save_image(torch.zeros(3, 16, 16), tmp_path / 'a.png')
    status, _, err = _run(['realify', '--checkpoint', str(tmp_path / 'absent.r2r'), str(tmp_path / 'a.png'),
                           '--out', str(tmp_path / 'o')], capsys)
    assert status == EXIT_MISSING
    env = _envelope(err)
    assert env['code'] == 'missing_input' and 'absent.r2r' in env['message']


def test_realify_writes_outputs(tmp_path, capsys, tiny_pair):
    ckpt = tmp_path / 'pair.r2r'
    save_pair(tiny_pair, ckpt)
    save_image(torch.rand(3, 16, 16) * 2 - 1, tmp_path / 'in.png')
    cfg = tmp_path / 'c.yaml'
    cfg.write_text(yaml.safe_dump({'inversion': {'steps': 50, 'w_avg_samples': 500}}))
    status, out, err = _run(['realify', '--checkpoint', str(ckpt), str(tmp_path / 'in.png'),
                             '--out', str(tmp_path / 'o'), '--steps', '4', '--config', str(cfg)], capsys)
    assert status == EXIT_OK, err
    assert json.loads(out) == {'ok': 1, 'failed': 0}
    assert load_image(tmp_path / 'o' / 'in_real.png').shape == (3, 16, 16)
    arrays, _ = read_arrays(tmp_path / 'o' / 'in_wplus.r2r')
    assert arrays
    rows = list(csv.DictReader(open(tmp_path / 'o' / 'report.csv')))
    assert len(rows) == 1 and rows[0]['status'] == 'ok'
    resolved = yaml.safe_load((tmp_path / 'o' / 'resolved_config.yaml').read_text())
    assert resolved['inversion']['steps'] == 4 and resolved['inversion']['w_avg_samples'] == 500


def test_finetune_defaults_and_override(tmp_path, capsys):
    data = tmp_path / 'data'
    for i in range(2):
        save_image(torch.rand(3, 64, 64) * 2 - 1, data / f'{i}.png')
    status, out, err = _run(['finetune', '--data', str(data), '--out', str(tmp_path / 'ft'),
                             '--kimg', '0.004', '--batch-size', '2'], capsys)
    assert status == EXIT_OK, err
    assert json.loads(out)['reals_seen'] >= 4
    assert (tmp_path / 'ft' / 'pair.r2r').exists() and (tmp_path / 'ft' / 'log.jsonl').exists()
    resolved = yaml.safe_load((tmp_path / 'ft' / 'resolved_config.yaml').read_text())
    assert resolved['finetune']['kimg'] == 0.004 and resolved['finetune']['batch_size'] == 2
    assert resolved['finetune']['lambda_color'] == 3.75e3


def test_dataset_align_and_stats(tmp_path, capsys):
    from rend2real.selftest import make_fixtures
    raw, landmarks = make_fixtures(tmp_path, n=2)
    status, _, err = _run(['dataset', 'align', '--raw', str(raw), '--landmarks', str(landmarks),
                           '--out', str(tmp_path / 'al'), '--size', '32'], capsys)
    assert status == EXIT_OK, err
    assert load_image(tmp_path / 'al' / 'face0.png').shape == (3, 32, 32)
    status, out, err = _run(['dataset', 'stats', '--dir', str(tmp_path / 'al')], capsys)
    assert status == EXIT_OK, err
    assert json.loads(out)['count'] == 2


def test_evaluate_fid_writes_summary(tmp_path, capsys):
    gen = torch.Generator().manual_seed(0)
    for d in ('a', 'b'):
        for i in range(3):
            save_image(torch.rand(3, 16, 16, generator=gen) * 2 - 1, tmp_path / d / f'{i}.png')
    status, _, err = _run(['evaluate', 'fid', '--set-a', str(tmp_path / 'a'), '--set-b', str(tmp_path / 'b'),
                           '--out', str(tmp_path / 'e' / 'fid.csv')], capsys)
    assert status == EXIT_OK, err
    summary = json.loads((tmp_path / 'e' / 'fid.summary.json').read_text())
    assert summary['fid'] >= 0


@pytest.mark.parametrize('argv', [['--help'], ['selftest', '--help']])
def test_help(argv, capsys):
    status, out, _ = _run(argv, capsys)
    assert status == EXIT_OK and 'Usage' in out
