import csv

import torch

from rend2real.generators import make_noise, map_to_wplus, sample_z, synthesize
from rend2real.imaging import save_image
from rend2real.inference import FRESH_NOISE_OFFSET, batch_realify, fresh_noise, realify
from rend2real.inversion import InversionConfig, invert, load_latent

CFG = InversionConfig(steps=15, w_avg_samples=200, seed=4)


def _render(pair, seed):
    with torch.no_grad():
        return synthesize(pair.g_rendering, map_to_wplus(pair.g_rendering, sample_z(1, seed, 32))[0],
                          make_noise(pair.g_rendering, 1, seed=seed + 1))


def test_realify_decodes_inverted_latent_with_g_real(tiny_pair):
    with torch.no_grad():
        tiny_pair.g_rendering.synthesis.b16.conv1.bias.add_(0.1)
    x = _render(tiny_pair, 5)
    out, result = realify(tiny_pair, x, CFG)
    ref = invert(tiny_pair.g_rendering, x, CFG)
    assert torch.equal(result.wplus_star, ref.wplus_star)
    with torch.no_grad():
        expected = synthesize(tiny_pair.g_real, ref.wplus_star, make_noise(tiny_pair.g_real, 1, seed=4 + FRESH_NOISE_OFFSET))
    assert torch.equal(out, expected)


def test_optimized_noise_is_discarded(tiny_pair):
    # noise strengths start at zero; give the noise inputs some effect
    with torch.no_grad():
        for g in (tiny_pair.g_real, tiny_pair.g_rendering):
            for name, p in g.synthesis.named_parameters():
                if name.endswith('noise_strength'):
                    p.fill_(0.3)
    x = _render(tiny_pair, 6)
    fresh, result = realify(tiny_pair, x, CFG)
    with torch.no_grad():
        with_opt = synthesize(tiny_pair.g_real, result.wplus_star, result.noise_star)
    assert not torch.equal(fresh, with_opt)
    zero, _ = realify(tiny_pair, x, CFG, zero_noise=True)
    with torch.no_grad():
        assert torch.equal(zero, synthesize(tiny_pair.g_real, result.wplus_star, fresh_noise(tiny_pair, 4, zero=True)))


def test_batch_realify_outputs_and_failures(tiny_pair, tmp_path):
    save_image(_render(tiny_pair, 7).clamp(-1, 1), tmp_path / 'in' / 'a.png')
    (tmp_path / 'in' / 'b.png').write_bytes(b'corrupt')
    save_image(torch.zeros(3, 8, 8), tmp_path / 'in' / 'c.png')
    report = batch_realify(tiny_pair, sorted((tmp_path / 'in').iterdir()), tmp_path / 'out', CFG)
    assert [r['status'] for r in report.rows] == ['ok', 'failed', 'failed']
    assert (tmp_path / 'out' / 'a_real.png').exists()
    assert load_latent(tmp_path / 'out' / 'a_wplus.r2r').shape == (tiny_pair.g_real.num_ws, 32)
    assert (tmp_path / 'out' / 'a_trace.csv').exists()
    report.write_csv(tmp_path / 'out' / 'report.csv')
    rows = list(csv.DictReader(open(tmp_path / 'out' / 'report.csv')))
    assert len(rows) == 3 and 'ImageFormatError' in rows[1]['error'] and float(rows[0]['wall_time_s']) > 0
