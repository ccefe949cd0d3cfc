import csv
import math

import pytest
import torch

from rend2real.generators import make_noise, map_to_wplus, parameter_checksum, sample_z, synthesize
from rend2real.inversion import (InversionConfig, InversionError, initial_noise, invert, learning_rate,
                                 load_latent, load_noise, noise_regularization, save_latent, save_noise,
                                 save_trace)


def test_config_defaults():
    cfg = InversionConfig()
    assert cfg.steps == 500 and cfg.lambda_noise == 1e5


def test_learning_rate_schedule():
    cfg = InversionConfig(steps=100, lr_base=0.1)
    assert learning_rate(0, cfg) == 0.0
    # cosine ramp-up over the first 5 % of steps
    assert learning_rate(2, cfg) == pytest.approx(0.1 * 0.4)
    assert learning_rate(50, cfg) == pytest.approx(0.1)
    # ramp-down over the last 25 %: 0.5 - 0.5 cos(pi * (1 - t) / 0.25)
    assert learning_rate(90, cfg) == pytest.approx(0.1 * (0.5 - 0.5 * math.cos(math.pi * 0.4)))


def test_noise_regularization_oracle():
    # 2x2 map: every circular neighbour product mean is computed by hand
    n = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).view(1, 1, 2, 2)
    horiz = (1 * 2 + 2 * 1 + 3 * 4 + 4 * 3) / 4
    vert = (1 * 3 + 2 * 4 + 3 * 1 + 4 * 2) / 4
    assert float(noise_regularization([n])) == pytest.approx(horiz ** 2 + vert ** 2)


def test_noise_regularization_prefers_white_noise():
    gen = torch.Generator().manual_seed(0)
    white = torch.randn(1, 1, 32, 32, generator=gen)
    smooth = torch.ones(1, 1, 32, 32)
    assert float(noise_regularization([white])) < 1e-2 < float(noise_regularization([smooth]))


def test_initial_noise_is_normalized(tiny_g):
    for n in initial_noise(tiny_g, 0):
        assert abs(float(n.mean())) < 1e-6 and float(n.square().mean()) == pytest.approx(1.0, rel=1e-5)


@pytest.fixture
def target(tiny_g):
    with torch.no_grad():
        return synthesize(tiny_g, map_to_wplus(tiny_g, sample_z(1, 42, 32))[0], make_noise(tiny_g, 1, seed=43))


def test_invert_reduces_distance_and_leaves_generator(tiny_g, target):
    before = parameter_checksum(tiny_g)
    res = invert(tiny_g, target, InversionConfig(steps=80, w_avg_samples=500))
    assert parameter_checksum(tiny_g) == before
    assert all(p.grad is None for p in tiny_g.parameters())
    assert len(res.loss_trace) == 80 and all(math.isfinite(v) for v in res.loss_trace)
    assert res.final_perceptual < 0.5 * res.initial_perceptual
    assert res.wplus_star.shape == (tiny_g.num_ws, 32)


def test_returned_latent_reproduces_last_trace_entry(tiny_g, target):
    from rend2real.losses import make_backbone, perceptual_distance
    res = invert(tiny_g, target, InversionConfig(steps=20, w_avg_samples=200))
    with torch.no_grad():
        img = synthesize(tiny_g, res.wplus_star, res.noise_star)
        d = float(perceptual_distance(target, img, make_backbone('toy')))
    assert d == pytest.approx(res.final_perceptual, rel=1e-5)


def test_invert_starts_from_average_latent(tiny_g, target):
    from rend2real.generators import mean_wplus
    res = invert(tiny_g, target, InversionConfig(steps=1, w_avg_samples=300))
    assert torch.equal(res.wplus_star, mean_wplus(tiny_g, 300, seed=0))


def test_invert_rejects_wrong_resolution(tiny_g):
    with pytest.raises(ValueError):
        invert(tiny_g, torch.zeros(3, 32, 32), InversionConfig(steps=1))


def test_non_finite_target_raises(tiny_g):
    x = torch.full((3, 16, 16), float('nan'))
    with pytest.raises(InversionError):
        invert(tiny_g, x, InversionConfig(steps=3, w_avg_samples=10))


def test_file_round_trips(tiny_g, target, tmp_path):
    res = invert(tiny_g, target, InversionConfig(steps=3, w_avg_samples=10))
    save_latent(tmp_path / 'w.r2r', res.wplus_star)
    save_noise(tmp_path / 'n.r2r', res.noise_star)
    w = load_latent(tmp_path / 'w.r2r')
    noise = load_noise(tmp_path / 'n.r2r')
    with torch.no_grad():
        assert torch.equal(synthesize(tiny_g, w, noise), synthesize(tiny_g, res.wplus_star, res.noise_star))
    with pytest.raises(ValueError):
        load_latent(tmp_path / 'n.r2r')
    save_trace(tmp_path / 't.csv', res)
    rows = list(csv.DictReader(open(tmp_path / 't.csv')))
    assert len(rows) == 3 and float(rows[-1]['perceptual']) == pytest.approx(res.final_perceptual, rel=1e-6)
