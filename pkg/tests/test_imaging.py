import logging

import numpy as np
import PIL.Image
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.ndimage import correlate1d

from rend2real.imaging import (BlurSpec, ImageFormatError, downsample, from_uint8, gaussian_blur,
                               gaussian_kernel1d, horizontal_flip, load_image, load_mask, resolution_log2,
                               save_image, save_mask, to_uint8)


def test_blur_defaults_match_reference_values():
    # kernel 13, sigma 10 for the color loss
    spec = BlurSpec()
    assert (spec.kernel_size, spec.sigma) == (13, 10.0)


@pytest.mark.parametrize('size,sigma', [(0, 1.0), (4, 1.0), (13, 0.0), (13, -1.0)])
def test_blur_spec_rejects_invalid(size, sigma):
    with pytest.raises(ValueError):
        BlurSpec(size, sigma)


def test_scaled_spec_stays_odd():
    s = BlurSpec(21, 5.0).scaled(64 / 1024)
    assert s.kernel_size % 2 == 1 and s.sigma == pytest.approx(5.0 / 16)


def test_kernel_matches_sampled_gaussian():
    k = gaussian_kernel1d(BlurSpec(13, 10.0), dtype=torch.float64).numpy()
    x = np.arange(-6, 7)
    ref = np.exp(-x ** 2 / 200.0)
    np.testing.assert_allclose(k, ref / ref.sum(), atol=1e-12)
    assert abs(k.sum() - 1) < 1e-6


def test_blur_matches_scipy_reflect_filter():
    img = torch.rand(3, 20, 17, dtype=torch.float64)
    spec = BlurSpec(7, 2.0)
    k = gaussian_kernel1d(spec, dtype=torch.float64).numpy()
    ref = correlate1d(correlate1d(img.numpy(), k, axis=1, mode='mirror'), k, axis=2, mode='mirror')
    np.testing.assert_allclose(gaussian_blur(img, spec).numpy(), ref, atol=1e-12)


def test_blur_batch_equals_single():
    imgs = torch.rand(2, 3, 16, 16)
    spec = BlurSpec(5, 1.5)
    assert torch.allclose(gaussian_blur(imgs, spec)[1], gaussian_blur(imgs[1], spec))


def test_blur_rejects_kernel_larger_than_image():
    with pytest.raises(ValueError):
        gaussian_blur(torch.zeros(3, 5, 5), BlurSpec(13, 10.0))


def test_downsample_integer_factor_is_block_mean():
    img = torch.rand(3, 12, 12, dtype=torch.float64)
    ref = img.numpy().reshape(3, 4, 3, 4, 3).mean(axis=(2, 4))
    np.testing.assert_allclose(downsample(img, 4).numpy(), ref, atol=1e-12)


def test_downsample_non_integer_preserves_constant():
    img = torch.full((3, 10, 10), 0.3)
    out = downsample(img, 4)
    assert out.shape == (3, 4, 4) and torch.allclose(out, torch.full_like(out, 0.3), atol=1e-6)


def test_downsample_rejects_upsampling():
    with pytest.raises(ValueError):
        downsample(torch.zeros(3, 8, 8), 16)


def test_flip_is_involution():
    img = torch.rand(3, 5, 7)
    assert torch.equal(horizontal_flip(horizontal_flip(img)), img)
    assert torch.equal(horizontal_flip(img)[..., 0], img[..., -1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=12, max_size=12))
def test_uint8_round_trip_error_bounded(values):
    img = torch.tensor(values, dtype=torch.float32).view(3, 2, 2)
    assert (from_uint8(to_uint8(img)) - img).abs().max() <= 1 / 255 + 1e-6


def test_zero_maps_to_128():
    assert to_uint8(torch.zeros(3, 1, 1))[0, 0, 0] == 128


def test_png_round_trip(tmp_path):
    img = torch.rand(3, 9, 11) * 2 - 1
    save_image(img, tmp_path / 'a.png')
    assert (load_image(tmp_path / 'a.png') - img).abs().max() <= 2 / 255


def test_load_missing_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / 'none.png')


def test_load_grayscale_rejected(tmp_path):
    PIL.Image.fromarray(np.zeros((4, 4), np.uint8), 'L').save(tmp_path / 'g.png')
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / 'g.png')


def test_load_corrupt_rejected(tmp_path):
    (tmp_path / 'bad.png').write_bytes(b'not a png')
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / 'bad.png')


def test_rgba_drops_alpha_with_warning(tmp_path, caplog):
    arr = np.zeros((3, 3, 4), np.uint8)
    arr[..., 0] = 255
    PIL.Image.fromarray(arr, 'RGBA').save(tmp_path / 'a.png')
    with caplog.at_level(logging.WARNING):
        img = load_image(tmp_path / 'a.png')
    assert img.shape == (3, 3, 3) and 'alpha' in caplog.text
    assert torch.allclose(img[0], torch.ones(3, 3))


def test_save_rejects_non_finite(tmp_path):
    img = torch.zeros(3, 2, 2)
    img[0, 0, 0] = float('nan')
    with pytest.raises(ValueError):
        save_image(img, tmp_path / 'x.png')


def test_mask_round_trip(tmp_path):
    m = torch.tensor([[0.0, 1.0], [0.5, 0.25]])
    save_mask(m, tmp_path / 'm.png')
    assert (load_mask(tmp_path / 'm.png') - m).abs().max() <= 0.5 / 255 + 1e-6


@pytest.mark.parametrize('res,expected', [(4, 2), (64, 6), (1024, 10)])
def test_resolution_log2(res, expected):
    assert resolution_log2(res) == expected


@pytest.mark.parametrize('res', [2, 48, 100])
def test_resolution_log2_rejects(res):
    with pytest.raises(ValueError):
        resolution_log2(res)
