import numpy as np
import pytest
import torch

from rend2real.generators import make_noise, map_to_wplus, sample_z
from rend2real.imaging import BlurSpec, downsample, gaussian_blur
from rend2real.losses import (BackendUnavailable, GradientSketchExtractor, IdentityLoss, LossWeights,
                              TorchScriptSketchExtractor, color_distance, color_loss, identity_loss,
                              make_backbone, make_sketch_extractor, perceptual_distance, sketch_distance,
                              sketch_loss, toy_backbone)


def test_loss_weight_defaults():
    # lambda_s = 5e-6, lambda_c = 3.75e3
    w = LossWeights()
    assert w.lambda_sketch == 5e-6 and w.lambda_color == 3.75e3


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)


def _lpips_oracle(a, b, backbone):
    total = 0.0
    for fa, fb in zip(backbone(a[None]), backbone(b[None])):
        fa = fa[0].double().numpy()
        fb = fb[0].double().numpy()
        na = fa / (np.sqrt((fa ** 2).sum(axis=0, keepdims=True)) + 1e-10)
        nb = fb / (np.sqrt((fb ** 2).sum(axis=0, keepdims=True)) + 1e-10)
        total += ((na - nb) ** 2).sum(axis=0).mean()
    return total


def test_perceptual_distance_matches_reference_formula():
    bb = toy_backbone()
    gen = torch.Generator().manual_seed(1)
    a = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    b = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    assert float(perceptual_distance(a, b, bb)) == pytest.approx(_lpips_oracle(a, b, bb), rel=1e-5)


def test_perceptual_distance_properties():
    bb = toy_backbone()
    a = torch.rand(2, 3, 16, 16) * 2 - 1
    b = torch.rand(2, 3, 16, 16) * 2 - 1
    d = perceptual_distance(a, b, bb)
    assert d.shape == (2,) and (d > 0).all()
    assert torch.allclose(d, perceptual_distance(b, a, bb))
    assert float(perceptual_distance(a[0], a[0], bb)) == 0.0
    with pytest.raises(ValueError):
        perceptual_distance(a, b[:, :, :8], bb)


def test_channel_weights_scale_distance():
    bb = toy_backbone()
    a, b = torch.rand(3, 16, 16), torch.rand(3, 16, 16)
    base = float(perceptual_distance(a, b, bb))
    bb.channel_weights = [torch.full((c,), 2.0) for c in (16, 32, 64)]
    assert float(perceptual_distance(a, b, bb)) == pytest.approx(2 * base, rel=1e-6)


def test_toy_backbone_is_seeded():
    a = torch.rand(1, 3, 8, 8)
    f1, f2 = toy_backbone(5)(a), toy_backbone(5)(a)
    assert all(torch.equal(x, y) for x, y in zip(f1, f2))
    assert not torch.equal(toy_backbone(6)(a)[0], f1[0])
    assert not any(p.requires_grad for p in toy_backbone().parameters())


def test_sketch_of_constant_image_is_blank():
    s = GradientSketchExtractor()(torch.full((3, 16, 16), 0.2))
    assert s.shape == (1, 16, 16) and s.max() < 1e-4


def test_sketch_ramp_response():
    # luminance ramp of slope 0.01 per pixel -> |grad| = 0.01 -> tanh(0.1)
    lum = torch.arange(32, dtype=torch.float64) * 0.01
    img = (lum * 2 - 1).view(1, 1, 32).expand(3, 32, 32).clone()
    s = GradientSketchExtractor().double()(img)
    assert float(s[0, 16, 16]) == pytest.approx(np.tanh(0.1), rel=1e-6)


def test_sketch_extractor_enforces_resolution():
    with pytest.raises(ValueError):
        GradientSketchExtractor(resolution=32)(torch.zeros(3, 16, 16))


def test_missing_pretrained_backends():
    with pytest.raises(BackendUnavailable):
        TorchScriptSketchExtractor('/nonexistent/sketch.pt')
    with pytest.raises(BackendUnavailable):
        make_sketch_extractor('deepfaceediting', None)
    with pytest.raises(ValueError):
        make_backbone('nope')


def test_distance_terms_match_direct_composition():
    gen = torch.Generator().manual_seed(2)
    real = torch.rand(2, 3, 32, 32, generator=gen) * 2 - 1
    rend = torch.rand(2, 3, 32, 32, generator=gen) * 2 - 1
    ex, bb, blur = GradientSketchExtractor(), toy_backbone(), BlurSpec(5, 2.0)
    ls = sketch_distance(real, rend, ex, 16)
    assert torch.allclose(ls, (ex(downsample(real, 16)) - ex(downsample(rend, 16))).abs().mean())
    lc = color_distance(real, rend, bb, blur, 8)
    ref = perceptual_distance(gaussian_blur(downsample(real, 8), blur), gaussian_blur(downsample(rend, 8), blur), bb)
    assert torch.allclose(lc, ref.mean())


def test_identity_losses_zero_at_clone(tiny_pair):
    w = map_to_wplus(tiny_pair.g_real, sample_z(3, 0, 32))
    n = make_noise(tiny_pair.g_real, 3, seed=1)
    blur = BlurSpec(3, 1.0)
    assert sketch_loss(tiny_pair, w, GradientSketchExtractor(), n).item() == 0.0
    assert color_loss(tiny_pair, w, toy_backbone(), n, blur=blur).item() == 0.0
    total = identity_loss(tiny_pair, w, LossWeights(), GradientSketchExtractor(), toy_backbone(), n, blur=blur)
    assert total.item() == 0.0


def test_identity_loss_gradients_reach_only_rendering(tiny_pair):
    with torch.no_grad():
        tiny_pair.g_rendering.synthesis.b16.conv1.bias.add_(0.2)
    w = map_to_wplus(tiny_pair.g_real, sample_z(2, 0, 32)).detach()
    n = make_noise(tiny_pair.g_real, 2, seed=1)
    loss = IdentityLoss(weights=LossWeights(1.0, 1.0), blur=BlurSpec(3, 1.0))(tiny_pair, w, n)
    loss.backward()
    assert loss.item() > 0
    assert tiny_pair.g_rendering.synthesis.b16.conv1.bias.grad is not None
    assert all(p.grad is None for p in tiny_pair.g_real.synthesis.parameters())
    assert all(p.grad is None for p in tiny_pair.g_real.mapping.parameters())


def test_identity_loss_combines_with_weights():
    idl = IdentityLoss(weights=LossWeights(2.0, 3.0))
    assert float(idl.combine(torch.tensor(1.0), torch.tensor(10.0))) == 32.0
