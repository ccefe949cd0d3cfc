"""Identity-preservation losses for fine-tuning the rendering generator.

* sketch loss: mean L1 between edge sketches of both generators' outputs at
  half resolution (512 for 1024x1024 generators)
* color loss: LPIPS-style distance between blurred quarter-resolution outputs
* identity loss: ``lambda_sketch * sketch + lambda_color * color``

g_real, the sketch extractor and the perceptual backbone never receive
gradients: g_real runs under ``no_grad`` and the two networks are frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generators import GeneratorPair, synthesize
from .imaging import BlurSpec, downsample, gaussian_blur

__all__ = [
    'LossWeights', 'SketchExtractor', 'GradientSketchExtractor', 'TorchScriptSketchExtractor',
    'PerceptualBackbone', 'toy_backbone', 'vgg16_backbone', 'perceptual_distance',
    'sketch_extract', 'sketch_loss', 'color_loss', 'identity_loss', 'IdentityLoss',
    'BackendUnavailable', 'make_sketch_extractor', 'make_backbone',
]


class BackendUnavailable(RuntimeError):
    """A pretrained backend was requested but its weights cannot be loaded."""


@dataclass(frozen=True)
class LossWeights:
    lambda_sketch: float = 5e-6
    lambda_color: float = 3.75e3

    def __post_init__(self):
        if self.lambda_sketch < 0 or self.lambda_color < 0:
            raise ValueError('loss weights must be non-negative')


class SketchExtractor(Protocol):
    resolution: Optional[int]

    def __call__(self, img: torch.Tensor) -> torch.Tensor: ...


class GradientSketchExtractor(nn.Module):
    """Differentiable edge sketch: Gaussian-derivative gradient magnitude.

    RGB in [-1, 1] is reduced to luminance in [0, 1], differentiated with
    separable derivative-of-Gaussian filters (reflection padded) and squashed
    with ``tanh(|grad| / softness)`` into [0, 1).
    """

    def __init__(self, sigma: float = 1.0, softness: float = 0.1, resolution: Optional[int] = None):
        super().__init__()
        radius = max(1, int(math.ceil(3 * sigma)))
        taps = torch.arange(-radius, radius + 1, dtype=torch.float64)
        gauss = torch.exp(-0.5 * (taps / sigma) ** 2)
        gauss = gauss / gauss.sum()
        # derivative taps normalized so a unit ramp has unit response
        deriv = -taps * gauss
        deriv = deriv / (deriv * -taps).sum()
        self.register_buffer('gauss', gauss.float())
        self.register_buffer('deriv', deriv.float())
        self.radius = radius
        self.softness = softness
        self.resolution = resolution

    def _sep(self, x, kx, ky):
        x = F.conv2d(x, kx.view(1, 1, 1, -1))
        return F.conv2d(x, ky.view(1, 1, -1, 1))

    def forward(self, img):
        single = img.ndim == 3
        x = img.unsqueeze(0) if single else img
        if self.resolution is not None and x.shape[-1] != self.resolution:
            raise ValueError(f'sketch extractor expects {self.resolution}px input, got {x.shape[-1]}px')
        lum = (0.299 * x[:, 0:1] + 0.587 * x[:, 1:2] + 0.114 * x[:, 2:3] + 1) / 2
        r = self.radius
        lum = F.pad(lum, (r, r, r, r), mode='reflect')
        gx = self._sep(lum, self.deriv, self.gauss)
        gy = self._sep(lum, self.gauss, self.deriv)
        mag = torch.sqrt(gx.square() + gy.square() + 1e-12)
        out = torch.tanh(mag / self.softness)
        return out[0] if single else out


class TorchScriptSketchExtractor(nn.Module):
    """Drop-in for a pretrained sketch network exported with TorchScript."""

    def __init__(self, path, resolution: Optional[int] = None):
        super().__init__()
        path = Path(path) if path else None
        if path is None or not path.exists():
            raise BackendUnavailable(f'sketch extractor weights not found: {path}')
        self.net = torch.jit.load(str(path), map_location='cpu').eval()
        self.net.requires_grad_(False)
        self.resolution = resolution

    def forward(self, img):
        single = img.ndim == 3
        out = self.net(img.unsqueeze(0) if single else img).clamp(0, 1)
        return out[0] if single else out


class PerceptualBackbone(nn.Module):
    """Frozen feature pyramid; ``forward`` returns one feature map per stage.

    ``channel_weights`` holds the per-stage linear weights of LPIPS (None means
    uniform weights of 1, i.e. a plain channel sum).
    """

    def __init__(self, stages: Sequence[nn.Module], channel_weights=None,
                 shift=None, scale=None, name='custom'):
        super().__init__()
        self.stages = nn.ModuleList(stages)
        self.channel_weights = channel_weights
        self.register_buffer('shift', torch.as_tensor(shift if shift is not None else [0.0, 0.0, 0.0]).view(1, -1, 1, 1))
        self.register_buffer('scale', torch.as_tensor(scale if scale is not None else [1.0, 1.0, 1.0]).view(1, -1, 1, 1))
        self.name = name
        self.requires_grad_(False)
        self.eval()

    def forward(self, x):
        x = (x - self.shift) / self.scale
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def toy_backbone(seed: int = 1234, widths=(16, 32, 64)) -> PerceptualBackbone:
    """Small randomly initialized conv pyramid (frozen at ``seed``)."""
    gen = torch.Generator().manual_seed(seed)
    stages = []
    in_ch = 3
    for i, out_ch in enumerate(widths):
        conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        with torch.no_grad():
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2 / (in_ch * 9)))
            conv.bias.zero_()
        layers = [conv, nn.ReLU()] if i == 0 else [nn.MaxPool2d(2), conv, nn.ReLU()]
        stages.append(nn.Sequential(*layers))
        in_ch = out_ch
    return PerceptualBackbone(stages, name=f'toy-{seed}')


_VGG_SLICES = ((0, 4), (4, 9), (9, 16), (16, 23), (23, 30))


def vgg16_backbone() -> PerceptualBackbone:
    """ImageNet VGG16 sliced at relu1_2..relu5_3 with the LPIPS input scaling."""
    try:
        import torchvision
        vgg = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1).features
    except Exception as exc:
        raise BackendUnavailable(f'VGG16 weights unavailable: {exc}') from exc
    stages = [nn.Sequential(*[vgg[i] for i in range(a, b)]) for a, b in _VGG_SLICES]
    return PerceptualBackbone(stages, shift=[-0.030, -0.088, -0.188], scale=[0.458, 0.448, 0.450],
                              name='vgg16')


def make_backbone(name: str = 'toy', seed: int = 1234) -> PerceptualBackbone:
    if name == 'toy':
        return toy_backbone(seed)
    if name == 'vgg16':
        return vgg16_backbone()
    raise ValueError(f'unknown perceptual backend {name!r}')


def make_sketch_extractor(name: str = 'fallback', weights=None, resolution=None):
    if name == 'fallback':
        return GradientSketchExtractor(resolution=resolution)
    if name == 'deepfaceediting':
        return TorchScriptSketchExtractor(weights, resolution=resolution)
    raise ValueError(f'unknown sketch backend {name!r}')


def _unit_normalize(feat, eps=1e-10):
    norm = torch.sqrt(feat.square().sum(dim=1, keepdim=True))
    return feat / (norm + eps)


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, backbone: PerceptualBackbone) -> torch.Tensor:
    """LPIPS-style distance; returns ``[N]`` for batches or a scalar for single images."""
    if a.shape != b.shape:
        raise ValueError(f'shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}')
    single = a.ndim == 3
    if single:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    feats_a = backbone(a)
    feats_b = backbone(b)
    total = 0
    for i, (fa, fb) in enumerate(zip(feats_a, feats_b)):
        diff = (_unit_normalize(fa) - _unit_normalize(fb)).square()
        weights = backbone.channel_weights
        if weights is not None:
            diff = diff * weights[i].view(1, -1, 1, 1)
        total = total + diff.sum(dim=1).mean(dim=(1, 2))
    return total[0] if single else total


def sketch_extract(extractor, img: torch.Tensor) -> torch.Tensor:
    return extractor(img)


def _pair_images(pair: GeneratorPair, w, noise):
    with torch.no_grad():
        real = synthesize(pair.g_real, w, noise)
    rend = synthesize(pair.g_rendering, w, noise)
    return real, rend


def sketch_distance(real, rend, extractor, resolution):
    s_real = extractor(downsample(real, resolution))
    s_rend = extractor(downsample(rend, resolution))
    return (s_real - s_rend).abs().mean()


def color_distance(real, rend, backbone, blur, resolution):
    a = gaussian_blur(downsample(real, resolution), blur)
    b = gaussian_blur(downsample(rend, resolution), blur)
    return perceptual_distance(a, b, backbone).mean()


def sketch_loss(pair: GeneratorPair, w, extractor, noise, resolution=None):
    real, rend = _pair_images(pair, w, noise)
    return sketch_distance(real, rend, extractor, resolution or pair.resolution // 2)


def color_loss(pair: GeneratorPair, w, backbone, noise, blur: BlurSpec = BlurSpec(13, 10.0), resolution=None):
    real, rend = _pair_images(pair, w, noise)
    return color_distance(real, rend, backbone, blur, resolution or pair.resolution // 4)


def identity_loss(pair, w, weights: LossWeights, extractor, backbone, noise,
                  blur: BlurSpec = BlurSpec(13, 10.0)):
    return IdentityLoss(extractor, backbone, weights, blur)(pair, w, noise)


@dataclass
class IdentityLoss:
    """Bundles the loss backends so the training loop renders each image once."""

    extractor: nn.Module = field(default_factory=GradientSketchExtractor)
    backbone: PerceptualBackbone = field(default_factory=toy_backbone)
    weights: LossWeights = field(default_factory=LossWeights)
    blur: BlurSpec = field(default_factory=lambda: BlurSpec(13, 10.0))
    sketch_resolution: Optional[int] = None
    color_resolution: Optional[int] = None

    def terms(self, real, rend):
        """(L_sketch, L_color) from already rendered g_real / g_rendering images."""
        res = real.shape[-1]
        l_sketch = sketch_distance(real, rend, self.extractor, self.sketch_resolution or res // 2)
        l_color = color_distance(real, rend, self.backbone, self.blur, self.color_resolution or res // 4)
        return l_sketch, l_color

    def combine(self, l_sketch, l_color):
        return self.weights.lambda_sketch * l_sketch + self.weights.lambda_color * l_color

    def __call__(self, pair, w, noise):
        real, rend = _pair_images(pair, w, noise)
        return self.combine(*self.terms(real, rend))
