"""StyleGAN2-style generator and the realistic/rendering generator pair.

The architecture follows the StyleGAN2 "config F" layout at arbitrary power-of-two
resolution: an equalized-learning-rate mapping MLP (z -> w), a synthesis network
with modulated/demodulated 3x3 convolutions, per-layer learned noise strength and
skip-connection ToRGB aggregation. Upsampling uses bilinear interpolation instead
of the FIR upfirdn kernels of the official code.

Latents in W+ are ``[L, w_dim]`` (or batched ``[N, L, w_dim]``) with
``L = 2 * log2(resolution) - 2``. A noise bundle is a list with one
``[N or 1, 1, r, r]`` map per synthesis convolution.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import resolution_log2
from .serialization import read_arrays, write_arrays

__all__ = [
    'GeneratorConfig', 'Generator', 'GeneratorPair', 'ModulatedConv2d',
    'map_to_wplus', 'synthesize', 'mean_wplus', 'sample_z', 'make_noise',
    'clone_for_finetune', 'frozen_parameters', 'frozen_checksum',
    'save_generator', 'load_generator', 'save_pair', 'load_pair',
    'FrozenIntegrityError', 'toy_generator', 'parameter_checksum',
]


class FrozenIntegrityError(RuntimeError):
    """A parameter that must stay frozen has changed."""


@dataclass
class GeneratorConfig:
    resolution: int = 64
    z_dim: int = 512
    w_dim: int = 512
    mapping_layers: int = 4
    mapping_lr_mul: float = 0.01
    mapping_activation: str = 'lrelu'
    normalize_z: bool = True
    # channels(res) = min(channel_base // res, channel_max): 512 gives 128 at 4x4,
    # halving per doubling; the official 1024x1024 config uses 32768 / 512.
    channel_base: int = 512
    channel_max: int = 512
    channel_min: int = 1
    style_mixing_prob: float = 0.0

    @classmethod
    def full_scale(cls) -> 'GeneratorConfig':
        return cls(resolution=1024, mapping_layers=8, channel_base=32768, channel_max=512)

    def channels(self, res: int) -> int:
        return max(self.channel_min, min(self.channel_base // res, self.channel_max))

    @property
    def num_ws(self) -> int:
        return 2 * resolution_log2(self.resolution) - 2


def _lrelu(x):
    return F.leaky_relu(x, 0.2) * math.sqrt(2)


def normalize_2nd_moment(x, eps=1e-8):
    return x * (x.square().mean(dim=1, keepdim=True) + eps).rsqrt()


class EqualLinear(nn.Module):
    """Fully connected layer with equalized learning rate."""

    def __init__(self, in_features, out_features, bias_init=0.0, lr_mul=1.0, activation='linear'):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.full([out_features], float(bias_init)))
        self.weight_gain = lr_mul / math.sqrt(in_features)
        self.bias_gain = lr_mul
        self.activation = activation

    def forward(self, x):
        x = F.linear(x, self.weight * self.weight_gain, self.bias * self.bias_gain)
        if self.activation == 'lrelu':
            x = _lrelu(x)
        elif self.activation != 'linear':
            raise ValueError(f'unknown activation {self.activation!r}')
        return x


class MappingNetwork(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.normalize_z = cfg.normalize_z
        dims = [cfg.z_dim] + [cfg.w_dim] * cfg.mapping_layers
        for i in range(cfg.mapping_layers):
            layer = EqualLinear(dims[i], dims[i + 1], lr_mul=cfg.mapping_lr_mul,
                                activation=cfg.mapping_activation)
            setattr(self, f'fc{i}', layer)
        self.num_layers = cfg.mapping_layers

    def forward(self, z):
        x = normalize_2nd_moment(z) if self.normalize_z else z
        for i in range(self.num_layers):
            x = getattr(self, f'fc{i}')(x)
        return x


class ModulatedConv2d(nn.Module):
    """Style-modulated convolution; the style comes from an affine map of w."""

    def __init__(self, in_channels, out_channels, kernel_size, w_dim, demodulate=True, up=False):
        super().__init__()
        self.affine = EqualLinear(w_dim, in_channels, bias_init=1.0)
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.weight_gain = 1 / math.sqrt(in_channels * kernel_size ** 2)
        self.demodulate = demodulate
        self.up = up
        self.padding = kernel_size // 2

    def forward(self, x, w):
        styles = self.affine(w)
        return modulated_conv2d(x, self.weight * self.weight_gain, styles,
                                demodulate=self.demodulate, up=self.up, padding=self.padding)


def modulated_conv2d(x, weight, styles, demodulate=True, up=False, padding=0):
    n, in_ch, _, _ = x.shape
    out_ch = weight.shape[0]
    w = weight.unsqueeze(0) * styles.reshape(n, 1, in_ch, 1, 1)
    if demodulate:
        d = (w.square().sum(dim=[2, 3, 4]) + 1e-8).rsqrt()
        w = w * d.reshape(n, out_ch, 1, 1, 1)
    if up:
        x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)
    h, wd = x.shape[-2:]
    x = F.conv2d(x.reshape(1, n * in_ch, h, wd), w.reshape(n * out_ch, in_ch, *w.shape[-2:]),
                 padding=padding, groups=n)
    return x.reshape(n, out_ch, *x.shape[-2:])


class SynthesisLayer(nn.Module):
    def __init__(self, in_channels, out_channels, w_dim, resolution, up=False):
        super().__init__()
        self.conv = ModulatedConv2d(in_channels, out_channels, 3, w_dim, up=up)
        self.noise_strength = nn.Parameter(torch.zeros([]))
        self.bias = nn.Parameter(torch.zeros([out_channels]))
        self.resolution = resolution

    def forward(self, x, w, noise):
        x = self.conv(x, w)
        x = x + noise * self.noise_strength
        return _lrelu(x + self.bias.reshape(1, -1, 1, 1))


class ToRGB(nn.Module):
    def __init__(self, in_channels, w_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_channels, 3, 1, w_dim, demodulate=False)
        self.bias = nn.Parameter(torch.zeros([3]))

    def forward(self, x, w):
        return self.conv(x, w) + self.bias.reshape(1, -1, 1, 1)


class SynthesisBlock(nn.Module):
    def __init__(self, in_channels, out_channels, w_dim, resolution):
        super().__init__()
        self.resolution = resolution
        if in_channels == 0:
            self.const = nn.Parameter(torch.randn(out_channels, resolution, resolution))
            self.conv1 = SynthesisLayer(out_channels, out_channels, w_dim, resolution)
        else:
            self.conv0 = SynthesisLayer(in_channels, out_channels, w_dim, resolution, up=True)
            self.conv1 = SynthesisLayer(out_channels, out_channels, w_dim, resolution)
        self.torgb = ToRGB(out_channels, w_dim)
        self.num_conv = 1 if in_channels == 0 else 2

    def forward(self, x, img, ws, noises):
        # ws: [N, num_conv + 1, w_dim]
        if self.num_conv == 1:
            x = self.const.unsqueeze(0).expand(ws.shape[0], -1, -1, -1)
            x = self.conv1(x, ws[:, 0], noises[0])
        else:
            x = self.conv0(x, ws[:, 0], noises[0])
            x = self.conv1(x, ws[:, 1], noises[1])
        y = self.torgb(x, ws[:, self.num_conv])
        if img is not None:
            img = F.interpolate(img, scale_factor=2, mode='bilinear', align_corners=False)
            y = img + y
        return x, y


class SynthesisNetwork(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.resolutions = [2 ** i for i in range(2, resolution_log2(cfg.resolution) + 1)]
        in_ch = 0
        for res in self.resolutions:
            out_ch = cfg.channels(res)
            setattr(self, f'b{res}', SynthesisBlock(in_ch, out_ch, cfg.w_dim, res))
            in_ch = out_ch
        self.num_ws = cfg.num_ws

    def blocks(self):
        return [getattr(self, f'b{res}') for res in self.resolutions]

    def noise_shapes(self):
        shapes = []
        for block in self.blocks():
            shapes += [(1, 1, block.resolution, block.resolution)] * block.num_conv
        return shapes

    def forward(self, ws, noises):
        x = img = None
        w_idx = 0
        n_idx = 0
        for block in self.blocks():
            # consecutive blocks share a w row: torgb of block k and conv0 of block k+1
            block_ws = ws[:, w_idx:w_idx + block.num_conv + 1]
            x, img = block(x, img, block_ws, noises[n_idx:n_idx + block.num_conv])
            w_idx += block.num_conv
            n_idx += block.num_conv
        return img


class Generator(nn.Module):
    def __init__(self, cfg: Optional[GeneratorConfig] = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.mapping = MappingNetwork(self.cfg)
        self.synthesis = SynthesisNetwork(self.cfg)

    @property
    def resolution(self):
        return self.cfg.resolution

    @property
    def num_ws(self):
        return self.cfg.num_ws

    def forward(self, ws, noises):
        return self.synthesis(ws, noises)


@dataclass
class GeneratorPair:
    g_real: Generator
    g_rendering: Generator
    shared_mapping: bool = True

    def __post_init__(self):
        if not self.shared_mapping:
            raise ValueError('a generator pair must share its mapping network')

    @property
    def resolution(self):
        return self.g_real.resolution

    def check_invariants(self):
        """Raises FrozenIntegrityError if the shared-latent or ToRGB contract is broken."""
        real = dict(self.g_real.named_parameters())
        for name, p in self.g_rendering.named_parameters():
            if name.startswith('mapping.') or '.torgb.' in name:
                if not torch.equal(p, real[name]):
                    raise FrozenIntegrityError(f'{name} differs between g_real and g_rendering')


def _ensure_batch_w(w):
    return (w.unsqueeze(0), True) if w.ndim == 2 else (w, False)


def sample_z(n: int, seed: int, z_dim: int = 512) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    return torch.randn(n, z_dim, generator=gen)


def make_noise(g: Generator, batch: int = 1, seed: Optional[int] = None,
               generator: Optional[torch.Generator] = None, zero: bool = False):
    """Draws a unit-Gaussian noise bundle (or zeros) matching g's synthesis layers."""
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    out = []
    for shape in g.synthesis.noise_shapes():
        shape = (batch,) + shape[1:]
        out.append(torch.zeros(shape) if zero else torch.randn(shape, generator=generator))
    return out


def map_to_wplus(g: Generator, z: torch.Tensor) -> torch.Tensor:
    """z ``[z_dim]`` or ``[N, z_dim]`` -> w+ ``[L, w_dim]`` / ``[N, L, w_dim]``."""
    single = z.ndim == 1
    w = g.mapping(z.unsqueeze(0) if single else z)
    wp = w.unsqueeze(1).repeat(1, g.num_ws, 1)
    return wp[0] if single else wp


def synthesize(g: Generator, w: torch.Tensor, noise) -> torch.Tensor:
    """Renders w+ with the given noise bundle. Output is not clamped."""
    ws, single = _ensure_batch_w(w)
    if ws.shape[1:] != (g.num_ws, g.cfg.w_dim):
        raise ValueError(f'w+ must have shape [{g.num_ws}, {g.cfg.w_dim}], got {tuple(w.shape)}')
    shapes = g.synthesis.noise_shapes()
    if len(noise) != len(shapes):
        raise ValueError(f'expected {len(shapes)} noise maps, got {len(noise)}')
    for n, s in zip(noise, shapes):
        if n.ndim != 4 or n.shape[1:] != s[1:] or n.shape[0] not in (1, ws.shape[0]):
            raise ValueError(f'noise map of shape {tuple(n.shape)} does not match layer shape {s}')
    img = g(ws, noise)
    return img[0] if single else img


@torch.no_grad()
def mean_wplus(g: Generator, n_samples: int = 10000, seed: int = 0, chunk: int = 4096) -> torch.Tensor:
    """Average mapped latent over ``n_samples`` standard-normal z, broadcast to all L rows."""
    if n_samples < 1:
        raise ValueError('n_samples must be >= 1')
    z = sample_z(n_samples, seed, g.cfg.z_dim)
    total = torch.zeros(g.cfg.w_dim, dtype=torch.float64)
    for start in range(0, n_samples, chunk):
        total += g.mapping(z[start:start + chunk]).double().sum(dim=0)
    w_avg = (total / n_samples).float()
    return w_avg.unsqueeze(0).repeat(g.num_ws, 1)


def clone_for_finetune(g_real: Generator) -> GeneratorPair:
    """Builds the pair: g_rendering is a synthesis copy of g_real sharing its mapping.

    The shared mapping network and every ToRGB layer of g_rendering are frozen.
    """
    g_rendering = Generator(copy.deepcopy(g_real.cfg))
    g_rendering.synthesis = copy.deepcopy(g_real.synthesis)
    g_rendering.mapping = g_real.mapping
    g_real.mapping.requires_grad_(False)
    for block in g_rendering.synthesis.blocks():
        block.torgb.requires_grad_(False)
    return GeneratorPair(g_real, g_rendering)


def frozen_parameters(g: Generator) -> list[str]:
    return sorted(name for name, p in g.named_parameters() if not p.requires_grad)


def frozen_checksum(g: Generator) -> str:
    digest = hashlib.sha256()
    params = dict(g.named_parameters())
    for name in frozen_parameters(g):
        digest.update(name.encode())
        digest.update(params[name].detach().cpu().numpy().astype('<f4').tobytes())
    return digest.hexdigest()


def parameter_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().astype('<f4').tobytes())
    return digest.hexdigest()


# Checkpoints -----------------------------------------------------------------


def _generator_arrays(g: Generator, prefix=''):
    return {prefix + k: v for k, v in g.state_dict().items()}


def _load_state(module, arrays, prefix=''):
    state = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
    module.load_state_dict(state, strict=True)


def _apply_frozen(g: Generator, frozen):
    frozen = set(frozen)
    for name, p in g.named_parameters():
        p.requires_grad_(name not in frozen)


def save_generator(g: Generator, path, extra_meta=None):
    meta = {'kind': 'generator', 'resolution': g.resolution, 'config': asdict(g.cfg),
            'frozen': frozen_parameters(g), **(extra_meta or {})}
    write_arrays(path, _generator_arrays(g), meta)


def load_generator(path) -> Generator:
    arrays, meta = read_arrays(path)
    if meta.get('kind') != 'generator':
        raise ValueError(f'{path} is not a generator checkpoint (kind={meta.get("kind")!r})')
    g = Generator(GeneratorConfig(**meta['config']))
    _load_state(g, arrays)
    _apply_frozen(g, meta['frozen'])
    return g


def save_pair(pair: GeneratorPair, path, discriminator: Optional[nn.Module] = None, extra_meta=None):
    pair.check_invariants()
    arrays = {'mapping.' + k: v for k, v in pair.g_real.mapping.state_dict().items()}
    arrays.update({'g_real.synthesis.' + k: v for k, v in pair.g_real.synthesis.state_dict().items()})
    arrays.update({'g_rendering.synthesis.' + k: v
                   for k, v in pair.g_rendering.synthesis.state_dict().items()})
    if discriminator is not None:
        arrays.update({'discriminator.' + k: v for k, v in discriminator.state_dict().items()})
    meta = {'kind': 'pair', 'resolution': pair.resolution, 'config': asdict(pair.g_real.cfg),
            'frozen_real': frozen_parameters(pair.g_real),
            'frozen_rendering': frozen_parameters(pair.g_rendering),
            'has_discriminator': discriminator is not None, **(extra_meta or {})}
    write_arrays(path, arrays, meta)


def load_pair(path, discriminator: Optional[nn.Module] = None) -> GeneratorPair:
    """Loads a pair checkpoint; fills ``discriminator`` in place when stored and given."""
    arrays, meta = read_arrays(path)
    if meta.get('kind') != 'pair':
        raise ValueError(f'{path} is not a generator-pair checkpoint (kind={meta.get("kind")!r})')
    cfg = GeneratorConfig(**meta['config'])
    g_real = Generator(cfg)
    _load_state(g_real.mapping, arrays, 'mapping.')
    _load_state(g_real.synthesis, arrays, 'g_real.synthesis.')
    pair = clone_for_finetune(g_real)
    _load_state(pair.g_rendering.synthesis, arrays, 'g_rendering.synthesis.')
    _apply_frozen(pair.g_real, meta['frozen_real'])
    _apply_frozen(pair.g_rendering, meta['frozen_rendering'])
    if discriminator is not None and meta.get('has_discriminator'):
        _load_state(discriminator, arrays, 'discriminator.')
    return pair


def import_state_dict(g: Generator, state_dict, rename: Callable[[str], Optional[str]] = lambda k: k):
    """Loads foreign weights (e.g. converted official checkpoints) through a key renamer.

    ``rename`` maps a foreign key to a local key, or None to skip it. Missing or
    shape-mismatched keys raise.
    """
    mapped = {}
    for key, value in state_dict.items():
        local = rename(key)
        if local is not None:
            mapped[local] = torch.as_tensor(np.asarray(value))
    g.load_state_dict(mapped, strict=True)
    return g


@torch.no_grad()
def toy_generator(cfg: Optional[GeneratorConfig] = None, seed: int = 0,
                  output_std: float = 0.5, calibration_samples: int = 64) -> Generator:
    """Seeded random generator with its output range calibrated into [-1, 1].

    Untrained StyleGAN2 synthesis sums unit-scale ToRGB outputs over every
    resolution, so raw images spread far outside [-1, 1]. The ToRGB weights are
    rescaled to hit ``output_std`` and the last ToRGB bias recentres each
    channel; nothing else about the initialization changes.
    """
    torch.manual_seed(seed)
    g = Generator(cfg or GeneratorConfig())
    ws = map_to_wplus(g, sample_z(calibration_samples, seed + 1, g.cfg.z_dim))
    noise = make_noise(g, calibration_samples, seed=seed + 2)
    img = synthesize(g, ws, noise)
    scale = output_std / img.std().item()
    blocks = g.synthesis.blocks()
    for block in blocks:
        block.torgb.conv.weight.mul_(scale)
        block.torgb.bias.mul_(scale)
    img = synthesize(g, ws, noise)
    blocks[-1].torgb.bias.sub_(img.mean(dim=(0, 2, 3)))
    return g
