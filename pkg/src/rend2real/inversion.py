"""Direct latent optimization in W+ with noise regularization.

Minimizes ``perceptual(x, G(w+, n)) + lambda_noise * noise_reg(n)`` over every
W+ row and every noise map with Adam, starting from the average latent and
seeded unit noise. The learning-rate schedule and the per-step noise
renormalization follow the StyleGAN2 projector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn.functional as F

from .generators import Generator, make_noise, mean_wplus, synthesize
from .imaging import downsample
from .losses import PerceptualBackbone, make_backbone, perceptual_distance
from .serialization import read_arrays, write_arrays

__all__ = [
    'InversionConfig', 'InversionResult', 'InversionError', 'noise_regularization',
    'initial_noise', 'learning_rate', 'invert', 'invert_many',
    'save_latent', 'load_latent', 'save_noise', 'load_noise', 'save_trace',
]


class InversionError(RuntimeError):
    pass


@dataclass
class InversionConfig:
    steps: int = 500
    lambda_noise: float = 1e5
    lr_base: float = 0.1
    lr_rampdown_fraction: float = 0.25
    lr_rampup_fraction: float = 0.05
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    w_avg_samples: int = 10000
    # None compares at full generator resolution
    perceptual_resolution: Optional[int] = None
    perceptual_backend: str = 'toy'
    backbone_seed: int = 1234

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError('steps must be >= 1')
        if self.lambda_noise < 0:
            raise ValueError('lambda_noise must be >= 0')
        self.betas = tuple(self.betas)


@dataclass
class InversionResult:
    wplus_star: torch.Tensor
    noise_star: list
    loss_trace: list
    perceptual_trace: list = field(default_factory=list)
    noise_trace: list = field(default_factory=list)

    @property
    def final_perceptual(self) -> float:
        return self.perceptual_trace[-1]

    @property
    def initial_perceptual(self) -> float:
        return self.perceptual_trace[0]


def noise_regularization(noises) -> torch.Tensor:
    """Multi-scale autocorrelation penalty.

    For every map and each level of its 2x average-pooled pyramid (down to 8px),
    adds the squared mean of the product with its circular one-pixel shift, both
    horizontally and vertically.
    """
    reg = torch.zeros(())
    for noise in noises:
        while True:
            reg = reg + (noise * torch.roll(noise, shifts=1, dims=3)).mean().square()
            reg = reg + (noise * torch.roll(noise, shifts=1, dims=2)).mean().square()
            if noise.shape[2] <= 8:
                break
            noise = F.avg_pool2d(noise, kernel_size=2)
    return reg


def _renormalize(noises):
    with torch.no_grad():
        for n in noises:
            n -= n.mean()
            n *= n.square().mean().rsqrt()


def initial_noise(g: Generator, seed: int):
    """The renormalized unit-Gaussian noise an inversion with ``seed`` starts from."""
    noises = make_noise(g, 1, seed=seed)
    _renormalize(noises)
    return noises


def learning_rate(step: int, cfg: InversionConfig) -> float:
    t = step / cfg.steps
    ramp = min(1.0, (1.0 - t) / cfg.lr_rampdown_fraction)
    ramp = 0.5 - 0.5 * math.cos(ramp * math.pi)
    ramp = ramp * min(1.0, t / cfg.lr_rampup_fraction)
    return cfg.lr_base * ramp


def invert(g: Generator, x: torch.Tensor, cfg: InversionConfig = InversionConfig(),
           backbone: Optional[PerceptualBackbone] = None, w_init: Optional[torch.Tensor] = None) -> InversionResult:
    """Projects image ``x`` (``[3, R, R]``) into the W+ space of ``g``.

    The trace holds the objective evaluated at the start of each of the
    ``cfg.steps`` iterations; the returned latent and noise are the ones that
    produced the last trace entry. Generator weights receive no gradients.
    """
    if x.ndim != 3 or x.shape[-1] != g.resolution or x.shape[-2] != g.resolution:
        raise ValueError(f'target must be [3, {g.resolution}, {g.resolution}], got {tuple(x.shape)}')
    backbone = backbone or make_backbone(cfg.perceptual_backend, cfg.backbone_seed)
    if w_init is None:
        w_init = mean_wplus(g, cfg.w_avg_samples, seed=cfg.seed)
    w_opt = w_init.detach().clone().unsqueeze(0).requires_grad_(True)
    noises = initial_noise(g, cfg.seed)
    for n in noises:
        n.requires_grad_(True)
    params = [w_opt] + noises
    opt = torch.optim.Adam(params, lr=0.0, betas=cfg.betas)

    target = x.detach().unsqueeze(0)
    res = cfg.perceptual_resolution
    if res is not None:
        target = downsample(target, res)

    totals, percs, regs = [], [], []
    for step in range(cfg.steps):
        img = synthesize(g, w_opt, noises)
        if res is not None:
            img = downsample(img, res)
        perc = perceptual_distance(target, img, backbone).sum()
        reg = noise_regularization(noises)
        loss = perc + cfg.lambda_noise * reg
        if not torch.isfinite(loss):
            raise InversionError(f'non-finite objective at step {step}: perceptual={perc.item()}, '
                                 f'noise_reg={reg.item()}, lr={learning_rate(step, cfg):.4g}')
        totals.append(loss.item())
        percs.append(perc.item())
        regs.append(reg.item())
        if step == cfg.steps - 1:
            break
        grads = torch.autograd.grad(loss, params)
        for p, grad in zip(params, grads):
            p.grad = grad
        for group in opt.param_groups:
            group['lr'] = learning_rate(step, cfg)
        opt.step()
        _renormalize(noises)

    return InversionResult(
        wplus_star=w_opt.detach()[0].clone(),
        noise_star=[n.detach().clone() for n in noises],
        loss_trace=totals, perceptual_trace=percs, noise_trace=regs)


def invert_many(g: Generator, images, cfg: InversionConfig = InversionConfig(), backbone=None):
    """Independent inversions of each image (the average latent is shared)."""
    backbone = backbone or make_backbone(cfg.perceptual_backend, cfg.backbone_seed)
    w_avg = mean_wplus(g, cfg.w_avg_samples, seed=cfg.seed)
    return [invert(g, x, cfg, backbone=backbone, w_init=w_avg) for x in images]


def save_latent(path, wplus: torch.Tensor, meta=None):
    write_arrays(path, {'wplus': wplus}, {'kind': 'latent', 'num_ws': int(wplus.shape[0]),
                                          'w_dim': int(wplus.shape[1]), **(meta or {})})


def load_latent(path) -> torch.Tensor:
    arrays, meta = read_arrays(path)
    if meta.get('kind') != 'latent':
        raise ValueError(f'{path} is not a latent file')
    return torch.from_numpy(arrays['wplus'])


def save_noise(path, noises):
    write_arrays(path, {f'noise{i}': n for i, n in enumerate(noises)}, {'kind': 'noise', 'count': len(noises)})


def load_noise(path):
    arrays, meta = read_arrays(path)
    if meta.get('kind') != 'noise':
        raise ValueError(f'{path} is not a noise bundle file')
    return [torch.from_numpy(arrays[f'noise{i}']) for i in range(meta['count'])]


def save_trace(path, result: InversionResult):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['step', 'objective', 'perceptual', 'noise_reg'])
        for i, row in enumerate(zip(result.loss_trace, result.perceptual_trace, result.noise_trace)):
            writer.writerow([i, *(f'{v:.9g}' for v in row)])


def config_dict(cfg: InversionConfig):
    return asdict(cfg)
