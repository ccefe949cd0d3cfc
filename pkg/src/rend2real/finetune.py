"""Adversarial fine-tuning of the rendering generator with identity losses.

The generator objective is the non-saturating logistic loss of StyleGAN2-ada plus
the weighted identity loss; the discriminator uses the logistic loss with an R1
penalty on reals. Only g_rendering's trainable parameters and the discriminator
are updated. Training stops once the discriminator has seen ``kimg_budget``
thousand real images.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generators import (FrozenIntegrityError, Generator, GeneratorPair, frozen_checksum,
                         make_noise, map_to_wplus, sample_z, save_pair, synthesize)
from .imaging import BlurSpec, gaussian_blur, horizontal_flip, resolution_log2
from .losses import IdentityLoss, LossWeights, make_backbone, make_sketch_extractor

__all__ = [
    'FinetuneConfig', 'TrainState', 'Discriminator', 'AdaptiveAugment',
    'adversarial_losses', 'discriminator_terms', 'amplify_xflip', 'finetune',
    'stylized_toy_dataset',
]

logger = logging.getLogger(__name__)


@dataclass
class FinetuneConfig:
    batch_size: int = 8
    generator_lr: float = 2.5e-3
    discriminator_lr: float = 2.5e-3
    betas: tuple = (0.0, 0.99)
    eps: float = 1e-8
    r1_gamma: Optional[float] = None  # None: 0.0002 * resolution**2 / batch_size
    kimg_budget: float = 40.0
    xflip: bool = True
    loss_weights: LossWeights = field(default_factory=LossWeights)
    blur: BlurSpec = field(default_factory=lambda: BlurSpec(13, 10.0))
    seed: int = 0
    ada: bool = False
    ada_target: float = 0.6
    ada_interval: int = 4
    ada_kimg: float = 10.0
    checkpoint_kimg: Optional[float] = None
    sketch_backend: str = 'fallback'
    sketch_weights: Optional[str] = None
    perceptual_backend: str = 'toy'
    backbone_seed: int = 1234

    def __post_init__(self):
        if not self.kimg_budget > 0:
            raise ValueError('kimg_budget must be positive')
        if not (self.generator_lr > 0 and self.discriminator_lr > 0):
            raise ValueError('learning rates must be positive')
        if self.batch_size < 1:
            raise ValueError('batch_size must be >= 1')
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.blur, dict):
            self.blur = BlurSpec(**self.blur)
        self.betas = tuple(self.betas)

    def gamma(self, resolution: int) -> float:
        if self.r1_gamma is not None:
            return self.r1_gamma
        return 0.0002 * resolution ** 2 / self.batch_size

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    step: int = 0
    reals_seen: int = 0
    sums: dict = field(default_factory=lambda: {'L_sketch': 0.0, 'L_color': 0.0, 'g_adv': 0.0, 'd_loss': 0.0})
    checkpoints: list = field(default_factory=list)

    def means(self):
        return {k: v / max(self.step, 1) for k, v in self.sums.items()}


class EqualConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, activation=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.gain = 1 / math.sqrt(in_channels * kernel_size ** 2)
        self.activation = activation

    def forward(self, x):
        x = F.conv2d(x, self.weight * self.gain, self.bias, padding=self.weight.shape[-1] // 2)
        return F.leaky_relu(x, 0.2) * math.sqrt(2) if self.activation else x


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv0 = EqualConv2d(in_channels, in_channels, 3)
        self.conv1 = EqualConv2d(in_channels, out_channels, 3)
        self.skip = EqualConv2d(in_channels, out_channels, 1, activation=False)

    def forward(self, x):
        y = F.avg_pool2d(self.skip(x), 2)
        x = F.avg_pool2d(self.conv1(self.conv0(x)), 2)
        return (x + y) / math.sqrt(2)


class Discriminator(nn.Module):
    """Residual critic; channels mirror the generator's (512 // res by default)."""

    def __init__(self, resolution=64, channel_base=512, channel_max=512, seed=None):
        super().__init__()
        if seed is not None:
            torch.manual_seed(seed)
        log2 = resolution_log2(resolution)
        ch = lambda r: max(1, min(channel_base // r, channel_max))
        self.resolution = resolution
        self.fromrgb = EqualConv2d(3, ch(resolution), 1)
        self.blocks = nn.ModuleList(
            DiscriminatorBlock(ch(2 ** i), ch(2 ** (i - 1))) for i in range(log2, 2, -1))
        c4 = ch(4)
        self.conv = EqualConv2d(c4, c4, 3)
        self.fc = nn.Linear(c4 * 16, c4)
        self.out = nn.Linear(c4, 1)

    def forward(self, img):
        x = self.fromrgb(img)
        for block in self.blocks:
            x = block(x)
        x = self.conv(x).flatten(1)
        x = F.leaky_relu(self.fc(x), 0.2)
        return self.out(x).squeeze(1)


def discriminator_terms(d, real, fake, r1_gamma: float):
    """Mean-reduced terms of the discriminator loss: fake, real and R1."""
    fake_logits = d(fake)
    if r1_gamma > 0:
        real = real.detach().requires_grad_(True)
        real_logits = d(real)
        (grad,) = torch.autograd.grad(real_logits.sum(), real, create_graph=True)
        r1 = (r1_gamma / 2) * grad.square().sum(dim=tuple(range(1, grad.ndim))).mean()
    else:
        real_logits = d(real)
        r1 = torch.zeros(())
    return {
        'fake': F.softplus(fake_logits).mean(),
        'real': F.softplus(-real_logits).mean(),
        'r1': r1,
        'real_logits': real_logits.detach(),
    }


def adversarial_losses(d, real, fake, r1_gamma: float = 0.0):
    """Returns ``(g_adv, d_loss)``; d_loss treats ``fake`` as a constant."""
    g_adv = F.softplus(-d(fake)).mean()
    terms = discriminator_terms(d, real, fake.detach(), r1_gamma)
    return g_adv, terms['fake'] + terms['real'] + terms['r1']


def amplify_xflip(dataset: torch.Tensor) -> torch.Tensor:
    """Appends the horizontal mirror of every image: ``[N,...] -> [2N,...]``."""
    return torch.cat([dataset, horizontal_flip(dataset)], dim=0)


class AdaptiveAugment:
    """Reduced ADA pipeline: x-flip, integer translation and color jitter.

    Each transform is applied per sample with probability ``p``; ``p`` follows
    the sign-of-logits overfitting heuristic toward ``target``.
    """

    def __init__(self, target=0.6, interval=4, speed_kimg=10.0, p=0.0):
        self.p = p
        self.target = target
        self.interval = interval
        self.speed_kimg = speed_kimg
        self._signs = []

    def __call__(self, x, generator):
        if self.p <= 0:
            return x
        n, _, h, w = x.shape
        prob = lambda: (torch.rand(n, generator=generator) < self.p).view(n, 1, 1, 1)
        flip = prob()
        x = torch.where(flip, horizontal_flip(x), x)
        apply = prob()
        max_shift = max(1, h // 8)
        shifts = torch.randint(-max_shift, max_shift + 1, (n, 2), generator=generator)
        shifted = torch.stack([torch.roll(x[i], shifts=(int(shifts[i, 0]), int(shifts[i, 1])), dims=(1, 2))
                               for i in range(n)])
        x = torch.where(apply, shifted, x)
        apply = prob()
        brightness = torch.randn(n, 1, 1, 1, generator=generator) * 0.2
        x = torch.where(apply, x + brightness, x)
        apply = prob()
        contrast = torch.exp2(torch.randn(n, 1, 1, 1, generator=generator) * 0.5)
        mean = x.mean(dim=(1, 2, 3), keepdim=True)
        x = torch.where(apply, (x - mean) * contrast + mean, x)
        apply = prob()
        sat = torch.exp2(torch.randn(n, 1, 1, 1, generator=generator))
        gray = x.mean(dim=1, keepdim=True)
        x = torch.where(apply, (x - gray) * sat + gray, x)
        return x

    def update(self, real_logits, batch_size):
        self._signs.append(torch.sign(real_logits).mean().item())
        if len(self._signs) < self.interval:
            return
        rt = sum(self._signs) / len(self._signs)
        self._signs.clear()
        step = batch_size * self.interval / (self.speed_kimg * 1000)
        self.p = min(max(self.p + math.copysign(step, rt - self.target), 0.0), 1.0)


@torch.no_grad()
def stylized_toy_dataset(g_real: Generator, n: int, seed: int = 0, levels: int = 4,
                         blur: BlurSpec = BlurSpec(5, 1.5)) -> torch.Tensor:
    """Blurred, posterized renders of g_real samples: a synthetic "rendering style"."""
    z = sample_z(n, seed, g_real.cfg.z_dim)
    imgs = synthesize(g_real, map_to_wplus(g_real, z), make_noise(g_real, n, seed=seed + 1))
    imgs = gaussian_blur(imgs.clamp(-1, 1), blur)
    q = torch.round((imgs + 1) / 2 * (levels - 1)) / (levels - 1)
    return q * 2 - 1


def _verify_frozen(g: Generator, expected: str, where: str):
    if frozen_checksum(g) != expected:
        raise FrozenIntegrityError(f'frozen parameters of g_rendering changed ({where})')


def finetune(pair: GeneratorPair, d: Discriminator, dataset: torch.Tensor, cfg: FinetuneConfig,
             log_path=None, checkpoint_dir=None, identity: Optional[IdentityLoss] = None):
    """Fine-tunes ``pair.g_rendering`` in place; returns ``(pair, state, log_records)``."""
    if len(dataset) == 0:
        raise ValueError('dataset is empty')
    g_real, g_rend = pair.g_real, pair.g_rendering
    res = g_rend.resolution
    if dataset.shape[-1] != res or dataset.shape[-2] != res:
        raise ValueError(f'dataset resolution {tuple(dataset.shape[-2:])} does not match generator {res}')
    if identity is None:
        identity = IdentityLoss(
            extractor=make_sketch_extractor(cfg.sketch_backend, cfg.sketch_weights),
            backbone=make_backbone(cfg.perceptual_backend, cfg.backbone_seed),
            weights=cfg.loss_weights, blur=cfg.blur)
    use_identity = cfg.loss_weights.lambda_sketch > 0 or cfg.loss_weights.lambda_color > 0

    gen = torch.Generator().manual_seed(cfg.seed)
    data = amplify_xflip(dataset) if cfg.xflip else dataset
    order = torch.randperm(len(data), generator=gen)
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        idx = []
        while len(idx) < cfg.batch_size:
            if cursor >= len(order):
                order = torch.randperm(len(data), generator=gen)
                cursor = 0
            take = min(cfg.batch_size - len(idx), len(order) - cursor)
            idx.extend(order[cursor:cursor + take].tolist())
            cursor += take
        return data[idx]

    trainable = [p for p in g_rend.parameters() if p.requires_grad]
    opt_g = torch.optim.Adam(trainable, lr=cfg.generator_lr, betas=cfg.betas, eps=cfg.eps)
    opt_d = torch.optim.Adam(d.parameters(), lr=cfg.discriminator_lr, betas=cfg.betas, eps=cfg.eps)
    augment = AdaptiveAugment(cfg.ada_target, cfg.ada_interval, cfg.ada_kimg) if cfg.ada else None
    aug = (lambda x: augment(x, gen)) if augment else (lambda x: x)
    gamma = cfg.gamma(res)

    frozen_ref = frozen_checksum(g_rend)
    state = TrainState()
    budget = int(round(cfg.kimg_budget * 1000))
    next_ckpt = cfg.checkpoint_kimg * 1000 if cfg.checkpoint_kimg else None
    records = []
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, 'w', encoding='utf-8')
    z_dim = g_rend.cfg.z_dim
    b = cfg.batch_size
    try:
        while state.reals_seen < budget:
            # discriminator step
            real = next_batch()
            with torch.no_grad():
                w = map_to_wplus(g_rend, torch.randn(b, z_dim, generator=gen))
                fake = synthesize(g_rend, w, make_noise(g_rend, b, generator=gen))
            terms = discriminator_terms(d, aug(real), aug(fake), gamma)
            d_loss = terms['fake'] + terms['real'] + terms['r1']
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
            state.reals_seen += b
            if augment:
                augment.update(terms['real_logits'], b)

            # generator step on fresh z
            w = map_to_wplus(g_rend, torch.randn(b, z_dim, generator=gen))
            noise = make_noise(g_rend, b, generator=gen)
            fake = synthesize(g_rend, w, noise)
            with torch.no_grad():
                ref = synthesize(g_real, w, noise)
            d.requires_grad_(False)
            g_adv = F.softplus(-d(aug(fake))).mean()
            d.requires_grad_(True)
            if use_identity:
                l_sketch, l_color = identity.terms(ref, fake)
                g_loss = g_adv + identity.combine(l_sketch, l_color)
            else:
                with torch.no_grad():
                    l_sketch, l_color = identity.terms(ref, fake.detach())
                g_loss = g_adv
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            opt_g.step()

            record = {'step': state.step, 'reals_seen': state.reals_seen,
                      'L_sketch': l_sketch.item(), 'L_color': l_color.item(),
                      'g_adv': g_adv.item(), 'd_loss': d_loss.item()}
            if augment:
                record['ada_p'] = augment.p
            for k in state.sums:
                state.sums[k] += record[k]
            records.append(record)
            if log_file:
                log_file.write(json.dumps(record) + '\n')
                log_file.flush()
            state.step += 1

            if next_ckpt is not None and checkpoint_dir is not None and state.reals_seen >= next_ckpt:
                _verify_frozen(g_rend, frozen_ref, f'step {state.step}')
                path = Path(checkpoint_dir) / f'pair-{state.reals_seen:08d}.r2r'
                save_pair(pair, path, discriminator=d, extra_meta={'reals_seen': state.reals_seen})
                state.checkpoints.append(str(path))
                next_ckpt += cfg.checkpoint_kimg * 1000
    finally:
        if log_file:
            log_file.close()
    _verify_frozen(g_rend, frozen_ref, 'end of run')
    pair.check_invariants()
    logger.info('fine-tuning done: %d steps, %d reals', state.step, state.reals_seen)
    return pair, state, records
