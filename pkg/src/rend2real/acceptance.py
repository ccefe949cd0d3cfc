"""Toy-scale acceptance suite shared by ``rend2real selftest`` and the test suite.

Each ``criterion_*`` function returns a :class:`CriterionResult`. Expensive
fixtures (the two 2-kimg fine-tunes) are built once per process and reused.
"""

from __future__ import annotations

import functools
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .compositing import composite
from .evaluation import FeatureStats, frechet_distance, stats_from_features
from .finetune import Discriminator, FinetuneConfig, finetune, stylized_toy_dataset
from .generators import (clone_for_finetune, frozen_checksum, load_pair, make_noise, map_to_wplus,
                         mean_wplus, parameter_checksum, sample_z, save_pair, synthesize, toy_generator)
from .imaging import BlurSpec, from_uint8, gaussian_blur, gaussian_kernel1d, to_uint8
from .inversion import InversionConfig, invert, load_latent, save_latent
from .losses import GradientSketchExtractor, IdentityLoss, LossWeights, make_backbone

__all__ = ['CriterionResult', 'CRITERIA', 'run_all']

TOY_SEED = 0
DATA_SEED = 100
DISC_SEED = 7
TRAIN_SEED = 3
HELDOUT_Z_SEED = 999
HELDOUT_NOISE_SEED = 5

# set by `selftest --workdir` to keep the end-to-end artifacts
E2E_WORKDIR = None


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = 'PASS' if self.passed else 'FAIL'
        return f'[{status}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)'


def _timed(number, name):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            passed, detail = fn(*args, **kwargs)
            return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - start)
        run.number = number
        run.criterion_name = name
        return run
    return wrap


# Shared fixtures --------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def toy_base():
    return toy_generator(seed=TOY_SEED)


@functools.lru_cache(maxsize=None)
def toy_dataset():
    return stylized_toy_dataset(toy_base(), 256, seed=DATA_SEED)


def _fresh_pair():
    return clone_for_finetune(toy_generator(seed=TOY_SEED))


@functools.lru_cache(maxsize=None)
def finetuned(with_identity: bool, kimg: float = 2.0):
    """``(pair, frozen checksum before, records)`` for a seeded toy fine-tune."""
    pair = _fresh_pair()
    before = frozen_checksum(pair.g_rendering)
    weights = LossWeights() if with_identity else LossWeights(0.0, 0.0)
    cfg = FinetuneConfig(kimg_budget=kimg, loss_weights=weights, seed=TRAIN_SEED)
    pair, _, records = finetune(pair, Discriminator(pair.resolution, seed=DISC_SEED), toy_dataset(), cfg)
    return pair, before, records


def heldout_terms(pair, n=32):
    """Mean (sketch L1, blurred perceptual) between g_real and g_rendering on held-out z."""
    idl = IdentityLoss()
    with torch.no_grad():
        w = map_to_wplus(pair.g_real, sample_z(n, HELDOUT_Z_SEED, pair.g_real.cfg.z_dim))
        noise = make_noise(pair.g_real, n, seed=HELDOUT_NOISE_SEED)
        ls, lc = idl.terms(synthesize(pair.g_real, w, noise), synthesize(pair.g_rendering, w, noise))
    return float(ls), float(lc)


# Criteria ---------------------------------------------------------------------


@_timed(1, 'clone-zero')
def criterion_clone_zero():
    pair = _fresh_pair()
    idl = IdentityLoss()
    worst = 0.0
    with torch.no_grad():
        for i in range(10):
            w = map_to_wplus(pair.g_real, sample_z(1, 50 + i, pair.g_real.cfg.z_dim))
            # decorrelate the rows so the check covers genuine W+ codes
            w = w + 0.3 * torch.randn(w.shape, generator=torch.Generator().manual_seed(i))
            noise = make_noise(pair.g_real, 1, seed=200 + i)
            ls, lc = idl.terms(synthesize(pair.g_real, w, noise), synthesize(pair.g_rendering, w, noise))
            worst = max(worst, abs(float(ls)), abs(float(lc)))
    return worst <= 1e-6, f'max |L| = {worst:.3g} (tol 1e-6)'


@_timed(2, 'freeze integrity')
def criterion_freeze_integrity():
    pair, before, _ = finetuned(True)
    after = frozen_checksum(pair.g_rendering)
    z = sample_z(100, 4242, pair.g_real.cfg.z_dim)
    with torch.no_grad():
        same = torch.equal(map_to_wplus(pair.g_real, z), map_to_wplus(pair.g_rendering, z))
    changed = sum(not torch.equal(a, b) for (_, a), (_, b) in zip(
        pair.g_real.synthesis.named_parameters(), pair.g_rendering.synthesis.named_parameters()))
    ok = before == after and same and changed > 0
    return ok, (f'frozen checksum identical={before == after}, shared latent bit-exact={same}, '
                f'{changed} trainable tensors moved')


@_timed(3, 'loss gradient check')
def criterion_gradient_check(n_scalars=5, h=1e-3, rtol=1e-2, seed=11):
    pair = _fresh_pair()
    pair.g_real.double()
    pair.g_rendering.double()
    gen = torch.Generator().manual_seed(seed)
    trainable = [(n, p) for n, p in pair.g_rendering.named_parameters() if p.requires_grad]
    with torch.no_grad():
        # move away from the clone, where the L1 term sits on its kink
        for _, p in trainable:
            p.add_(0.05 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    idl = IdentityLoss(extractor=GradientSketchExtractor().double(), backbone=make_backbone('toy').double())
    w = map_to_wplus(pair.g_real, sample_z(2, 77, pair.g_real.cfg.z_dim).double()).detach()
    noise = [n.double() for n in make_noise(pair.g_real, 2, seed=78)]

    def loss():
        return idl(pair, w, noise)

    for p in pair.g_rendering.parameters():
        p.grad = None
    loss().backward()
    worst = 0.0
    rows = []
    for _ in range(n_scalars):
        name, p = trainable[int(torch.randint(len(trainable), (1,), generator=gen))]
        idx = tuple(int(torch.randint(s, (1,), generator=gen)) for s in p.shape)
        analytic = float(p.grad[idx])
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = float(loss())
            p[idx] = orig - h
            down = float(loss())
            p[idx] = orig
        numeric = (up - down) / (2 * h)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, rel)
        rows.append(f'{name}{list(idx)} a={analytic:.4g} n={numeric:.4g}')
    return worst <= rtol, f'max rel err {worst:.3g} (tol {rtol}); ' + '; '.join(rows)


@_timed(4, 'ablation direction')
def criterion_ablation():
    with_id = heldout_terms(finetuned(True)[0])
    without = heldout_terms(finetuned(False)[0])
    ok = with_id[0] < without[0] and with_id[1] < without[1]
    return ok, (f'with identity loss sketch={with_id[0]:.4g} color={with_id[1]:.4g}; '
                f'without sketch={without[0]:.4g} color={without[1]:.4g}')


@_timed(5, 'inversion convergence')
def criterion_inversion(n_images=10, steps=500, ratio=0.3):
    g = finetuned(True)[0].g_rendering
    cfg = InversionConfig(steps=steps, lambda_noise=1e5)
    backbone = make_backbone(cfg.perceptual_backend, cfg.backbone_seed)
    with torch.no_grad():
        w = map_to_wplus(g, sample_z(n_images, 31337, g.cfg.z_dim))
        targets = synthesize(g, w, make_noise(g, n_images, seed=31338))
    before = parameter_checksum(g)
    w_avg = mean_wplus(g, cfg.w_avg_samples, seed=cfg.seed)
    ratios, finite = [], True
    for x in targets:
        res = invert(g, x, cfg, backbone=backbone, w_init=w_avg)
        finite &= all(math.isfinite(v) for v in res.loss_trace)
        ratios.append(res.final_perceptual / res.initial_perceptual)
    untouched = parameter_checksum(g) == before
    ok = finite and untouched and max(ratios) <= ratio
    return ok, (f'final/initial perceptual max={max(ratios):.3g} mean={np.mean(ratios):.3g} '
                f'(tol {ratio}); finite={finite}; generator untouched={untouched}')


@_timed(6, 'FID oracle')
def criterion_fid():
    a = FeatureStats(np.zeros(2), np.eye(2), 100)
    b = FeatureStats(np.array([1.0, 0.0]), 4 * np.eye(2), 100)
    d = frechet_distance(a, b)
    feats = np.random.default_rng(0).normal(size=(200, 16))
    s = stats_from_features(feats)
    self_d = frechet_distance(s, s)
    ok = abs(d - 3.0) <= 1e-6 and abs(self_d) <= 1e-8
    return ok, f'closed form d2={d:.10g} (expect 3); self distance={self_d:.3g}'


@_timed(7, 'compositing algebra')
def criterion_compositing(triples=1000):
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(3, 32, 32, generator=gen) * 2 - 1
    xr = torch.rand(3, 32, 32, generator=gen) * 2 - 1
    ones, zeros = torch.ones(32, 32), torch.zeros(32, 32)
    exact1 = torch.equal(composite(x, xr, ones), xr)
    exact0 = torch.equal(composite(x, xr, zeros), x)
    mid = (composite(x, xr, torch.full((32, 32), 0.5)) - (x + xr) / 2).abs().max().item()
    convex = True
    for _ in range(triples):
        a = torch.rand(3, 8, 8, generator=gen) * 2 - 1
        b = torch.rand(3, 8, 8, generator=gen) * 2 - 1
        m = torch.rand(8, 8, generator=gen)
        out = composite(a, b, m)
        convex &= bool(((out >= torch.minimum(a, b)) & (out <= torch.maximum(a, b))).all())
    ok = exact1 and exact0 and mid <= 1e-7 and convex
    return ok, f'm=1 exact={exact1}, m=0 exact={exact0}, midpoint err={mid:.3g}, convex={convex}'


@_timed(8, 'blur kernel contracts')
def criterion_blur():
    spec = BlurSpec(13, 10.0)
    k = gaussian_kernel1d(spec, dtype=torch.float64)
    ksum = abs(float(k.sum()) - 1.0)
    offs = np.arange(13) - 6
    analytic = np.exp(-offs ** 2 / 200.0)
    analytic2d = np.outer(analytic, analytic) / analytic.sum() ** 2
    impulse = torch.zeros(1, 41, 41, dtype=torch.float64)
    impulse[0, 20, 20] = 1.0
    resp = gaussian_blur(impulse, spec)[0, 14:27, 14:27].numpy()
    imp_err = float(np.abs(resp - analytic2d).max())
    const = torch.full((3, 24, 24), 0.37)
    const_err = (gaussian_blur(const, spec) - 0.37).abs().max().item()
    ok = ksum <= 1e-6 and imp_err <= 1e-6 and const_err <= 1e-6
    return ok, f'|sum-1|={ksum:.2g}, impulse err={imp_err:.2g}, constant err={const_err:.2g}'


@_timed(9, 'determinism and round-trips')
def criterion_determinism(kimg=0.1):
    logs = []
    for _ in range(2):
        pair = _fresh_pair()
        _, _, rec = finetune(pair, Discriminator(pair.resolution, seed=DISC_SEED), toy_dataset(),
                             FinetuneConfig(kimg_budget=kimg, seed=TRAIN_SEED))
        logs.append(rec)
    keys = ('L_sketch', 'L_color', 'g_adv', 'd_loss')
    log_err = max(abs(a[k] - b[k]) for a, b in zip(*logs) for k in keys)
    same_len = len(logs[0]) == len(logs[1])

    with tempfile.TemporaryDirectory() as tmp:
        pair = finetuned(True)[0]
        save_pair(pair, Path(tmp) / 'pair.r2r')
        loaded = load_pair(Path(tmp) / 'pair.r2r')
        with torch.no_grad():
            w = map_to_wplus(pair.g_real, sample_z(4, 9, pair.g_real.cfg.z_dim))
            noise = make_noise(pair.g_real, 4, seed=10)
            ckpt_ok = all(torch.equal(synthesize(getattr(pair, n), w, noise), synthesize(getattr(loaded, n), w, noise))
                          for n in ('g_real', 'g_rendering'))
            save_latent(Path(tmp) / 'w.r2r', w[0])
            w_back = load_latent(Path(tmp) / 'w.r2r')
            latent_ok = torch.equal(synthesize(pair.g_real, w[0], [n[:1] for n in noise]),
                                    synthesize(pair.g_real, w_back, [n[:1] for n in noise]))
            img = synthesize(pair.g_real, w, noise).clamp(-1, 1)
        png_err = max((from_uint8(to_uint8(im)) - im).abs().max().item() for im in img)
    ok = same_len and log_err <= 1e-6 and ckpt_ok and latent_ok and png_err <= 2 / 255
    return ok, (f'log max diff={log_err:.3g}, checkpoint bit-exact={ckpt_ok}, latent bit-exact={latent_ok}, '
                f'PNG err={png_err * 255:.2f}/255')


@_timed(10, 'end-to-end pipeline')
def criterion_end_to_end(workdir=None):
    from .selftest import run_pipeline
    workdir = workdir or E2E_WORKDIR
    if workdir is not None:
        summary = run_pipeline(Path(workdir))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            summary = run_pipeline(Path(tmp))
    return summary['ok'], summary['detail']


CRITERIA = [criterion_clone_zero, criterion_freeze_integrity, criterion_gradient_check, criterion_ablation,
            criterion_inversion, criterion_fid, criterion_compositing, criterion_blur, criterion_determinism,
            criterion_end_to_end]


def run_all(only=None, echo=print):
    results = []
    for crit in CRITERIA:
        if only and crit.number not in only:
            continue
        try:
            res = crit()
        except Exception as exc:  # a crash is a failed criterion, reported like the rest
            res = CriterionResult(crit.number, crit.criterion_name, False, f'{type(exc).__name__}: {exc}')
        results.append(res)
        if echo:
            echo(res.line())
    return results
