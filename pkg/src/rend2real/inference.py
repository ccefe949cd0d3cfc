"""Rendering -> realistic inference: invert on g_rendering, decode with g_real."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .generators import GeneratorPair, make_noise, synthesize
from .imaging import load_image, save_image
from .inversion import InversionConfig, invert, save_latent, save_trace
from .losses import make_backbone

__all__ = ['realify', 'fresh_noise', 'batch_realify', 'RealifyReport', 'FRESH_NOISE_OFFSET']

logger = logging.getLogger(__name__)

# keeps the decode noise stream distinct from the inversion's initial noise
FRESH_NOISE_OFFSET = 1_000_003


def fresh_noise(pair: GeneratorPair, seed: int, zero: bool = False):
    return make_noise(pair.g_real, 1, seed=seed + FRESH_NOISE_OFFSET, zero=zero)


def realify(pair: GeneratorPair, x: torch.Tensor, cfg: InversionConfig = InversionConfig(),
            backbone=None, zero_noise: bool = False):
    """Returns ``(realistic_image, inversion_result)``.

    The optimized noise is discarded; g_real decodes ``wplus_star`` with a fresh
    seeded noise draw (or zeros with ``zero_noise``).
    """
    result = invert(pair.g_rendering, x, cfg, backbone=backbone)
    with torch.no_grad():
        out = synthesize(pair.g_real, result.wplus_star, fresh_noise(pair, cfg.seed, zero=zero_noise))
    return out, result


@dataclass
class RealifyReport:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def failures(self):
        return [r for r in self.rows if r['status'] != 'ok']

    def write_csv(self, path):
        cols = ['id', 'status', 'input', 'output', 'latent', 'reconstruction_perceptual',
                'wall_time_s', 'error']
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=cols)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({c: row.get(c, '') for c in cols})


def batch_realify(pair: GeneratorPair, inputs, out_dir, cfg: InversionConfig = InversionConfig(),
                  zero_noise: bool = False, save_traces: bool = True) -> RealifyReport:
    """Runs realify over image paths; per-item failures are recorded, not raised."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backbone = make_backbone(cfg.perceptual_backend, cfg.backbone_seed)
    report = RealifyReport()
    for path in inputs:
        path = Path(path)
        row = {'id': path.stem, 'input': str(path)}
        start = time.perf_counter()
        try:
            x = load_image(path)
            out, result = realify(pair, x, cfg, backbone=backbone, zero_noise=zero_noise)
            out_path = out_dir / f'{path.stem}_real.png'
            latent_path = out_dir / f'{path.stem}_wplus.r2r'
            save_image(out.clamp(-1, 1), out_path)
            save_latent(latent_path, result.wplus_star, {'source': str(path), 'seed': cfg.seed})
            if save_traces:
                save_trace(out_dir / f'{path.stem}_trace.csv', result)
            row.update(status='ok', output=str(out_path), latent=str(latent_path),
                       reconstruction_perceptual=f'{result.final_perceptual:.6g}')
        except Exception as exc:  # recorded per item; the batch continues
            logger.warning('realify failed for %s: %s', path, exc)
            row.update(status='failed', error=f'{type(exc).__name__}: {exc}')
        row['wall_time_s'] = f'{time.perf_counter() - start:.3f}'
        logger.info('%s: %s in %ss', row['id'], row['status'], row['wall_time_s'])
        report.rows.append(row)
    return report
