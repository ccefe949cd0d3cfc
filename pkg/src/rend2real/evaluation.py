"""Metrics: Frechet distance of embedding statistics, identity similarity,
and LPIPS / L2 reconstruction aggregates."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .imaging import downsample
from .losses import BackendUnavailable, PerceptualBackbone, perceptual_distance, toy_backbone

__all__ = [
    'FeatureStats', 'MetricReport', 'ToyEmbedder', 'TorchScriptEmbedder', 'InceptionEmbedder',
    'make_embedder', 'feature_stats', 'stats_from_features', 'frechet_distance',
    'identity_similarity', 'reconstruction_metrics', 'cached_feature_stats',
]

NEGATIVE_EIGEN_TOLERANCE = 1e-6


@dataclass
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    n: int
    backend: str = 'unknown'

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f'covariance shape {self.covariance.shape} does not match mean dim {d}')
        if self.n < 2:
            raise ValueError('feature statistics need at least 2 samples')

    def save(self, path):
        np.savez(path, mean=self.mean, covariance=self.covariance, n=self.n, backend=self.backend)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls(data['mean'], data['covariance'], int(data['n']), str(data['backend']))


class ToyEmbedder:
    """Fixed random projection of a 16x16 thumbnail followed by tanh."""

    def __init__(self, dim: int = 64, seed: int = 0, thumb: int = 16):
        gen = torch.Generator().manual_seed(seed)
        self.thumb = thumb
        self.proj = torch.randn(3 * thumb * thumb, dim, generator=gen, dtype=torch.float64) / math.sqrt(3 * thumb * thumb)
        self.name = f'toy-{dim}-{seed}'

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> np.ndarray:
        x = images.unsqueeze(0) if images.ndim == 3 else images
        if x.shape[-1] != self.thumb:
            x = downsample(x, self.thumb) if x.shape[-1] % self.thumb == 0 else \
                F.interpolate(x, size=(self.thumb, self.thumb), mode='bilinear', antialias=True, align_corners=False)
        feats = torch.tanh(x.flatten(1).double() @ self.proj * 2.0)
        return feats.numpy()


class TorchScriptEmbedder:
    """Pretrained face-recognition (or other) embedder exported to TorchScript."""

    def __init__(self, path, input_size: Optional[int] = None):
        if path is None or not Path(path).exists():
            raise BackendUnavailable(f'embedder weights not found: {path}')
        self.net = torch.jit.load(str(path), map_location='cpu').eval()
        self.input_size = input_size
        self.name = f'torchscript:{Path(path).name}'

    @torch.no_grad()
    def __call__(self, images):
        x = images.unsqueeze(0) if images.ndim == 3 else images
        if self.input_size and x.shape[-1] != self.input_size:
            x = F.interpolate(x, size=(self.input_size,) * 2, mode='bilinear', antialias=True, align_corners=False)
        return self.net(x).double().numpy()


class InceptionEmbedder:
    """torchvision Inception-v3 pool features (2048-d); needs downloadable weights."""

    def __init__(self):
        try:
            import torchvision
            net = torchvision.models.inception_v3(weights=torchvision.models.Inception_V3_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise BackendUnavailable(f'Inception weights unavailable: {exc}') from exc
        net.fc = torch.nn.Identity()
        self.net = net.eval()
        self.name = 'inception-v3'

    @torch.no_grad()
    def __call__(self, images):
        x = images.unsqueeze(0) if images.ndim == 3 else images
        x = F.interpolate((x + 1) / 2, size=(299, 299), mode='bilinear', align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        return self.net((x - mean) / std).double().numpy()


def make_embedder(backend: str = 'toy', weights=None, seed: int = 0):
    if backend == 'toy':
        return ToyEmbedder(seed=seed)
    if backend == 'pretrained':
        return TorchScriptEmbedder(weights) if weights else InceptionEmbedder()
    raise ValueError(f'unknown embedder backend {backend!r}')


def stats_from_features(features: np.ndarray, backend: str = 'unknown') -> FeatureStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError('need a [n >= 2, d] feature matrix')
    cov = np.cov(features, rowvar=False)
    return FeatureStats(features.mean(axis=0), np.atleast_2d(cov), features.shape[0], backend)


def feature_stats(images: Sequence[torch.Tensor], embedder, batch_size: int = 64) -> FeatureStats:
    images = list(images)
    if len(images) < 2:
        raise ValueError('feature_stats needs at least 2 images')
    feats = [embedder(torch.stack(images[i:i + batch_size])) for i in range(0, len(images), batch_size)]
    return stats_from_features(np.concatenate(feats), getattr(embedder, 'name', 'unknown'))


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < -NEGATIVE_EIGEN_TOLERANCE * scale:
        raise np.linalg.LinAlgError(f'matrix not PSD (min eigenvalue {vals.min():.3g})')
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, vals


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """``|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))``.

    The trace of the product square root is computed as the sum of square
    roots of the eigenvalues of ``S1^(1/2) S2 S1^(1/2)``, a symmetric PSD matrix
    with the same spectrum as ``S1 S2``. Eigenvalues down to -1e-6 (relative)
    are treated as numerical noise and zeroed.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f'dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}')
    try:
        s1_half, _ = _psd_sqrt(a.covariance)
        _, vals = _psd_sqrt(s1_half @ b.covariance @ s1_half)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f'matrix square root failed: {exc}') from exc
    diff = a.mean - b.mean
    d2 = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * np.sqrt(vals).sum())
    if d2 < 0:
        if d2 < -NEGATIVE_EIGEN_TOLERANCE * max(1.0, np.trace(a.covariance) + np.trace(b.covariance)):
            raise ArithmeticError(f'Frechet distance numerically negative: {d2}')
        d2 = 0.0
    return d2


def identity_similarity(a: torch.Tensor, b: torch.Tensor, embedder) -> float:
    """Cosine similarity of the two images' embeddings."""
    ea = np.asarray(embedder(a), dtype=np.float64).reshape(-1)
    eb = np.asarray(embedder(b), dtype=np.float64).reshape(-1)
    ea = ea / np.linalg.norm(ea)
    eb = eb / np.linalg.norm(eb)
    return float(np.clip(ea @ eb, -1.0, 1.0))


@dataclass
class MetricReport:
    fid: Optional[float] = None
    identity_similarity_mean: Optional[float] = None
    lpips_mean: Optional[float] = None
    l2_mean: Optional[float] = None
    rows: list = field(default_factory=list)


def reconstruction_metrics(pairs, backbone: Optional[PerceptualBackbone] = None) -> MetricReport:
    """Mean perceptual distance and mean per-pixel squared error over image pairs.

    Squared error is measured on the [-1, 1] pixel scale.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError('reconstruction_metrics needs at least one pair')
    backbone = backbone or toy_backbone()
    rows = []
    with torch.no_grad():
        for i, (a, b) in enumerate(pairs):
            if a.shape != b.shape:
                raise ValueError(f'pair {i}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}')
            rows.append({'index': i,
                         'lpips': float(perceptual_distance(a, b, backbone)),
                         'l2': float((a.double() - b.double()).square().mean())})
    return MetricReport(lpips_mean=float(np.mean([r['lpips'] for r in rows])),
                        l2_mean=float(np.mean([r['l2'] for r in rows])), rows=rows)


def directory_hash(paths) -> str:
    digest = hashlib.sha256()
    for p in sorted(Path(p) for p in paths):
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()[:16]


def cached_feature_stats(paths, embedder, cache_dir, loader) -> FeatureStats:
    """feature_stats over image files, cached on disk by (content hash, backend)."""
    paths = sorted(Path(p) for p in paths)
    key = f'{directory_hash(paths)}-{getattr(embedder, "name", "unknown")}.npz'
    cache = Path(cache_dir) / key
    if cache.exists():
        return FeatureStats.load(cache)
    stats = feature_stats([loader(p) for p in paths], embedder)
    cache.parent.mkdir(parents=True, exist_ok=True)
    stats.save(cache)
    return stats
