"""Mask-based paste-back of a realified face onto the original render.

parse -> combine classes into m -> paste x_res and m into the original frame
-> erode + blur to m_hat -> ``x_final = m_hat * x_res' + (1 - m_hat) * x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Protocol

import numpy as np
import scipy.ndimage
import torch
import torch.nn.functional as F

from .imaging import BlurSpec, gaussian_blur, load_mask, save_mask

__all__ = [
    'FACE_CLASSES', 'SegMask', 'FaceParser', 'PaletteParser', 'FixtureParser', 'ExternalParser',
    'ParserUnavailable', 'Placement', 'parse_face', 'combine_mask', 'paste_back', 'soften',
    'composite', 'default_soften_params', 'disk',
]

FACE_CLASSES = ('skin', 'brows', 'eyes', 'eyeglasses', 'ears', 'nose', 'mouth', 'lips', 'hair')


class ParserUnavailable(RuntimeError):
    """The requested face-parsing backend is not configured."""


@dataclass
class SegMask:
    masks: Dict[str, torch.Tensor]

    def __post_init__(self):
        shapes = {tuple(m.shape) for m in self.masks.values()}
        if len(shapes) > 1:
            raise ValueError(f'segmentation masks disagree on shape: {shapes}')
        unknown = set(self.masks) - set(FACE_CLASSES)
        if unknown:
            raise ValueError(f'unknown face classes: {sorted(unknown)}')
        self.masks = {k: v.bool() for k, v in self.masks.items()}

    @property
    def shape(self):
        return next(iter(self.masks.values())).shape

    @classmethod
    def empty(cls, height, width):
        return cls({c: torch.zeros(height, width, dtype=torch.bool) for c in FACE_CLASSES})

    def save(self, directory):
        for name, m in self.masks.items():
            save_mask(m.float(), Path(directory) / f'{name}.png')


class FaceParser(Protocol):
    def parse(self, img: torch.Tensor) -> SegMask: ...


@dataclass
class PaletteParser:
    """Labels pixels whose color is within ``tolerance`` of a class color.

    Suitable for flat-shaded synthetic renders; a blank image yields empty masks.
    """

    palette: Dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    tolerance: float = 0.04

    def parse(self, img):
        out = {}
        for name in FACE_CLASSES:
            color = self.palette.get(name)
            if color is None:
                out[name] = torch.zeros(img.shape[-2:], dtype=torch.bool)
                continue
            ref = torch.tensor(color, dtype=img.dtype).view(3, 1, 1)
            out[name] = (img - ref).abs().amax(dim=0) <= self.tolerance
        return SegMask(out)


@dataclass
class FixtureParser:
    """Reads precomputed masks ``<directory>/<class>.png`` (0/255, single channel)."""

    directory: Path

    def parse(self, img):
        directory = Path(self.directory)
        if not directory.is_dir():
            raise ParserUnavailable(f'mask fixture directory not found: {directory}')
        h, w = img.shape[-2:]
        out = {}
        for name in FACE_CLASSES:
            path = directory / f'{name}.png'
            if path.exists():
                m = load_mask(path) > 0.5
                if tuple(m.shape) != (h, w):
                    raise ValueError(f'{path}: mask shape {tuple(m.shape)} != image shape {(h, w)}')
                out[name] = m
            else:
                out[name] = torch.zeros(h, w, dtype=torch.bool)
        return SegMask(out)


class ExternalParser:
    """TorchScript face-parsing network returning per-class logits ``[1, C, H, W]``.

    ``class_index`` maps our class names to output channels.
    """

    def __init__(self, weights=None, class_index: Optional[Dict[str, int]] = None):
        if weights is None or not Path(weights).exists():
            raise ParserUnavailable(f'face-parsing weights not found: {weights}')
        if not class_index:
            raise ParserUnavailable('external parser needs a class_index mapping')
        self.net = torch.jit.load(str(weights), map_location='cpu').eval()
        self.class_index = class_index

    @torch.no_grad()
    def parse(self, img):
        labels = self.net(img.unsqueeze(0))[0].argmax(dim=0)
        return SegMask({c: labels == self.class_index[c] if c in self.class_index
                        else torch.zeros_like(labels, dtype=torch.bool) for c in FACE_CLASSES})


# flat colors of the synthetic face renders, in [-1, 1]
DEFAULT_PALETTE = {
    'skin': (0.70, 0.30, 0.10),
    'brows': (-0.60, -0.70, -0.80),
    'eyes': (-0.90, 0.20, 0.90),
    'ears': (0.50, 0.10, -0.10),
    'nose': (0.85, 0.45, 0.25),
    'mouth': (-0.30, -0.90, -0.60),
    'lips': (0.90, -0.40, -0.30),
    'hair': (-0.20, -0.45, -0.90),
}


def parse_face(img, parser) -> SegMask:
    if parser is None:
        raise ParserUnavailable('no face-parsing backend configured')
    return parser.parse(img)


def combine_mask(seg: SegMask, classes: Iterable[str] = FACE_CLASSES) -> torch.Tensor:
    """Union of the selected class masks as a float {0, 1} raster."""
    classes = list(classes)
    unknown = [c for c in classes if c not in FACE_CLASSES]
    if unknown:
        raise ValueError(f'unknown face classes: {unknown}')
    out = torch.zeros(seg.shape, dtype=torch.bool)
    for c in classes:
        if c in seg.masks:
            out |= seg.masks[c]
    return out.float()


@dataclass(frozen=True)
class Placement:
    top: int
    left: int
    height: int
    width: int


def paste_back(x: torch.Tensor, x_res: torch.Tensor, placement: Placement, mask: Optional[torch.Tensor] = None):
    """Returns ``(x_res', m')``: x_res pasted into x at ``placement``; m likewise into zeros.

    x_res (and mask) are resized to the placement rectangle if their size differs.
    """
    _, h, w = x.shape
    p = placement
    if p.top < 0 or p.left < 0 or p.height < 0 or p.width < 0 or p.top + p.height > h or p.left + p.width > w:
        raise ValueError(f'placement {p} outside image of size {h}x{w}')
    out = x.clone()
    m_out = torch.zeros(h, w, dtype=x.dtype)
    if p.height == 0 or p.width == 0:
        return out, m_out
    patch = x_res
    if patch.shape[-2:] != (p.height, p.width):
        patch = F.interpolate(patch.unsqueeze(0), size=(p.height, p.width), mode='bilinear',
                              align_corners=False, antialias=True)[0]
    out[:, p.top:p.top + p.height, p.left:p.left + p.width] = patch
    if mask is not None:
        m = mask.to(x.dtype)
        if m.shape != (p.height, p.width):
            m = F.interpolate(m[None, None], size=(p.height, p.width), mode='bilinear', align_corners=False)[0, 0]
        m_out[p.top:p.top + p.height, p.left:p.left + p.width] = m
    return out, m_out


def disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return xx ** 2 + yy ** 2 <= radius ** 2


def soften(mask: torch.Tensor, erode_radius: int, blur: BlurSpec) -> torch.Tensor:
    """Binary erosion by a disk, then Gaussian blur, clamped to [0, 1]."""
    if erode_radius < 0:
        raise ValueError('erode_radius must be >= 0')
    binary = mask.detach().cpu().numpy() > 0.5
    if erode_radius > 0:
        binary = scipy.ndimage.binary_erosion(binary, structure=disk(erode_radius), border_value=0)
    eroded = torch.from_numpy(binary.astype(np.float32)).to(mask.dtype)
    return gaussian_blur(eroded, blur).clamp(0, 1)


def default_soften_params(resolution: int):
    """Erosion radius 4 px and blur kernel 21 / sigma 5 at 1024 px, scaled linearly."""
    f = resolution / 1024
    return max(0, int(round(4 * f))), BlurSpec(21, 5.0).scaled(f)


def composite(x: torch.Tensor, x_res: torch.Tensor, m_hat: torch.Tensor) -> torch.Tensor:
    if x.shape != x_res.shape or m_hat.shape != x.shape[-2:]:
        raise ValueError(f'shape mismatch: x {tuple(x.shape)}, x_res {tuple(x_res.shape)}, '
                         f'mask {tuple(m_hat.shape)}')
    m = m_hat.unsqueeze(0)
    out = m * x_res + (1 - m) * x
    # rounding can push a blend one ulp outside its sources
    return torch.minimum(torch.maximum(out, torch.minimum(x, x_res)), torch.maximum(x, x_res))
