"""Deterministic image primitives shared by the whole pipeline.

Images are torch tensors in ``[-1, 1]`` laid out channel-first, either a single
``[3, H, W]`` raster or a batch ``[N, 3, H, W]``. Every function here is pure and
differentiable where it makes sense, so it can sit inside a loss graph.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import PIL.Image
import torch
import torch.nn.functional as F

__all__ = [
    'BlurSpec', 'ImageFormatError', 'downsample', 'gaussian_kernel1d',
    'gaussian_blur', 'horizontal_flip', 'load_image', 'save_image',
    'to_uint8', 'from_uint8', 'save_mask', 'load_mask', 'resolution_log2',
]

logger = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


@dataclass(frozen=True)
class BlurSpec:
    kernel_size: int = 13
    sigma: float = 10.0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f'kernel_size must be a positive odd integer, got {self.kernel_size}')
        if not self.sigma > 0:
            raise ValueError(f'sigma must be positive, got {self.sigma}')

    def scaled(self, factor: float) -> 'BlurSpec':
        """Returns the blur rescaled for an image `factor` times the size."""
        size = max(1, int(round(self.kernel_size * factor)))
        if size % 2 == 0:
            size += 1
        return BlurSpec(size, max(self.sigma * factor, 1e-3))


def _as_batch(img: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if img.ndim == 3:
        return img.unsqueeze(0), True
    if img.ndim == 4:
        return img, False
    raise ValueError(f'expected [C,H,W] or [N,C,H,W] tensor, got shape {tuple(img.shape)}')


def downsample(img: torch.Tensor, target: int) -> torch.Tensor:
    """Resizes a square image down to ``target x target``.

    Integer factors use exact block averaging; other factors fall back to
    antialiased bilinear interpolation. Upsampling is refused because it always
    indicates a misconfigured loss resolution.
    """
    x, squeeze = _as_batch(img)
    h, w = x.shape[-2:]
    if target < 1:
        raise ValueError(f'target resolution must be >= 1, got {target}')
    if target > min(h, w):
        raise ValueError(f'downsample cannot upsample: target {target} > source {h}x{w}')
    if (h, w) == (target, target):
        out = x
    elif h % target == 0 and w % target == 0:
        out = F.avg_pool2d(x, kernel_size=(h // target, w // target))
    else:
        out = F.interpolate(x, size=(target, target), mode='bilinear',
                            align_corners=False, antialias=True)
    return out.squeeze(0) if squeeze else out


def gaussian_kernel1d(spec: BlurSpec, dtype=torch.float32) -> torch.Tensor:
    radius = spec.kernel_size // 2
    taps = torch.arange(-radius, radius + 1, dtype=torch.float64)
    kernel = torch.exp(-0.5 * (taps / spec.sigma) ** 2)
    return (kernel / kernel.sum()).to(dtype)


def gaussian_blur(img: torch.Tensor, spec: BlurSpec) -> torch.Tensor:
    """Separable Gaussian blur with reflection padding, applied per channel.

    Accepts images ``[C,H,W]``/``[N,C,H,W]`` or single-channel masks ``[H,W]``.
    """
    if img.ndim == 2:
        return gaussian_blur(img[None, None], spec)[0, 0]
    x, squeeze = _as_batch(img)
    pad = spec.kernel_size // 2
    h, w = x.shape[-2:]
    if pad >= h or pad >= w:
        raise ValueError(f'blur kernel {spec.kernel_size} too large for reflection padding of {h}x{w} image')
    c = x.shape[1]
    k = gaussian_kernel1d(spec, x.dtype).to(x.device)
    x = F.pad(x, (pad, pad, pad, pad), mode='reflect')
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = F.conv2d(x, k.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)
    return x.squeeze(0) if squeeze else x


def horizontal_flip(img: torch.Tensor) -> torch.Tensor:
    return torch.flip(img, dims=(-1,))


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """[3,H,W] in [-1,1] -> HxWx3 uint8. Zero maps to 128 (round half to even of 127.5)."""
    arr = img.detach().cpu().double().numpy()
    arr = np.rint((np.clip(arr, -1.0, 1.0) + 1.0) * 127.5)
    return arr.astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0)


def load_image(path) -> torch.Tensor:
    """Reads an 8-bit RGB(A) PNG into a ``[3, H, W]`` float tensor in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'image not found: {path}')
    try:
        with PIL.Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == 'P':
                im = im.convert('RGBA' if 'transparency' in im.info else 'RGB')
                mode = im.mode
            if mode == 'RGBA':
                logger.warning('dropping alpha channel of %s', path)
                im = im.convert('RGB')
            elif mode != 'RGB':
                raise ImageFormatError(f'non-3-channel image ({mode}): {path}')
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f'corrupt or unreadable image {path}: {exc}') from exc
    return from_uint8(arr)


def save_image(img: torch.Tensor, path) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f'expected [3,H,W] image, got shape {tuple(img.shape)}')
    if not torch.isfinite(img).all():
        raise ValueError('refusing to save image with non-finite values')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PIL.Image.fromarray(to_uint8(img), 'RGB').save(path)


def save_mask(mask: torch.Tensor, path) -> None:
    """Writes a [H, W] mask in [0, 1] as a single-channel 8-bit PNG."""
    arr = np.rint(np.clip(mask.detach().cpu().double().numpy(), 0, 1) * 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PIL.Image.fromarray(arr, 'L').save(path)


def load_mask(path) -> torch.Tensor:
    with PIL.Image.open(path) as im:
        arr = np.asarray(im.convert('L'), dtype=np.float32) / 255.0
    return torch.from_numpy(arr)


def resolution_log2(resolution: int) -> int:
    log2 = int(round(math.log2(resolution)))
    if resolution < 4 or 2 ** log2 != resolution:
        raise ValueError(f'resolution must be a power of two >= 4, got {resolution}')
    return log2
