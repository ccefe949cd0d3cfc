"""Flat-shaded synthetic portraits with exact labels and 68-point landmarks.

Faces live in a canonical frame (eyes at (+-0.3, -0.1), mouth corners at
(+-0.2, 0.35), units of roughly half a face width) and are placed in the image by
a similarity transform ``p_img = scale * R(angle) @ p + offset`` in pixel-index
coordinates. Shapes are evaluated analytically per pixel center, so labels are
exact at any pose.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .compositing import DEFAULT_PALETTE, FACE_CLASSES, SegMask

__all__ = ['Pose', 'render_face', 'face_landmarks', 'render_anchor_blobs', 'CANONICAL_ANCHORS']

CANONICAL_ANCHORS = {
    'eye_left': (-0.3, -0.1),
    'eye_right': (0.3, -0.1),
    'mouth_left': (-0.2, 0.35),
    'mouth_right': (0.2, 0.35),
}

BACKGROUND = (-0.1, 0.35, 0.2)

# (class, kind, center, radii / half-size); later entries paint over earlier ones
_SHAPES = [
    ('hair', 'ellipse', (0.0, -0.05), (0.72, 0.85)),
    ('ears', 'ellipse', (-0.62, 0.02), (0.09, 0.17)),
    ('ears', 'ellipse', (0.62, 0.02), (0.09, 0.17)),
    ('skin', 'ellipse', (0.0, 0.08), (0.6, 0.78)),
    ('nose', 'ellipse', (0.0, 0.13), (0.07, 0.12)),
    ('brows', 'rect', (-0.3, -0.24), (0.12, 0.025)),
    ('brows', 'rect', (0.3, -0.24), (0.12, 0.025)),
    ('eyes', 'ellipse', (-0.3, -0.1), (0.09, 0.045)),
    ('eyes', 'ellipse', (0.3, -0.1), (0.09, 0.045)),
    ('lips', 'ellipse', (0.0, 0.35), (0.2, 0.06)),
    ('mouth', 'ellipse', (0.0, 0.35), (0.13, 0.018)),
]


class Pose:
    """Similarity placement of the canonical face frame into an image."""

    def __init__(self, scale: float, angle: float = 0.0, offset=(0.0, 0.0)):
        self.scale = float(scale)
        self.angle = float(angle)
        self.offset = np.asarray(offset, dtype=np.float64)

    @classmethod
    def centered(cls, size: int, face_fraction: float = 0.35, angle: float = 0.0):
        return cls(size * face_fraction, angle, ((size - 1) / 2, (size - 1) / 2))

    def matrix(self):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.matrix().T + self.offset

    def invert(self, pts):
        return (np.asarray(pts, dtype=np.float64) - self.offset) @ np.linalg.inv(self.matrix()).T


def _canonical_grid(size, pose):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    can = pose.invert(pts)
    return can[:, 0].reshape(size, size), can[:, 1].reshape(size, size)


def render_face(size: int, pose: Pose, palette=None):
    """Returns ``(image [3,size,size], SegMask)`` for a flat-shaded face."""
    palette = palette or DEFAULT_PALETTE
    u, v = _canonical_grid(size, pose)
    labels = np.full((size, size), -1, dtype=np.int64)
    names = list(FACE_CLASSES)
    for name, kind, (cx, cy), (rx, ry) in _SHAPES:
        if kind == 'ellipse':
            inside = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2 <= 1.0
        else:
            inside = (np.abs(u - cx) <= rx) & (np.abs(v - cy) <= ry)
        labels[inside] = names.index(name)
    img = np.empty((3, size, size), dtype=np.float32)
    img[:] = np.asarray(BACKGROUND, dtype=np.float32).reshape(3, 1, 1)
    masks = {}
    for i, name in enumerate(names):
        m = labels == i
        masks[name] = torch.from_numpy(m)
        if name in palette:
            img[:, m] = np.asarray(palette[name], dtype=np.float32).reshape(3, 1)
    return torch.from_numpy(img), SegMask(masks)


def _canonical_landmarks68():
    pts = np.zeros((68, 2))
    t = np.linspace(0.95 * math.pi, 0.05 * math.pi, 17)
    pts[0:17] = np.stack([0.58 * np.cos(t), 0.08 + 0.76 * np.sin(t)], axis=1)
    for k, cx in ((17, -0.3), (22, 0.3)):
        pts[k:k + 5] = np.stack([cx + np.linspace(-0.12, 0.12, 5), np.full(5, -0.24)], axis=1)
    pts[27:31] = np.stack([np.zeros(4), np.linspace(-0.1, 0.15, 4)], axis=1)
    pts[31:36] = np.stack([np.linspace(-0.07, 0.07, 5), np.full(5, 0.22)], axis=1)
    ang = np.linspace(0, 2 * math.pi, 6, endpoint=False) + math.pi
    for k, (cx, cy) in ((36, CANONICAL_ANCHORS['eye_left']), (42, CANONICAL_ANCHORS['eye_right'])):
        # six points on a circle: their mean is exactly the eye center
        pts[k:k + 6] = np.stack([cx + 0.08 * np.cos(ang), cy + 0.04 * np.sin(ang)], axis=1)
    ang = np.linspace(0, 2 * math.pi, 12, endpoint=False) + math.pi
    pts[48:60] = np.stack([0.2 * np.cos(ang), 0.35 + 0.06 * np.sin(ang)], axis=1)
    ang = np.linspace(0, 2 * math.pi, 8, endpoint=False) + math.pi
    pts[60:68] = np.stack([0.13 * np.cos(ang), 0.35 + 0.018 * np.sin(ang)], axis=1)
    return pts


def face_landmarks(pose: Pose) -> np.ndarray:
    """68-point landmarks (dlib ordering) of the synthetic face under ``pose``."""
    return pose.apply(_canonical_landmarks68())


def render_anchor_blobs(size: int, pose: Pose, sigma: float = 0.03):
    """Black image with Gaussian blobs at the eye centers and mouth center.

    Channel 0 holds the left eye, channel 1 the right eye, channel 2 the mouth,
    so intensity-weighted centroids locate each anchor precisely.
    """
    u, v = _canonical_grid(size, pose)
    el, er = CANONICAL_ANCHORS['eye_left'], CANONICAL_ANCHORS['eye_right']
    mouth = ((CANONICAL_ANCHORS['mouth_left'][0] + CANONICAL_ANCHORS['mouth_right'][0]) / 2,
             CANONICAL_ANCHORS['mouth_left'][1])
    img = np.empty((3, size, size), dtype=np.float32)
    for ch, (cx, cy) in enumerate((el, er, mouth)):
        img[ch] = np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2 * sigma ** 2)) * 2 - 1
    return torch.from_numpy(img)
