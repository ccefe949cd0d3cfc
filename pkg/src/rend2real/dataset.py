"""Dataset tooling: URL manifests, downloading, FFHQ-style alignment, filtering, stats.

The manifest is a UTF-8 CSV with columns
``id,url,license_note,split,status,content_hash,error``. Every status change is
also appended to ``<manifest>.history.jsonl`` so the pipeline can be replayed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Protocol
from urllib.parse import urlparse

import numpy as np
import requests
import scipy.ndimage
import torch

__all__ = [
    'ManifestRecord', 'Manifest', 'RetryPolicy', 'fetch', 'FaceLandmarks', 'LandmarkDetector',
    'ffhq_quad', 'align_crop', 'apply_filterlist', 'dataset_stats', 'replay_history',
    'STATUSES', 'SPLITS',
]

logger = logging.getLogger(__name__)

STATUSES = ('pending', 'fetched', 'aligned', 'filtered_out')
SPLITS = ('train', 'holdout')
MANIFEST_COLUMNS = ('id', 'url', 'license_note', 'split', 'status', 'content_hash', 'error')


@dataclass
class ManifestRecord:
    id: str
    url: str
    license_note: str = ''
    split: str = 'train'
    status: str = 'pending'
    content_hash: str = ''
    error: str = ''

    def __post_init__(self):
        parsed = urlparse(self.url)
        if parsed.scheme not in ('http', 'https', 'file') or not (parsed.netloc or parsed.scheme == 'file'):
            raise ValueError(f'record {self.id!r}: malformed url {self.url!r}')
        if self.split not in SPLITS:
            raise ValueError(f'record {self.id!r}: unknown split {self.split!r}')
        if self.status not in STATUSES:
            raise ValueError(f'record {self.id!r}: unknown status {self.status!r}')


class Manifest:
    def __init__(self, records: Iterable[ManifestRecord] = (), history=None):
        self.records = {}
        for rec in records:
            if rec.id in self.records:
                raise ValueError(f'duplicate manifest id {rec.id!r}')
            self.records[rec.id] = rec
        self.history = list(history or [])
        self._saved_events = len(self.history)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records.values())

    def __getitem__(self, rid):
        return self.records[rid]

    def transition(self, rid, status, note=''):
        if status not in STATUSES:
            raise ValueError(f'unknown status {status!r}')
        rec = self.records[rid]
        self.history.append({'id': rid, 'from': rec.status, 'to': status, 'note': note,
                             'time': time.time()})
        rec.status = status

    def counts(self):
        return Counter(r.status for r in self)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, newline='', encoding='utf-8') as f:
            reader = csv.DictReader(f)
            missing = set(('id', 'url')) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f'{path}: manifest missing columns {sorted(missing)}')
            records = [ManifestRecord(**{k: (row.get(k) or '') if k not in ('split', 'status') else
                                         (row.get(k) or ManifestRecord.__dataclass_fields__[k].default)
                                         for k in MANIFEST_COLUMNS}) for row in reader]
        history = []
        hist_path = path.with_name(path.name + '.history.jsonl')
        if hist_path.exists():
            history = [json.loads(line) for line in hist_path.read_text(encoding='utf-8').splitlines() if line]
        return cls(records, history)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + '.tmp')
        with open(tmp, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=MANIFEST_COLUMNS)
            writer.writeheader()
            for rec in self:
                writer.writerow(asdict(rec))
        tmp.replace(path)
        new = self.history[self._saved_events:]
        if new:
            with open(path.with_name(path.name + '.history.jsonl'), 'a', encoding='utf-8') as f:
                for event in new:
                    f.write(json.dumps(event, sort_keys=True) + '\n')
        self._saved_events = len(self.history)


def replay_history(history, initial_status='pending'):
    """Statuses reconstructed from the append-only event log."""
    status = {}
    for event in history:
        current = status.get(event['id'], initial_status)
        if event['from'] != current:
            raise ValueError(f'history inconsistent for {event["id"]}: {event["from"]} != {current}')
        status[event['id']] = event['to']
    return status


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff: float = 0.5
    factor: float = 2.0
    timeout: float = 30.0
    retry_statuses: tuple = (429, 500, 502, 503, 504)


class FetchError(RuntimeError):
    pass


def _target_path(out_dir: Path, rec: ManifestRecord) -> Path:
    suffix = Path(urlparse(rec.url).path).suffix or '.bin'
    return out_dir / f'{rec.id}{suffix}'


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def _download(session, rec, dest: Path, policy: RetryPolicy, sleep):
    delay = policy.backoff
    last = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            resp = session.get(rec.url, timeout=policy.timeout)
            if resp.status_code == 200:
                tmp = dest.with_name(dest.name + '.part')
                tmp.write_bytes(resp.content)
                tmp.replace(dest)
                return hashlib.sha256(resp.content).hexdigest()
            last = f'HTTP {resp.status_code}'
            if resp.status_code not in policy.retry_statuses:
                break
        except requests.RequestException as exc:
            last = f'{type(exc).__name__}: {exc}'
        if attempt < policy.max_attempts:
            sleep(delay)
            delay *= policy.factor
    raise FetchError(last or 'download failed')


def fetch(manifest: Manifest, out_dir, policy: RetryPolicy = RetryPolicy(), jobs: int = 4,
          session: Optional[requests.Session] = None, sleep: Callable[[float], None] = time.sleep) -> Manifest:
    """Downloads every pending record; failures stay pending with an error note.

    Records already fetched are skipped after re-verifying their content hash
    (a mismatch sends them back to pending). Downloads run on a thread pool; all
    manifest updates happen on the calling thread. ``requests`` honours the
    standard ``HTTP(S)_PROXY`` environment variables.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = session or requests.Session()
    todo = []
    for rec in manifest:
        if rec.status == 'pending':
            todo.append(rec)
        elif rec.status in ('fetched', 'aligned') and rec.content_hash:
            path = _target_path(out_dir, rec)
            if not path.exists() or _sha256(path) != rec.content_hash:
                rec.error = 'content hash mismatch or file missing; refetching'
                manifest.transition(rec.id, 'pending', rec.error)
                todo.append(rec)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [(rec, pool.submit(_download, session, rec, _target_path(out_dir, rec), policy, sleep))
                   for rec in todo]
        for rec, fut in futures:
            try:
                digest = fut.result()
            except Exception as exc:  # recorded per record; the batch continues
                rec.error = str(exc)
                logger.warning('fetch %s failed: %s', rec.id, exc)
                continue
            rec.content_hash = digest
            rec.error = ''
            manifest.transition(rec.id, 'fetched', 'downloaded')
    return manifest


def apply_filterlist(manifest: Manifest, ids: Iterable[str]) -> Manifest:
    """Marks listed fetched/aligned records as filtered_out."""
    for rid in ids:
        rid = rid.strip()
        if not rid:
            continue
        if rid not in manifest.records:
            logger.warning('filterlist id %r not in manifest', rid)
            continue
        rec = manifest[rid]
        if rec.status in ('fetched', 'aligned'):
            manifest.transition(rid, 'filtered_out', 'filterlist')
        elif rec.status == 'pending':
            logger.warning('filterlist id %r has not been fetched; left pending', rid)
    return manifest


# Alignment --------------------------------------------------------------------


@dataclass
class FaceLandmarks:
    """68 points in dlib ordering, pixel-index coordinates (x, y)."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.shape != (68, 2):
            raise ValueError(f'expected 68x2 landmarks, got {self.points.shape}')
        if not np.isfinite(self.points).all():
            raise ValueError('landmarks must be finite')

    def check_bounds(self, height, width):
        x, y = self.points[:, 0], self.points[:, 1]
        if (x < -0.5).any() or (y < -0.5).any() or (x > width - 0.5).any() or (y > height - 0.5).any():
            raise ValueError('landmarks fall outside the image')

    def anchors(self):
        lm = self.points
        return {
            'eye_left': lm[36:42].mean(axis=0),
            'eye_right': lm[42:48].mean(axis=0),
            'mouth_left': lm[48],
            'mouth_right': lm[54],
        }


class LandmarkDetector(Protocol):
    def __call__(self, img: torch.Tensor) -> FaceLandmarks: ...


def ffhq_quad(lm: FaceLandmarks):
    """Oriented crop square of the FFHQ recipe: ``(center, x_axis, y_axis)``.

    ``x_axis``/``y_axis`` are half-side vectors, so the square spans
    ``center +- x_axis +- y_axis``.
    """
    a = lm.anchors()
    eye_avg = (a['eye_left'] + a['eye_right']) * 0.5
    eye_to_eye = a['eye_right'] - a['eye_left']
    mouth_avg = (a['mouth_left'] + a['mouth_right']) * 0.5
    eye_to_mouth = mouth_avg - eye_avg
    if np.hypot(*eye_to_eye) < 1e-6:
        raise ValueError('degenerate landmarks: zero inter-ocular distance')
    x = eye_to_eye - np.flipud(eye_to_mouth) * [-1, 1]
    x = x / np.hypot(*x)
    x = x * max(np.hypot(*eye_to_eye) * 2.0, np.hypot(*eye_to_mouth) * 1.8)
    y = np.flipud(x) * [-1, 1]
    c = eye_avg + eye_to_mouth * 0.1
    return c, x, y


def align_crop(raw: torch.Tensor, lm: FaceLandmarks, output_size: int = 1024,
               enable_padding: bool = True) -> torch.Tensor:
    """FFHQ-convention alignment of ``raw`` ([3,H,W] in [-1,1]) to ``output_size``².

    The crop square from :func:`ffhq_quad` is mapped onto the output so that its
    corner ``c - x - y`` lands on the outer edge of pixel (0, 0). Downscaling is anti-aliased with a
    Gaussian prefilter; regions outside the
    source are reflection padded, then blurred and faded toward the median.
    """
    _, h, w = raw.shape
    lm.check_bounds(h, w)
    c, x, y = ffhq_quad(lm)
    img = raw.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)
    qsize = np.hypot(*x) * 2

    quad = np.stack([c - x - y, c - x + y, c + x + y, c + x - y])
    border = max(int(np.rint(qsize * 0.1)), 3)
    # crop to the quad's bounding box plus border
    crop = (int(np.floor(quad[:, 0].min())), int(np.floor(quad[:, 1].min())),
            int(np.ceil(quad[:, 0].max())), int(np.ceil(quad[:, 1].max())))
    crop = (max(crop[0] - border, 0), max(crop[1] - border, 0),
            min(crop[2] + border, img.shape[1]), min(crop[3] + border, img.shape[0]))
    img = img[crop[1]:crop[3], crop[0]:crop[2]]
    c = c - np.array(crop[:2], dtype=np.float64)
    quad = quad - np.array(crop[:2], dtype=np.float64)

    # how far the quad leaves the source, beyond the outer pixel edges
    need = (-0.5 - quad[:, 0].min(), -0.5 - quad[:, 1].min(),
            quad[:, 0].max() - (img.shape[1] - 0.5), quad[:, 1].max() - (img.shape[0] - 0.5))
    if enable_padding and max(need) > 0.5:
        pad = np.maximum([max(int(np.ceil(v)), 0) + border for v in need], int(np.rint(qsize * 0.3)))
        img = np.pad(img, ((pad[1], pad[3]), (pad[0], pad[2]), (0, 0)), 'reflect')
        ph, pw, _ = img.shape
        yy, xx, _ = np.ogrid[:ph, :pw, :1]
        mask = np.maximum(1.0 - np.minimum(xx / max(pad[0], 1), (pw - 1 - xx) / max(pad[2], 1)),
                          1.0 - np.minimum(yy / max(pad[1], 1), (ph - 1 - yy) / max(pad[3], 1)))
        blur = qsize * 0.02
        img = img + (scipy.ndimage.gaussian_filter(img, [blur, blur, 0]) - img) * np.clip(mask * 3.0 + 1.0, 0.0, 1.0)
        img = img + (np.median(img, axis=(0, 1)) - img) * np.clip(mask, 0.0, 1.0)
        c = c + np.array(pad[:2], dtype=np.float64)

    # Gaussian anti-aliasing: source pixels already integrate a unit box
    # (variance 1/12); top it up to one output pixel's box variance so the
    # footprint is independent of source scale and r = 1 is a no-op
    ratio = qsize / output_size
    if ratio > 1:
        sigma = np.sqrt((ratio ** 2 - 1) / 12)
        img = scipy.ndimage.gaussian_filter(img, [sigma, sigma, 0], mode='nearest')

    # output pixel j samples the source at tl + (j + 0.5) / S * (2 * axis)
    tl = c - x - y
    t = (np.arange(output_size, dtype=np.float64) + 0.5) / output_size
    src_x = tl[0] + t[None, :] * 2 * x[0] + t[:, None] * 2 * y[0]
    src_y = tl[1] + t[None, :] * 2 * x[1] + t[:, None] * 2 * y[1]
    out = np.stack([scipy.ndimage.map_coordinates(img[..., ch], [src_y, src_x], order=3, mode='nearest')
                    for ch in range(img.shape[2])])
    return torch.from_numpy(out.astype(np.float32))


def canonical_anchor_positions(lm: FaceLandmarks, output_size: int):
    """Where align_crop places each anchor (pixel-index coordinates)."""
    c, x, y = ffhq_quad(lm)
    tl = c - x - y
    side = np.hypot(*x) * 2
    ux, uy = x / np.hypot(*x), y / np.hypot(*y)
    out = {}
    for name, p in lm.anchors().items():
        d = p - tl
        out[name] = np.array([d @ ux, d @ uy]) / side * output_size - 0.5
    return out


# Statistics -------------------------------------------------------------------


def dataset_stats(images) -> dict:
    """Counts, resolution histogram, mean image and per-channel mean/variance.

    ``images`` is an iterable of ``[3,H,W]`` tensors. Moments are population
    moments over all pixels, accumulated in float64.
    """
    count = 0
    hist = Counter()
    ch_sum = np.zeros(3)
    ch_sq = np.zeros(3)
    n_pix = 0
    mean_acc = None
    uniform = True
    for img in images:
        arr = img.detach().cpu().double().numpy()
        count += 1
        hist[f'{arr.shape[1]}x{arr.shape[2]}'] += 1
        ch_sum += arr.sum(axis=(1, 2))
        ch_sq += np.square(arr).sum(axis=(1, 2))
        n_pix += arr.shape[1] * arr.shape[2]
        if mean_acc is None:
            mean_acc = arr.copy()
        elif uniform and mean_acc.shape == arr.shape:
            mean_acc += arr
        else:
            uniform = False
    if count == 0:
        return {'count': 0, 'resolutions': {}, 'mean_image': None, 'channel_mean': None, 'channel_var': None}
    channel_mean = ch_sum / n_pix
    return {
        'count': count,
        'resolutions': dict(hist),
        'mean_image': torch.from_numpy(mean_acc / count) if uniform else None,
        'channel_mean': channel_mean,
        'channel_var': ch_sq / n_pix - channel_mean ** 2,
    }
