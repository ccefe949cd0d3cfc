"""Self-describing array container used for checkpoints and latent files.

Layout (version 1)::

    bytes 0..7    magic  b'R2RARR01'
    bytes 8..15   little-endian uint64 header length H
    bytes 16..    UTF-8 JSON header of length H:
                    {"version": 1, "meta": {...},
                     "arrays": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload       concatenated little-endian float32 arrays; offsets are
                  relative to the start of the payload

Writes go to a temporary sibling file that is renamed into place, so readers
never observe a partially written container.
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b'R2RARR01'
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def write_arrays(path, arrays, meta=None):
    """Writes a mapping of name -> array (anything ``np.asarray`` accepts)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    payloads = []
    offset = 0
    for name, value in arrays.items():
        if hasattr(value, 'detach'):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(value, dtype='<f4')
        data = arr.tobytes()
        entries.append({'name': name, 'shape': list(arr.shape), 'offset': offset, 'nbytes': len(data)})
        payloads.append(data)
        offset += len(data)
    header = json.dumps({'version': FORMAT_VERSION, 'meta': meta or {}, 'arrays': entries},
                        sort_keys=True).encode('utf-8')
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(MAGIC)
            f.write(struct.pack('<Q', len(header)))
            f.write(header)
            for data in payloads:
                f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_arrays(path):
    """Returns ``(arrays, meta)`` where arrays maps name -> float32 ndarray."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'container not found: {path}')
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ContainerError(f'{path} is not an array container (bad magic)')
    (hlen,) = struct.unpack('<Q', raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f'{path}: corrupt header') from exc
    if header.get('version') != FORMAT_VERSION:
        raise ContainerError(f'{path}: unsupported container version {header.get("version")}')
    base = 16 + hlen
    arrays = {}
    for entry in header['arrays']:
        start = base + entry['offset']
        chunk = raw[start:start + entry['nbytes']]
        if len(chunk) != entry['nbytes']:
            raise ContainerError(f'{path}: truncated payload for {entry["name"]}')
        arrays[entry['name']] = np.frombuffer(chunk, dtype='<f4').reshape(entry['shape']).copy()
    return arrays, header['meta']
