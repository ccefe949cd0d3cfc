"""End-to-end toy pipeline driven through the command line.

Synthetic portraits at random poses are aligned, used to fine-tune a toy
generator pair, realified, composited back and evaluated.
"""

from __future__ import annotations

import contextlib
import io
import json
import time
from pathlib import Path

import numpy as np

from .compositing import PaletteParser
from .imaging import load_image, save_image
from .synthetic import Pose, face_landmarks, render_face

RAW_SIZE = 160
TOY_RES = 64


def make_fixtures(root: Path, n: int = 6, seed: int = 0):
    """Renders ``n`` posed faces into ``root/raw`` and writes ``root/landmarks.json``."""
    rng = np.random.default_rng(seed)
    raw = root / 'raw'
    raw.mkdir(parents=True, exist_ok=True)
    points = {}
    for i in range(n):
        pose = Pose(scale=rng.uniform(34, 44), angle=rng.uniform(-0.3, 0.3),
                    offset=rng.uniform(RAW_SIZE * 0.42, RAW_SIZE * 0.58, size=2))
        img, _ = render_face(RAW_SIZE, pose)
        save_image(img, raw / f'face{i}.png')
        points[f'face{i}'] = face_landmarks(pose).tolist()
    (root / 'landmarks.json').write_text(json.dumps(points), encoding='utf-8')
    return raw, root / 'landmarks.json'


def _run(argv, log):
    from .cli import main
    out, err = io.StringIO(), io.StringIO()
    start = time.perf_counter()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        status = main(argv)
    log.append({'argv': argv, 'status': status, 'seconds': round(time.perf_counter() - start, 2),
                'stdout': out.getvalue().strip(), 'stderr': err.getvalue().strip()})
    if status != 0:
        raise RuntimeError(f'`rend2real {" ".join(argv)}` exited {status}: {err.getvalue().strip()}')
    return out.getvalue()


def run_pipeline(root: Path, kimg: float = 0.25, steps: int = 500, n_realify: int = 2) -> dict:
    """Returns ``{'ok', 'detail', 'log'}``; the command log is also written to ``root/e2e_log.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    log = []
    try:
        raw, landmarks = make_fixtures(root)
        aligned = root / 'aligned'
        _run(['dataset', 'align', '--raw', str(raw), '--landmarks', str(landmarks), '--out', str(aligned),
              '--size', str(TOY_RES)], log)
        _run(['dataset', 'stats', '--dir', str(aligned), '--out', str(root / 'stats.json')], log)
        _run(['finetune', '--data', str(aligned), '--out', str(root / 'ft'), '--base', 'toy',
              '--kimg', str(kimg)], log)
        inputs = sorted(aligned.glob('*.png'))[:n_realify]
        _run(['realify', '--checkpoint', str(root / 'ft' / 'pair.r2r'), *map(str, inputs),
              '--out', str(root / 'real'), '--steps', str(steps)], log)

        # masks for the fixture parser: labels of the aligned render, standing
        # in for a face parser run on the realified portrait
        masks = root / 'masks'
        PaletteParser().parse(load_image(inputs[0])).save(masks)
        comp = root / 'composite' / f'{inputs[0].stem}_final.png'
        _run(['composite', '--original', str(inputs[0]), '--realified',
              str(root / 'real' / f'{inputs[0].stem}_real.png'), '--parser', 'fixture',
              '--mask-dir', str(masks), '--out', str(comp)], log)

        evald = root / 'eval'
        pair_a = root / 'eval_inputs'
        pair_a.mkdir(exist_ok=True)
        for p in inputs:
            save_image(load_image(p), pair_a / p.name)
        real_dir = root / 'real'
        for metric in ('fid', 'idsim', 'recon'):
            _run(['evaluate', metric, '--set-a', str(pair_a), '--set-b', str(real_dir),
                  '--out', str(evald / f'{metric}.csv')], log)
        summary = {m: json.loads((evald / f'{m}.summary.json').read_text()) for m in ('fid', 'idsim', 'recon')}
        expected = [root / 'ft' / 'pair.r2r', root / 'ft' / 'resolved_config.yaml', real_dir / 'report.csv', comp,
                    *(real_dir / f'{p.stem}_real.png' for p in inputs),
                    *(real_dir / f'{p.stem}_wplus.r2r' for p in inputs)]
        missing = [str(p) for p in expected if not p.exists()]
        finite = all(np.isfinite(v) for s in summary.values() for v in s.values() if isinstance(v, float))
        ok = not missing and finite
        detail = (f'{len(log)} commands ok; fid={summary["fid"]["fid"]:.4g}, '
                  f'idsim={summary["idsim"]["identity_similarity_mean"]:.3f}, '
                  f'lpips={summary["recon"]["lpips_mean"]:.3f}, l2={summary["recon"]["l2_mean"]:.4f}'
                  + (f'; missing outputs {missing}' if missing else ''))
    except Exception as exc:  # reported as a failed criterion with the command log
        ok, detail = False, f'{type(exc).__name__}: {exc}'
    (root / 'e2e_log.json').write_text(json.dumps(log, indent=2), encoding='utf-8')
    return {'ok': ok, 'detail': detail, 'log': log}
