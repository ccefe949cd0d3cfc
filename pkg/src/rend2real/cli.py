"""``rend2real`` command suite.

Every command is a thin adapter over one library operation. Settings resolve as
command-line flag > ``--config`` file > built-in default, and the resolved
configuration is written next to the outputs. Failures print a JSON envelope
``{"code", "message", "context"}`` on stderr and exit with a distinct status.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import config as config_mod
from .config import ConfigError

logger = logging.getLogger('rend2real')

EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_RUNTIME = 5


class SelftestFailed(RuntimeError):
    pass


def _flags(**kwargs):
    return {k: v for k, v in kwargs.items() if v is not None}


def _images_in(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f'image directory not found: {directory}')
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in ('.png', '.jpg', '.jpeg'))


def _load_generator_like(path, which='rendering'):
    """A generator from a pair checkpoint (``which`` selects the half) or a single-generator file."""
    from .generators import load_generator, load_pair
    from .serialization import read_arrays
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f'checkpoint not found: {path}')
    _, meta = read_arrays(path)
    if meta.get('kind') == 'pair':
        pair = load_pair(path)
        return pair.g_rendering if which == 'rendering' else pair.g_real
    return load_generator(path)


def _inversion_config(cfg):
    from .inversion import InversionConfig
    c = cfg['inversion']
    return InversionConfig(steps=c['steps'], lambda_noise=c['lambda_noise'], lr_base=c['lr'], seed=c['seed'],
                           w_avg_samples=c['w_avg_samples'], perceptual_backend=c['perceptual_backend'])


@click.group()
@click.option('-v', '--verbose', count=True, help='Increase log verbosity (logs go to stderr).')
def cli(verbose):
    """Rendering-to-realistic portrait tools."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format='%(levelname)s %(name)s: %(message)s')


# dataset ----------------------------------------------------------------------


@cli.group()
def dataset():
    """Manifest download, alignment, filtering and statistics."""


@dataset.command('fetch')
@click.option('--manifest', required=True, type=click.Path(path_type=Path))
@click.option('--out', 'out_dir', required=True, type=click.Path(path_type=Path))
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
@click.option('--jobs', type=int, help='Concurrent downloads.')
@click.option('--max-attempts', type=int)
@click.option('--timeout', type=float)
def dataset_fetch(manifest, out_dir, config_path, jobs, max_attempts, timeout):
    """Download pending manifest records (idempotent)."""
    from .dataset import Manifest, RetryPolicy, fetch
    cfg = config_mod.resolve(config_path, 'dataset', _flags(max_attempts=max_attempts, timeout=timeout))
    if jobs is not None:
        cfg['runtime']['jobs'] = jobs
    if not manifest.exists():
        raise FileNotFoundError(f'manifest not found: {manifest}')
    m = Manifest.load(manifest)
    d = cfg['dataset']
    policy = RetryPolicy(max_attempts=d['max_attempts'], backoff=d['backoff'], timeout=d['timeout'])
    fetch(m, out_dir, policy, jobs=cfg['runtime']['jobs'])
    m.save(manifest)
    config_mod.write_resolved(cfg, out_dir)
    click.echo(json.dumps(dict(m.counts()), sort_keys=True))


@dataset.command('align')
@click.option('--raw', 'raw_dir', required=True, type=click.Path(path_type=Path))
@click.option('--landmarks', required=True, type=click.Path(path_type=Path),
              help='JSON object: image stem -> 68 [x, y] points.')
@click.option('--out', 'out_dir', required=True, type=click.Path(path_type=Path))
@click.option('--size', 'output_size', type=int, help='Output side length (default 1024).')
@click.option('--manifest', type=click.Path(path_type=Path), help='Mark aligned records in this manifest.')
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
def dataset_align(raw_dir, landmarks, out_dir, output_size, manifest, config_path):
    """Align and crop raw images with precomputed landmarks."""
    from .dataset import FaceLandmarks, Manifest, align_crop
    from .imaging import load_image, save_image
    cfg = config_mod.resolve(config_path, 'dataset', _flags(output_size=output_size))
    if not landmarks.exists():
        raise FileNotFoundError(f'landmarks file not found: {landmarks}')
    points = json.loads(landmarks.read_text(encoding='utf-8'))
    m = Manifest.load(manifest) if manifest else None
    out_dir.mkdir(parents=True, exist_ok=True)
    done = 0
    for path in _images_in(raw_dir):
        if path.stem not in points:
            logger.warning('no landmarks for %s; skipped', path.name)
            continue
        img = align_crop(load_image(path), FaceLandmarks(np.asarray(points[path.stem], dtype=np.float64)),
                         cfg['dataset']['output_size'])
        save_image(img.clamp(-1, 1), out_dir / f'{path.stem}.png')
        done += 1
        if m is not None and path.stem in m.records and m[path.stem].status == 'fetched':
            m.transition(path.stem, 'aligned', 'align_crop')
    if m is not None:
        m.save(manifest)
    config_mod.write_resolved(cfg, out_dir)
    click.echo(json.dumps({'aligned': done}))


@dataset.command('filter')
@click.option('--manifest', required=True, type=click.Path(path_type=Path))
@click.option('--filterlist', required=True, type=click.Path(path_type=Path), help='One id per line.')
def dataset_filter(manifest, filterlist):
    """Mark listed ids as filtered_out."""
    from .dataset import Manifest, apply_filterlist
    for p in (manifest, filterlist):
        if not p.exists():
            raise FileNotFoundError(f'not found: {p}')
    m = apply_filterlist(Manifest.load(manifest), filterlist.read_text(encoding='utf-8').splitlines())
    m.save(manifest)
    click.echo(json.dumps(dict(m.counts()), sort_keys=True))


@dataset.command('stats')
@click.option('--dir', 'image_dir', required=True, type=click.Path(path_type=Path))
@click.option('--out', 'out_path', type=click.Path(path_type=Path), help='Write the report as JSON.')
def dataset_stats_cmd(image_dir, out_path):
    """Counts, resolution histogram and per-channel moments of an image folder."""
    from .dataset import dataset_stats
    from .imaging import load_image, save_image
    stats = dataset_stats(load_image(p) for p in _images_in(image_dir))
    report = {'count': stats['count'], 'resolutions': stats['resolutions'],
              'channel_mean': None if stats['channel_mean'] is None else stats['channel_mean'].tolist(),
              'channel_var': None if stats['channel_var'] is None else stats['channel_var'].tolist()}
    if out_path:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(report, indent=2), encoding='utf-8')
        if stats['mean_image'] is not None:
            save_image(stats['mean_image'].float().clamp(-1, 1), out_path.with_suffix('.mean.png'))
    click.echo(json.dumps(report))


# finetune ---------------------------------------------------------------------


@cli.command()
@click.option('--data', 'data_dir', required=True, type=click.Path(path_type=Path),
              help='Folder of aligned rendering-style images at the generator resolution.')
@click.option('--out', 'out_dir', required=True, type=click.Path(path_type=Path))
@click.option('--base', help="Generator checkpoint to start from, or 'toy'.")
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
@click.option('--kimg', type=float, help='Stop after this many thousand reals (default 40).')
@click.option('--batch-size', type=int)
@click.option('--lambda-sketch', type=float)
@click.option('--lambda-color', type=float)
@click.option('--seed', type=int)
@click.option('--xflip/--no-xflip', default=None)
@click.option('--ada/--no-ada', default=None)
@click.option('--checkpoint-kimg', type=float)
def finetune(data_dir, out_dir, base, config_path, kimg, batch_size, lambda_sketch, lambda_color, seed,
             xflip, ada, checkpoint_kimg):
    """Fine-tune g_rendering from g_real with the identity losses."""
    from .finetune import Discriminator, FinetuneConfig, finetune as run_finetune
    from .generators import GeneratorConfig, clone_for_finetune, load_generator, save_pair, toy_generator
    from .imaging import BlurSpec, load_image
    from .losses import LossWeights
    cfg = config_mod.resolve(config_path, 'finetune', _flags(
        kimg=kimg, batch_size=batch_size, lambda_sketch=lambda_sketch, lambda_color=lambda_color, seed=seed,
        xflip=xflip, ada=ada, checkpoint_kimg=checkpoint_kimg))
    if base is not None:
        cfg['generator']['base'] = base
    gcfg = cfg['generator']
    if gcfg['base'] == 'toy':
        g_real = toy_generator(GeneratorConfig(resolution=gcfg['resolution']), seed=gcfg['toy_seed'])
    else:
        if not Path(gcfg['base']).exists():
            raise FileNotFoundError(f'base checkpoint not found: {gcfg["base"]}')
        g_real = load_generator(gcfg['base'])
    paths = _images_in(data_dir)
    if not paths:
        raise FileNotFoundError(f'no images in {data_dir}')
    data = torch.stack([load_image(p) for p in paths])
    f = cfg['finetune']
    ft_cfg = FinetuneConfig(
        batch_size=f['batch_size'], generator_lr=f['generator_lr'], discriminator_lr=f['discriminator_lr'],
        r1_gamma=f['r1_gamma'], kimg_budget=f['kimg'], xflip=f['xflip'], ada=f['ada'], seed=f['seed'],
        loss_weights=LossWeights(f['lambda_sketch'], f['lambda_color']),
        blur=BlurSpec(f['blur_kernel'], f['blur_sigma']), checkpoint_kimg=f['checkpoint_kimg'],
        sketch_backend=f['sketch_backend'], sketch_weights=f['sketch_weights'],
        perceptual_backend=f['perceptual_backend'])
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.write_resolved(cfg, out_dir)
    pair = clone_for_finetune(g_real)
    d = Discriminator(g_real.resolution, seed=f['seed'])
    pair, state, _ = run_finetune(pair, d, data, ft_cfg, log_path=out_dir / 'log.jsonl',
                                  checkpoint_dir=out_dir / 'checkpoints')
    save_pair(pair, out_dir / 'pair.r2r', discriminator=d, extra_meta={'reals_seen': state.reals_seen})
    click.echo(json.dumps({'steps': state.step, 'reals_seen': state.reals_seen,
                           'checkpoint': str(out_dir / 'pair.r2r')}))


# inversion / inference --------------------------------------------------------


def _inversion_flags(steps, lambda_noise, seed):
    return _flags(steps=steps, lambda_noise=lambda_noise, seed=seed)


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(path_type=Path))
@click.option('--input', 'input_path', required=True, type=click.Path(path_type=Path))
@click.option('--out', 'out_dir', required=True, type=click.Path(path_type=Path))
@click.option('--generator', 'which', type=click.Choice(['rendering', 'real']), default='rendering',
              show_default=True, help='Half of a pair checkpoint to invert into.')
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
@click.option('--steps', type=int)
@click.option('--lambda-noise', type=float)
@click.option('--seed', type=int)
def invert(checkpoint, input_path, out_dir, which, config_path, steps, lambda_noise, seed):
    """Project one image into W+ of a generator."""
    from .generators import synthesize
    from .imaging import load_image, save_image
    from .inversion import invert as run_invert, save_latent, save_noise, save_trace
    cfg = config_mod.resolve(config_path, 'inversion', _inversion_flags(steps, lambda_noise, seed))
    g = _load_generator_like(checkpoint, which)
    x = load_image(input_path)
    result = run_invert(g, x, _inversion_config(cfg))
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = input_path.stem
    save_latent(out_dir / f'{stem}_wplus.r2r', result.wplus_star, {'source': str(input_path)})
    save_noise(out_dir / f'{stem}_noise.r2r', result.noise_star)
    save_trace(out_dir / f'{stem}_trace.csv', result)
    with torch.no_grad():
        save_image(synthesize(g, result.wplus_star, result.noise_star).clamp(-1, 1), out_dir / f'{stem}_recon.png')
    config_mod.write_resolved(cfg, out_dir)
    click.echo(json.dumps({'initial_perceptual': result.initial_perceptual,
                           'final_perceptual': result.final_perceptual}))


@cli.command()
@click.option('--checkpoint', required=True, type=click.Path(path_type=Path), help='Fine-tuned pair checkpoint.')
@click.argument('inputs', nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option('--out', 'out_dir', required=True, type=click.Path(path_type=Path))
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
@click.option('--steps', type=int)
@click.option('--lambda-noise', type=float)
@click.option('--seed', type=int)
@click.option('--zero-noise/--fresh-noise', default=None, help='Decode with zero or fresh seeded noise.')
def realify(checkpoint, inputs, out_dir, config_path, steps, lambda_noise, seed, zero_noise):
    """Invert rendered portraits on g_rendering and decode them with g_real."""
    from .generators import load_pair
    from .inference import batch_realify
    flags = _inversion_flags(steps, lambda_noise, seed)
    if zero_noise is not None:
        flags['zero_noise'] = zero_noise
    cfg = config_mod.resolve(config_path, 'inversion', flags)
    if not checkpoint.exists():
        raise FileNotFoundError(f'checkpoint not found: {checkpoint}')
    for p in inputs:
        if not p.exists():
            raise FileNotFoundError(f'input not found: {p}')
    pair = load_pair(checkpoint)
    report = batch_realify(pair, inputs, out_dir, _inversion_config(cfg), zero_noise=cfg['inversion']['zero_noise'])
    report.write_csv(out_dir / 'report.csv')
    config_mod.write_resolved(cfg, out_dir)
    click.echo(json.dumps({'ok': len(report) - len(report.failures), 'failed': len(report.failures)}))
    if report.failures:
        raise RuntimeError(f'{len(report.failures)} of {len(report)} inputs failed; see {out_dir / "report.csv"}')


# compositing ------------------------------------------------------------------


def _parse_placement(text):
    if text is None:
        return None
    try:
        top, left, height, width = (int(v) for v in text.split(','))
    except ValueError:
        raise click.BadParameter('expected TOP,LEFT,HEIGHT,WIDTH', param_hint='--placement')
    return top, left, height, width


@cli.command()
@click.option('--original', required=True, type=click.Path(path_type=Path), help='Rendered image x.')
@click.option('--realified', required=True, type=click.Path(path_type=Path), help='Realistic portrait x_res.')
@click.option('--out', 'out_path', required=True, type=click.Path(path_type=Path))
@click.option('--placement', help='TOP,LEFT,HEIGHT,WIDTH of x_res inside x (default: whole image).')
@click.option('--parser', type=click.Choice(['palette', 'fixture', 'external']))
@click.option('--mask-dir', type=click.Path(path_type=Path), help='Mask folder for the fixture parser.')
@click.option('--classes', help='Comma-separated face classes forming the mask.')
@click.option('--erode', 'erode_radius', type=int)
@click.option('--blur-kernel', type=int)
@click.option('--blur-sigma', type=float)
@click.option('--config', 'config_path', type=click.Path(path_type=Path))
def composite(original, realified, out_path, placement, parser, mask_dir, classes, erode_radius, blur_kernel,
              blur_sigma, config_path):
    """Blend x_res into x through an eroded, blurred face-parsing mask."""
    from .compositing import (ExternalParser, FixtureParser, PaletteParser, Placement, combine_mask,
                              composite as blend, default_soften_params, paste_back, parse_face, soften)
    from .imaging import BlurSpec, load_image, save_image, save_mask
    cfg = config_mod.resolve(config_path, 'composite', _flags(
        parser=parser, mask_dir=str(mask_dir) if mask_dir else None,
        classes=classes.split(',') if classes else None, erode_radius=erode_radius,
        blur_kernel=blur_kernel, blur_sigma=blur_sigma))
    c = cfg['composite']
    x = load_image(original)
    x_res = load_image(realified)
    if c['parser'] == 'palette':
        face_parser = PaletteParser()
    elif c['parser'] == 'fixture':
        if not c['mask_dir']:
            raise ConfigError('the fixture parser needs composite.mask_dir / --mask-dir')
        face_parser = FixtureParser(Path(c['mask_dir']))
    else:
        face_parser = ExternalParser(c['parser_weights'], c.get('parser_class_index'))
    m = combine_mask(parse_face(x_res, face_parser), c['classes'])
    box = _parse_placement(placement) or (0, 0, x.shape[1], x.shape[2])
    x_res_p, m_p = paste_back(x, x_res, Placement(*box), m)
    radius, blur = default_soften_params(x.shape[-1])
    if c['erode_radius'] is not None:
        radius = c['erode_radius']
    if c['blur_kernel'] is not None or c['blur_sigma'] is not None:
        blur = BlurSpec(c['blur_kernel'] or blur.kernel_size, c['blur_sigma'] or blur.sigma)
    m_hat = soften(m_p, radius, blur)
    out = blend(x, x_res_p, m_hat)
    save_image(out.clamp(-1, 1), out_path)
    save_mask(m_hat, out_path.with_name(out_path.stem + '_mask.png'))
    config_mod.write_resolved(cfg, out_path.parent, out_path.stem + '_config.yaml')
    click.echo(json.dumps({'output': str(out_path), 'mask_coverage': float(m_hat.mean())}))


# evaluation -------------------------------------------------------------------


@cli.group()
def evaluate():
    """FID, identity similarity and reconstruction metrics between two image folders."""


def _eval_common(fn):
    fn = click.option('--set-a', required=True, type=click.Path(path_type=Path))(fn)
    fn = click.option('--set-b', required=True, type=click.Path(path_type=Path))(fn)
    fn = click.option('--backend', type=click.Choice(['toy', 'pretrained']))(fn)
    fn = click.option('--weights', type=click.Path(path_type=Path), help='TorchScript embedder weights.')(fn)
    fn = click.option('--out', 'out_path', required=True, type=click.Path(path_type=Path))(fn)
    fn = click.option('--config', 'config_path', type=click.Path(path_type=Path))(fn)
    return fn


def _paired(set_a, set_b):
    a, b = _images_in(set_a), _images_in(set_b)
    if len(a) != len(b) or not a:
        raise ValueError(f'paired metrics need equally sized, nonempty folders ({len(a)} vs {len(b)})')
    return list(zip(a, b))


def _write_rows(path, rows, summary):
    import csv
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = sorted({k for r in rows for k in r}) if rows else []
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    path.with_suffix('.summary.json').write_text(json.dumps(summary, indent=2), encoding='utf-8')
    click.echo(json.dumps(summary))


@evaluate.command('fid')
@_eval_common
def evaluate_fid(set_a, set_b, backend, weights, out_path, config_path):
    """Frechet distance between the embedding statistics of two folders."""
    from .evaluation import cached_feature_stats, feature_stats, frechet_distance, make_embedder
    from .imaging import load_image
    cfg = config_mod.resolve(config_path, 'evaluate', _flags(backend=backend, embedder_weights=weights))
    e = cfg['evaluate']
    embedder = make_embedder(e['backend'], e['embedder_weights'])
    stats = []
    for d in (set_a, set_b):
        paths = _images_in(d)
        if e['cache_dir']:
            stats.append(cached_feature_stats(paths, embedder, e['cache_dir'], load_image))
        else:
            stats.append(feature_stats([load_image(p) for p in paths], embedder))
    fid = frechet_distance(*stats)
    config_mod.write_resolved(cfg, out_path.parent, out_path.stem + '_config.yaml')
    _write_rows(out_path, [{'set': str(d), 'n': s.n} for d, s in zip((set_a, set_b), stats)],
                {'fid': fid, 'backend': embedder.name})


@evaluate.command('idsim')
@_eval_common
def evaluate_idsim(set_a, set_b, backend, weights, out_path, config_path):
    """Mean cosine identity similarity of paired images (sorted by name)."""
    from .evaluation import identity_similarity, make_embedder
    from .imaging import load_image
    cfg = config_mod.resolve(config_path, 'evaluate', _flags(backend=backend, embedder_weights=weights))
    embedder = make_embedder(cfg['evaluate']['backend'], cfg['evaluate']['embedder_weights'])
    rows = [{'a': a.name, 'b': b.name, 'identity_similarity': identity_similarity(load_image(a), load_image(b), embedder)}
            for a, b in _paired(set_a, set_b)]
    config_mod.write_resolved(cfg, out_path.parent, out_path.stem + '_config.yaml')
    _write_rows(out_path, rows, {'identity_similarity_mean': float(np.mean([r['identity_similarity'] for r in rows])),
                                 'backend': embedder.name})


@evaluate.command('recon')
@_eval_common
def evaluate_recon(set_a, set_b, backend, weights, out_path, config_path):
    """Mean perceptual distance and per-pixel squared error of paired images."""
    from .evaluation import reconstruction_metrics
    from .imaging import load_image
    cfg = config_mod.resolve(config_path, 'evaluate', _flags(backend=backend, embedder_weights=weights))
    pairs = _paired(set_a, set_b)
    report = reconstruction_metrics([(load_image(a), load_image(b)) for a, b in pairs])
    rows = [{'a': a.name, 'b': b.name, 'lpips': r['lpips'], 'l2': r['l2']} for (a, b), r in zip(pairs, report.rows)]
    config_mod.write_resolved(cfg, out_path.parent, out_path.stem + '_config.yaml')
    _write_rows(out_path, rows, {'lpips_mean': report.lpips_mean, 'l2_mean': report.l2_mean})


# selftest ---------------------------------------------------------------------


@cli.command()
@click.option('--only', help='Comma-separated criterion numbers to run (default: all).')
@click.option('--workdir', type=click.Path(path_type=Path), help='Keep end-to-end artifacts here.')
def selftest(only, workdir):
    """Run the toy-scale acceptance suite."""
    from . import acceptance
    wanted = {int(v) for v in only.split(',')} if only else None
    if workdir is not None:
        acceptance.E2E_WORKDIR = workdir
    results = acceptance.run_all(wanted, echo=click.echo)
    failed = [r.number for r in results if not r.passed]
    click.echo(f'{len(results) - len(failed)}/{len(results)} criteria passed')
    if failed:
        raise SelftestFailed(f'criteria failed: {failed}')


# entry point ------------------------------------------------------------------


def _classify(exc):
    from .compositing import ParserUnavailable
    from .generators import FrozenIntegrityError
    from .imaging import ImageFormatError
    from .losses import BackendUnavailable
    from .serialization import ContainerError
    if isinstance(exc, click.exceptions.UsageError):
        return EXIT_USAGE, 'usage'
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG, 'config'
    if isinstance(exc, (ImageFormatError, ContainerError)):
        return EXIT_MISSING, 'bad_input'
    if isinstance(exc, (FileNotFoundError, BackendUnavailable, ParserUnavailable)):
        return EXIT_MISSING, 'missing_input'
    if isinstance(exc, SelftestFailed):
        return EXIT_SELFTEST_FAILED, 'selftest_failed'
    if isinstance(exc, FrozenIntegrityError):
        return EXIT_RUNTIME, 'integrity'
    return EXIT_RUNTIME, 'runtime'


def main(argv=None):
    try:
        cli.main(args=argv, prog_name='rend2real', standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return EXIT_RUNTIME
    except Exception as exc:
        status, code = _classify(exc)
        envelope = {'code': code, 'message': str(exc) if not isinstance(exc, click.exceptions.UsageError)
                    else exc.format_message(),
                    'context': {'exit_status': status, 'type': type(exc).__name__,
                                'argv': list(sys.argv[1:] if argv is None else argv)}}
        click.echo(json.dumps(envelope), err=True)
        if status == EXIT_RUNTIME:
            logger.debug('traceback', exc_info=True)
        return status
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
