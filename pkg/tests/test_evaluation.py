import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from rend2real.evaluation import (FeatureStats, ToyEmbedder, TorchScriptEmbedder, cached_feature_stats,
                                  feature_stats, frechet_distance, identity_similarity, make_embedder,
                                  reconstruction_metrics, stats_from_features)
from rend2real.imaging import load_image, save_image
from rend2real.losses import BackendUnavailable, perceptual_distance, toy_backbone


def test_diagonal_closed_form():
    # |mu1 - mu2|^2 + sum (sqrt(s1) - sqrt(s2))^2 = 1 + 2 * (1 - 2)^2 = 3
    a = FeatureStats(np.zeros(2), np.eye(2), 10)
    b = FeatureStats(np.array([1.0, 0.0]), 4 * np.eye(2), 10)
    assert frechet_distance(a, b) == pytest.approx(3.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 5), min_size=3, max_size=3), st.lists(st.floats(0.01, 5), min_size=3, max_size=3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_diagonal_closed_form_general(s1, s2, mu):
    a = FeatureStats(np.zeros(3), np.diag(s1), 5)
    b = FeatureStats(np.array(mu), np.diag(s2), 5)
    ref = sum(m ** 2 for m in mu) + sum((np.sqrt(x) - np.sqrt(y)) ** 2 for x, y in zip(s1, s2))
    assert frechet_distance(a, b) == pytest.approx(ref, abs=1e-8)


def test_commuting_full_covariances_match_scipy_sqrtm():
    from scipy.linalg import sqrtm
    rng = np.random.default_rng(0)
    fa, fb = rng.normal(size=(50, 4)), rng.normal(size=(60, 4)) * 1.5 + 0.3
    a, b = stats_from_features(fa), stats_from_features(fb)
    covmean = sqrtm(a.covariance @ b.covariance).real
    ref = np.sum((a.mean - b.mean) ** 2) + np.trace(a.covariance + b.covariance - 2 * covmean)
    assert frechet_distance(a, b) == pytest.approx(ref, rel=1e-8)


def test_fid_symmetric_and_self_zero():
    rng = np.random.default_rng(1)
    a = stats_from_features(rng.normal(size=(40, 6)))
    b = stats_from_features(rng.normal(size=(40, 6)) + 0.5)
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)
    assert abs(frechet_distance(a, a)) <= 1e-8
    assert frechet_distance(a, b) > 0


def test_fid_errors():
    a = FeatureStats(np.zeros(2), np.eye(2), 3)
    with pytest.raises(ValueError):
        frechet_distance(a, FeatureStats(np.zeros(3), np.eye(3), 3))
    bad = FeatureStats(np.zeros(2), np.diag([1.0, -1.0]), 3)
    with pytest.raises(ArithmeticError):
        frechet_distance(bad, a)


def test_textbook_mean_and_covariance():
    feats = np.array([[1.0, 2.0], [3.0, 0.0], [5.0, 4.0]])
    s = stats_from_features(feats)
    np.testing.assert_allclose(s.mean, [3.0, 2.0], atol=1e-9)
    # unbiased: sum of outer products of deviations / (n - 1)
    np.testing.assert_allclose(s.covariance, [[4.0, 2.0], [2.0, 4.0]], atol=1e-9)


def test_stats_need_two_samples():
    with pytest.raises(ValueError):
        stats_from_features(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        feature_stats([torch.zeros(3, 16, 16)], ToyEmbedder())


def test_feature_stats_order_invariant_and_identical_images():
    gen = torch.Generator().manual_seed(0)
    imgs = [torch.rand(3, 16, 16, generator=gen) * 2 - 1 for _ in range(5)]
    e = ToyEmbedder()
    a = feature_stats(imgs, e, batch_size=2)
    b = feature_stats(imgs[::-1], e)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)
    np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-12)
    same = feature_stats([imgs[0]] * 4, e)
    assert np.abs(same.covariance).max() == 0


def test_toy_embedder_deterministic_and_resizes():
    x = torch.rand(2, 3, 32, 32)
    assert np.array_equal(ToyEmbedder(seed=3)(x), ToyEmbedder(seed=3)(x))
    assert ToyEmbedder()(x[0]).shape == (1, 64)
    assert ToyEmbedder()(torch.rand(3, 24, 24)).shape == (1, 64)


def test_identity_similarity_contracts():
    gen = torch.Generator().manual_seed(2)
    a = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    b = torch.rand(3, 16, 16, generator=gen) * 2 - 1
    e = ToyEmbedder()
    assert identity_similarity(a, a, e) == pytest.approx(1.0, abs=1e-7)
    assert identity_similarity(a, b, e) == pytest.approx(identity_similarity(b, a, e), abs=1e-7)
    assert -1 <= identity_similarity(a, b, e) <= 1


def test_pretrained_embedder_missing():
    with pytest.raises(BackendUnavailable):
        TorchScriptEmbedder('/nonexistent/embed.pt')
    with pytest.raises(ValueError):
        make_embedder('nope')


def test_reconstruction_two_by_two_brute_force():
    a = torch.tensor([[[0.0, 1.0], [0.5, -1.0]]]).repeat(3, 1, 1)
    b = torch.tensor([[[0.5, 1.0], [0.0, 0.0]]]).repeat(3, 1, 1)
    report = reconstruction_metrics([(a, b)], toy_backbone(widths=(4,)))
    # squared errors 0.25, 0, 0.25, 1 per channel -> mean 1.5 / 4
    assert report.l2_mean == pytest.approx(1.5 / 4, abs=1e-9)


def test_reconstruction_identical_and_reconciles():
    gen = torch.Generator().manual_seed(3)
    imgs = [torch.rand(3, 16, 16, generator=gen) for _ in range(4)]
    zero = reconstruction_metrics([(x, x) for x in imgs])
    assert zero.lpips_mean == 0 and zero.l2_mean == 0
    bb = toy_backbone()
    pairs = list(zip(imgs[:2], imgs[2:]))
    report = reconstruction_metrics(pairs, bb)
    assert report.lpips_mean == pytest.approx(np.mean([r['lpips'] for r in report.rows]), abs=1e-9)
    assert report.l2_mean == pytest.approx(np.mean([r['l2'] for r in report.rows]), abs=1e-9)
    assert report.rows[0]['lpips'] == pytest.approx(float(perceptual_distance(*pairs[0], bb)), rel=1e-6)


def test_reconstruction_errors():
    with pytest.raises(ValueError):
        reconstruction_metrics([])
    with pytest.raises(ValueError):
        reconstruction_metrics([(torch.zeros(3, 4, 4), torch.zeros(3, 8, 8))])


def test_feature_stats_cache(tmp_path):
    gen = torch.Generator().manual_seed(4)
    for i in range(3):
        save_image(torch.rand(3, 16, 16, generator=gen) * 2 - 1, tmp_path / 'imgs' / f'{i}.png')
    paths = sorted((tmp_path / 'imgs').iterdir())
    e = ToyEmbedder()
    first = cached_feature_stats(paths, e, tmp_path / 'cache', load_image)
    assert len(list((tmp_path / 'cache').iterdir())) == 1
    second = cached_feature_stats(paths, e, tmp_path / 'cache', load_image)
    np.testing.assert_array_equal(first.covariance, second.covariance)
    assert second.backend == e.name and second.n == 3
