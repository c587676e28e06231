import json

import numpy as np
import pytest
import torch
from skimage.metrics import peak_signal_noise_ratio, structural_similarity
from sklearn.metrics import roc_auc_score

from lipgan.errors import MetricError
from lipgan.evaluation import (
    LandmarkSet, activation_heatmap, evaluate_frames, lmd, lower_half_mass, luminance, normalize_map, psnr,
    roc_auc, ssim, sync_score, sync_score_from_distances, write_rows_csv,
)
from lipgan.model import init_params
from lipgan.training import SyncSample

from conftest import TINY


def _reference_ssim(a, b):
    return structural_similarity(luminance(a), luminance(b), data_range=1.0, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False, win_size=11)


def test_metrics_match_reference_implementations(rng):
    for _ in range(20):
        a = rng.random((48, 40, 3))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.3), a.shape), 0, 1)
        assert abs(psnr(a, b) - peak_signal_noise_ratio(a, b, data_range=1.0)) < 1e-3
        # the reference pads its filtered maps and crops the border; the valid region matches
        assert abs(ssim(a, b) - _reference_ssim(a, b)) < 1e-3


def test_trivial_metric_cases(rng):
    a = rng.random((32, 32, 3))
    assert psnr(a, a) == 100.0
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert psnr(np.zeros((8, 8)), np.ones((8, 8))) == 0.0
    assert lmd(LandmarkSet(np.zeros((20, 2))), LandmarkSet(np.zeros((20, 2)))) == 0.0
    shifted = LandmarkSet(np.ones((20, 2)) * [3.0, 4.0])
    assert lmd(LandmarkSet(np.zeros((20, 2))), shifted) == 5.0
    assert lmd(LandmarkSet(np.zeros((20, 2))), shifted, normalizer=10.0) == 0.5


def test_metric_errors():
    with pytest.raises(MetricError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(MetricError):
        lmd(LandmarkSet(np.zeros((3, 2))), LandmarkSet(np.zeros((4, 2))))
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [True, True])


def test_auc_matches_reference_with_ties(rng):
    for _ in range(20):
        scores = np.round(rng.normal(size=60), 1)
        labels = rng.random(60) > 0.4
        assert roc_auc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


def test_sync_score_from_distances():
    auc, acc = sync_score_from_distances([0.1, 0.2, 1.5, 1.8], [0, 0, 1, 1], threshold=1.0)
    assert auc == 1.0 and acc == 1.0
    auc, _ = sync_score_from_distances([1.5, 1.8, 0.1, 0.2], [0, 0, 1, 1], threshold=1.0)
    assert auc == 0.0


def test_sync_score_runs_discriminator(rng):
    model = init_params(TINY, 0)
    pairs = [SyncSample(rng.random((64, 64, 3)), rng.normal(size=(12, 35, 1)), y) for y in (0, 1, 0, 1)]
    auc, acc = sync_score(model, pairs, threshold=1.0)
    assert 0 <= auc <= 1 and 0 <= acc <= 1
    with pytest.raises(MetricError):
        sync_score(model, pairs[::2], 1.0)


def test_heatmap_normalisation(rng):
    model = init_params(TINY, 0)
    hm = activation_heatmap(model, rng.random((64, 64, 6)), rng.normal(size=(12, 35, 1)))
    assert hm.shape == (64, 64)
    assert hm.min() == 0.0 and hm.max() == 1.0
    batch = activation_heatmap(model, torch.rand(3, 6, 64, 64), torch.randn(3, 1, 12, 35))
    assert batch.shape == (3, 64, 64)
    assert np.all(normalize_map(np.full((4, 4), 2.5)) == 0)


def test_lower_half_mass():
    hm = np.zeros((8, 8))
    hm[4:] = 1.0
    assert lower_half_mass(hm) == 1.0
    assert lower_half_mass(1 - hm) == 0.0


def test_evaluate_frames_report(tmp_path, rng):
    pred = [rng.random((16, 16, 3)) for _ in range(3)]
    report, rows = evaluate_frames(pred, pred, [LandmarkSet(np.zeros((2, 2)))] * 3, [LandmarkSet(np.ones((2, 2)))] * 3,
                                   normalizer=2.0)
    assert report.psnr_db == 100.0 and report.n_frames == 3
    assert report.lmd == pytest.approx(np.sqrt(2))
    assert report.lmd_normalized == pytest.approx(np.sqrt(2) / 2)
    data = json.loads(report.to_json(tmp_path / "r.json").read_text())
    assert data["n_frames"] == 3
    assert write_rows_csv(rows, tmp_path / "rows.csv").read_text().startswith("frame,psnr_db,ssim,lmd")
    with pytest.raises(MetricError):
        evaluate_frames(pred, pred[:2])
