"""Image metrics (PSNR, SSIM, LMD), discriminator sync scoring and activation heatmaps."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal, stats

from .errors import MetricError

PSNR_CAP_DB = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


@dataclass
class LandmarkSet:
    points: np.ndarray  # (count, 2) x, y

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    lmd: float | None
    n_frames: int
    lmd_normalized: float | None = None

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; identical inputs give the 100 dB cap."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM on the luminance channel, 11x11 Gaussian window (sigma 1.5), valid region only."""
    a, b = _pair(a, b)
    x, y = luminance(a), luminance(b)
    if min(x.shape) < SSIM_WINDOW:
        raise MetricError(f"images must be at least {SSIM_WINDOW}px on each side")
    w = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(z):
        return signal.convolve2d(z, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def lmd(a, b, normalizer: float | None = None) -> float:
    """Mean Euclidean distance between corresponding landmarks.

    ``a`` and ``b`` are single LandmarkSets or equal-length sequences of them
    (one per frame); per-frame means are averaged over frames.
    """
    seq_a = a if isinstance(a, (list, tuple)) else [a]
    seq_b = b if isinstance(b, (list, tuple)) else [b]
    if len(seq_a) != len(seq_b):
        raise MetricError(f"frame count mismatch: {len(seq_a)} vs {len(seq_b)}")
    per_frame = []
    for la, lb in zip(seq_a, seq_b):
        pa = la.points if isinstance(la, LandmarkSet) else np.asarray(la, dtype=np.float64)
        pb = lb.points if isinstance(lb, LandmarkSet) else np.asarray(lb, dtype=np.float64)
        if pa.shape != pb.shape:
            raise MetricError(f"landmark count mismatch: {pa.shape} vs {pb.shape}")
        per_frame.append(np.mean(np.linalg.norm(pa - pb, axis=1)))
    value = float(np.mean(per_frame))
    return value / normalizer if normalizer else value


def roc_auc(scores, positives) -> float:
    """Area under the ROC curve for ``scores`` ranking ``positives`` high (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos, n_neg = positives.sum(), (~positives).sum()
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC is undefined for single-class input")
    ranks = stats.rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def sync_score_from_distances(d, y, threshold: float):
    """AUC with small distance meaning in sync (label 0), and accuracy of ``d < threshold``."""
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y).astype(int)
    auc = roc_auc(-d, y == 0)
    accuracy = float(np.mean((d < threshold) == (y == 0)))
    return auc, accuracy


def sync_score(params, pairs, threshold: float, batch_size: int = 256):
    """ROC-AUC and thresholded accuracy of the discriminator on labelled (face, audio) pairs."""
    import torch

    from .model import audio_to_tensor, faces_to_tensor

    if len(pairs) == 0:
        raise MetricError("no pairs to score")
    labels = np.array([int(p.y) for p in pairs])
    if len(set(labels.tolist())) < 2:
        raise MetricError("ROC-AUC is undefined for single-class input")
    dtype = next(params.parameters()).dtype
    dists = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            faces = faces_to_tensor(np.stack([np.asarray(p.face) for p in chunk]), dtype)
            audio = audio_to_tensor(np.stack([np.asarray(getattr(p.audio, "values", p.audio)) for p in chunk]), dtype)
            dists.append(params.discriminator(faces, audio).numpy())
    return sync_score_from_distances(np.concatenate(dists), labels, threshold)


def normalize_map(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(m, dtype=np.float64)
    return (m - lo) / (hi - lo)


def activation_heatmap(params, x, a) -> np.ndarray:
    """Mean |activation| of the decoder's penultimate layer, upsampled to H x H and min-max normalised.

    ``x`` is one (H, H, 6) generator input or a batch (B, H, H, 6); the result
    is (H, H) or (B, H, H) accordingly.
    """
    import torch
    import torch.nn.functional as F

    from .model import audio_to_tensor, faces_to_tensor

    dtype = next(params.parameters()).dtype
    xt = faces_to_tensor(x, dtype)
    at = audio_to_tensor(a, dtype)
    with torch.no_grad():
        _, feats = params.generator(xt, at, return_features=True)
        act = feats.abs().mean(dim=1, keepdim=True)
        size = params.cfg.face_size
        if act.shape[-1] != size:
            act = F.interpolate(act, size=(size, size), mode="bilinear", align_corners=False)
    maps = np.stack([normalize_map(m) for m in act[:, 0].double().numpy()])
    return maps[0] if np.asarray(x).ndim == 3 and not isinstance(x, torch.Tensor) else maps


def lower_half_mass(heatmap: np.ndarray) -> float:
    """Mean heatmap value over the lower-half rows."""
    h = heatmap.shape[-2]
    return float(np.mean(heatmap[..., h // 2:, :]))


def evaluate_frames(pred, gt, pred_landmarks=None, gt_landmarks=None, normalizer=None):
    """Aggregate PSNR/SSIM (and LMD when landmarks are given) over paired frames.

    Returns the MetricReport and per-frame rows.
    """
    if len(pred) != len(gt):
        raise MetricError(f"frame count mismatch: {len(pred)} vs {len(gt)}")
    if len(pred) == 0:
        raise MetricError("no frames to evaluate")
    rows = []
    for i, (p, g) in enumerate(zip(pred, gt)):
        row = {"frame": i, "psnr_db": psnr(p, g), "ssim": ssim(p, g)}
        if pred_landmarks is not None:
            row["lmd"] = lmd(pred_landmarks[i], gt_landmarks[i])
        rows.append(row)
    lmd_value = float(np.mean([r["lmd"] for r in rows])) if pred_landmarks is not None else None
    report = MetricReport(
        psnr_db=float(np.mean([r["psnr_db"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        lmd=lmd_value,
        n_frames=len(rows),
        lmd_normalized=(lmd_value / normalizer) if (lmd_value is not None and normalizer) else None,
    )
    return report, rows


def write_rows_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return path
