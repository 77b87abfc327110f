"""Task-level quality scores for gating a reconstruction before sending.

Every score is lower-is-better and zero only on perfect agreement, so one
threshold test works across metrics. The patch-feature Frechet distance is a
desk-scale stand-in for learned-feature FID; IoU-style scores are wrapped as
1 - IoU to keep the direction uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import sqrtm_psd, symmetrize
from .scenes import CLASS_LEVELS, extract_edges

PATCH, STRIDE = 8, 4
FEATURE_DIM = 6


class InsufficientDataError(ValueError):
    """Too few patch samples to fit a covariance."""


@dataclass(frozen=True)
class MetricScore:
    value: float
    metric_id: str


def patch_features(image, label_map):
    """6-vector per patch: mean, std, edge density, label-1/2/3 fractions."""
    img = np.asarray(image, dtype=np.float64)
    lab = np.asarray(label_map)
    edges = extract_edges(lab)
    h, w = img.shape
    feats = []
    for y in range(0, h - PATCH + 1, STRIDE):
        for x in range(0, w - PATCH + 1, STRIDE):
            pi = img[y:y + PATCH, x:x + PATCH]
            pl = lab[y:y + PATCH, x:x + PATCH]
            pe = edges[y:y + PATCH, x:x + PATCH]
            feats.append((pi.mean(), pi.std(), pe.mean(),
                          np.mean(pl == 1), np.mean(pl == 2), np.mean(pl == 3)))
    return np.asarray(feats, dtype=np.float64)


def _fit_gaussian(samples):
    if samples.shape[0] < 2 * FEATURE_DIM:
        raise InsufficientDataError(
            f"need at least {2 * FEATURE_DIM} patch features, got {samples.shape[0]}")
    mu = samples.mean(axis=0)
    cov = symmetrize(np.cov(samples, rowvar=False)) + 1e-6 * np.eye(samples.shape[1])
    return mu, cov


def frechet_distance_sq(mu_a, cov_a, mu_b, cov_b):
    """Squared Frechet distance between two Gaussians."""
    delta = np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64)
    cov_a = symmetrize(np.asarray(cov_a, dtype=np.float64))
    cov_b = symmetrize(np.asarray(cov_b, dtype=np.float64))
    root_a = sqrtm_psd(cov_a)
    cross = sqrtm_psd(symmetrize(root_a @ cov_b @ root_a))
    d2 = float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(d2, 0.0)


def toy_fid(set_a, set_b):
    """Frechet distance between the patch-feature clouds of two image sets.

    Each set is a list of (image, label_map) pairs; all patches of all items
    are pooled before fitting the Gaussian.
    """
    feats_a = np.vstack([patch_features(img, lab) for img, lab in set_a])
    feats_b = np.vstack([patch_features(img, lab) for img, lab in set_b])
    mu_a, cov_a = _fit_gaussian(feats_a)
    mu_b, cov_b = _fit_gaussian(feats_b)
    return MetricScore(frechet_distance_sq(mu_a, cov_a, mu_b, cov_b), "toy_fid")


def edge_iou(a, b):
    """1 - IoU of two binary edge maps; 0 when both are empty."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return MetricScore(0.0, "edge_iou")
    inter = np.count_nonzero(a & b)
    return MetricScore(1.0 - inter / union, "edge_iou")


def segment_by_levels(image):
    """Nearest-class-level segmentation of an intensity image."""
    img = np.asarray(image, dtype=np.float64)
    levels = np.asarray(CLASS_LEVELS, dtype=np.float64)
    return np.abs(img[..., None] - levels).argmin(axis=-1).astype(np.uint8)


def downstream_miou(image_hat, truth_labels):
    """1 - mean IoU of the reconstructed image's segmentation against truth.

    Only classes present in truth_labels enter the mean; asymmetric on purpose.
    """
    pred = segment_by_levels(image_hat)
    truth = np.asarray(truth_labels)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    ious = []
    for c in np.unique(truth):
        inter = np.count_nonzero((pred == c) & (truth == c))
        union = np.count_nonzero((pred == c) | (truth == c))
        ious.append(inter / union)
    return MetricScore(1.0 - float(np.mean(ious)), "downstream_miou")


def rmse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return MetricScore(float(np.sqrt(np.mean((a - b) ** 2))), "rmse")


def feedback_metric(metric_id):
    """Callable (candidate image, scene) -> MetricScore for the given metric."""
    if metric_id == "rmse":
        return lambda cand, scene: rmse(cand, scene.image)
    if metric_id == "edge_iou":
        return lambda cand, scene: edge_iou(
            extract_edges(segment_by_levels(cand)), extract_edges(scene.label_map))
    if metric_id == "downstream_miou":
        return lambda cand, scene: downstream_miou(cand, scene.label_map)
    if metric_id == "toy_fid":
        return lambda cand, scene: toy_fid(
            [(cand, segment_by_levels(cand))], [(scene.image, scene.label_map)])
    raise ValueError(f"unknown metric {metric_id!r}")
