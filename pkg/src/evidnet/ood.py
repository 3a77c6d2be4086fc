"""Unsupervised ungradability pipeline.

Artificial out-of-distribution copies of a set of images are produced by
zeroing the pixels where each image's own Grad-CAM exceeds a threshold
(default 0.5).  A control variant flips the binarized mask vertically
before occluding, which removes the same number of pixels but spares the
salient region.  The per-sample Dirichlet uncertainty u is the soft
ungradability score; a ROC over (u_ID, u_OOD) calibrates the binary
threshold u*, with decisions ungradable = (u > u*).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .convnet import grad_cam_batch
from .evidential import belief, evidence_from_logits
from .exceptions import ArgumentError, CalibrationDegenerateError, DimensionError

OCCLUDE_CAM = "occlude_cam"
OCCLUDE_FLIPPED_CAM = "occlude_flipped_cam"

HISTOGRAM_BIN_WIDTH = 0.05
MIN_CALIBRATION_IMAGES = 50


@dataclass(frozen=True)
class OcclusionSpec:
    threshold: float = 0.5
    mode: str = OCCLUDE_CAM
    fill: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ArgumentError(
                f"occlusion threshold must be in (0,1), got {self.threshold}"
            )
        if self.mode not in (OCCLUDE_CAM, OCCLUDE_FLIPPED_CAM):
            raise ArgumentError(f"unknown occlusion mode {self.mode!r}")


@dataclass(frozen=True)
class CalibrationResult:
    u_id: np.ndarray
    u_ood: np.ndarray
    roc: metrics.RocAnalysis
    point_at_sensitivity: metrics.OperatingPoint
    point_youden: metrics.OperatingPoint
    u_star: float
    rule: str


@dataclass(frozen=True)
class OodReport:
    g_auc_occluded: float
    g_auc_flipped: float
    kappa: float
    u_star: float
    u_id: np.ndarray
    u_occluded: np.ndarray
    u_flipped: np.ndarray
    decisions: np.ndarray  # over ID then occluded-OOD, via u > u_star
    histogram: np.ndarray  # rows of (bin_lo, bin_hi, count_id, count_ood)


def make_ood(image, saliency, spec=OcclusionSpec()):
    """Zero every channel where the (possibly flipped) binary mask is set."""
    image = np.asarray(image, dtype=np.float64)
    values = saliency.values if hasattr(saliency, "values") else np.asarray(saliency)
    if image.ndim != 3 or values.shape != image.shape[1:]:
        raise DimensionError(
            f"saliency shape {values.shape} does not match image {image.shape[1:]}"
        )
    mask = values > spec.threshold
    if spec.mode == OCCLUDE_FLIPPED_CAM:
        mask = mask[::-1, :]
    out = image.copy()
    out[:, mask] = spec.fill
    return out


def model_uncertainty(model, images):
    logits = model.forward(np.asarray(images, dtype=np.float64))
    return belief(evidence_from_logits(logits)).uncertainty


def occluded_images(model, images, spec, saliency=None):
    """Per-image Grad-CAM (predicted class) occlusion of a stack of images."""
    if saliency is None:
        saliency = grad_cam_batch(model, images)
    return np.stack(
        [make_ood(img, sal, spec) for img, sal in zip(images, saliency)]
    )


def calibrate_from_scores(u_id, u_ood, rule=metrics.AT_SENSITIVITY, target=0.5):
    """Threshold selection shared by calibrate() and tests' sweep oracles."""
    u_id = np.asarray(u_id, dtype=np.float64)
    u_ood = np.asarray(u_ood, dtype=np.float64)
    if np.unique(np.concatenate([u_id, u_ood])).size < 2:
        raise CalibrationDegenerateError(
            "uncertainty is constant across the calibration set"
        )
    analysis = metrics.roc(u_ood, u_id)  # OOD is the positive class
    p_sens = metrics.select_threshold(analysis, metrics.AT_SENSITIVITY, target=target)
    p_youden = metrics.select_threshold(analysis, metrics.YOUDEN)
    chosen = p_sens if rule == metrics.AT_SENSITIVITY else p_youden
    return CalibrationResult(
        u_id=u_id,
        u_ood=u_ood,
        roc=analysis,
        point_at_sensitivity=p_sens,
        point_youden=p_youden,
        u_star=chosen.threshold,
        rule=rule,
    )


def calibrate(model, images, spec=OcclusionSpec(), rule=metrics.AT_SENSITIVITY, target=0.5):
    """Compute u on originals and their occluded copies, then pick u*."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] < MIN_CALIBRATION_IMAGES:
        raise ArgumentError(
            f"calibration needs >= {MIN_CALIBRATION_IMAGES} images, got {images.shape[0]}"
        )
    u_id = model_uncertainty(model, images)
    u_ood = model_uncertainty(model, occluded_images(model, images, spec))
    return calibrate_from_scores(u_id, u_ood, rule=rule, target=target)


def uncertainty_histogram(u_id, u_ood, width=HISTOGRAM_BIN_WIDTH):
    edges = np.arange(0.0, 1.0 + width / 2, width)
    count_id, _ = np.histogram(u_id, bins=edges)
    count_ood, _ = np.histogram(u_ood, bins=edges)
    return np.column_stack([edges[:-1], edges[1:], count_id, count_ood])


def ood_scores(model, images, spec=OcclusionSpec(), saliency=None):
    """u on originals and on both occlusion variants: (u_id, u_occ, u_flip)."""
    images = np.asarray(images, dtype=np.float64)
    if images.shape[0] == 0:
        raise ArgumentError("test set must be non-empty")
    if saliency is None:
        saliency = grad_cam_batch(model, images)
    flipped_spec = OcclusionSpec(
        threshold=spec.threshold, mode=OCCLUDE_FLIPPED_CAM, fill=spec.fill
    )
    u_id = model_uncertainty(model, images)
    u_occ = model_uncertainty(model, occluded_images(model, images, spec, saliency))
    u_flip = model_uncertainty(
        model, occluded_images(model, images, flipped_spec, saliency)
    )
    return u_id, u_occ, u_flip


def report_from_scores(u_id, u_occ, u_flip, u_star):
    g_auc_occ = metrics.roc(u_occ, u_id).auc
    g_auc_flip = metrics.roc(u_flip, u_id).auc
    u_all = np.concatenate([u_id, u_occ])
    truth = np.concatenate([np.zeros(u_id.size, int), np.ones(u_occ.size, int)])
    decisions = (u_all > u_star).astype(int)
    kappa = metrics.cohens_kappa(decisions, truth)
    return OodReport(
        g_auc_occluded=g_auc_occ,
        g_auc_flipped=g_auc_flip,
        kappa=kappa,
        u_star=u_star,
        u_id=u_id,
        u_occluded=u_occ,
        u_flipped=u_flip,
        decisions=decisions,
        histogram=uncertainty_histogram(u_id, u_occ),
    )


def evaluate_ood(model, images, u_star, spec=OcclusionSpec(), saliency=None):
    """Score ID originals against both occlusion variants at a fixed u*."""
    u_id, u_occ, u_flip = ood_scores(model, images, spec=spec, saliency=saliency)
    return report_from_scores(u_id, u_occ, u_flip, u_star)
