"""ROC construction and the screening metric suite.

Convention: a sample is called positive when its score is *strictly
greater* than the threshold.  The ROC therefore lists every distinct
score as a threshold (descending) followed by -inf, which guarantees the
(sens=0, spec=1) and (sens=1, spec=0) endpoints are present and lets a
binary rule ``score > threshold`` sit exactly on a listed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ArgumentError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

AT_SENSITIVITY = "at_sensitivity"
YOUDEN = "youden"


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    sensitivity: float
    specificity: float

    @property
    def fpr(self):
        return 1.0 - self.specificity


@dataclass(frozen=True)
class RocAnalysis:
    points: tuple
    auc: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float
    rule: str


def roc(scores_pos, scores_neg):
    """Exact step-function ROC over all distinct thresholds."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ArgumentError("both score lists must be non-empty")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ArgumentError("scores must be finite")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    points = []
    for t in thresholds:
        points.append(
            RocPoint(
                threshold=float(t),
                sensitivity=float(np.mean(pos > t)),
                specificity=float(np.mean(neg <= t)),
            )
        )
    points.append(
        RocPoint(threshold=-math.inf, sensitivity=1.0, specificity=0.0)
    )
    fpr = np.array([p.fpr for p in points])
    tpr = np.array([p.sensitivity for p in points])
    auc = float(_trapezoid(tpr, fpr))
    return RocAnalysis(points=tuple(points), auc=auc, n_pos=pos.size, n_neg=neg.size)


def mann_whitney_auc(scores_pos, scores_neg):
    """Pairwise win fraction with ties counted 1/2 (independent AUC route)."""
    pos = np.asarray(scores_pos, dtype=np.float64)[:, None]
    neg = np.asarray(scores_neg, dtype=np.float64)[None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return float(wins / (pos.size * neg.size))


def partial_auc(analysis, spec_lo=0.90, spec_hi=1.0):
    """Area under TPR over the FPR window implied by [spec_lo, spec_hi],
    normalized by the window width so the result lies in [0, 1]."""
    if not (0.0 <= spec_lo < spec_hi <= 1.0):
        raise ArgumentError(f"invalid specificity range [{spec_lo}, {spec_hi}]")
    f_lo = 1.0 - spec_hi
    f_hi = 1.0 - spec_lo
    fpr = np.array([p.fpr for p in analysis.points])
    tpr = np.array([p.sensitivity for p in analysis.points])
    area = 0.0
    for i in range(len(fpr) - 1):
        x0, x1 = fpr[i], fpr[i + 1]
        y0, y1 = tpr[i], tpr[i + 1]
        if x1 <= f_lo or x0 >= f_hi or x1 == x0:
            continue
        # clip the segment to the window, interpolating linearly
        a = max(x0, f_lo)
        b = min(x1, f_hi)
        ya = y0 + (y1 - y0) * (a - x0) / (x1 - x0)
        yb = y0 + (y1 - y0) * (b - x0) / (x1 - x0)
        area += (b - a) * (ya + yb) / 2.0
    return float(area / (f_hi - f_lo))


def tpr_at_specificity(analysis, spec=0.95):
    """Highest sensitivity among points with specificity >= spec (no interpolation)."""
    if not 0.0 < spec < 1.0:
        raise ArgumentError(f"specificity target must be in (0,1), got {spec}")
    eligible = [p.sensitivity for p in analysis.points if p.specificity >= spec]
    return max(eligible) if eligible else 0.0


def cohens_kappa(decisions, reference):
    decisions = np.asarray(decisions)
    reference = np.asarray(reference)
    if decisions.shape != reference.shape or decisions.size == 0:
        raise ArgumentError("decision and reference lists must have equal length >= 1")
    n = decisions.size
    p_o = float(np.mean(decisions == reference))
    p_dec1 = float(np.mean(decisions == 1))
    p_ref1 = float(np.mean(reference == 1))
    p_e = p_dec1 * p_ref1 + (1.0 - p_dec1) * (1.0 - p_ref1)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def select_threshold(analysis, rule, target=0.5):
    """Pick an operating point on the ROC.

    ``at_sensitivity``: the point with the smallest sensitivity >= target,
    ties broken toward higher specificity (then higher threshold).
    ``youden``: maximize sensitivity + specificity - 1, ties broken toward
    higher specificity, then lower threshold.
    """
    pts = analysis.points
    if rule == AT_SENSITIVITY:
        eligible = [p for p in pts if p.sensitivity >= target]
        best = min(
            eligible,
            key=lambda p: (p.sensitivity, -p.specificity, -p.threshold),
        )
        label = f"{AT_SENSITIVITY}({target:g})"
    elif rule == YOUDEN:
        best = max(
            pts,
            key=lambda p: (
                p.sensitivity + p.specificity - 1.0,
                p.specificity,
                -p.threshold,
            ),
        )
        label = YOUDEN
    else:
        raise ArgumentError(f"unknown threshold rule: {rule!r}")
    return OperatingPoint(
        threshold=best.threshold,
        sensitivity=best.sensitivity,
        specificity=best.specificity,
        rule=label,
    )
