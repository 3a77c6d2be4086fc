"""Dirichlet evidence algebra and the two KL loss terms.

Evidence is produced from clipped logits through a softplus, so each
per-class evidence lies in [0, softplus(200)].  The Dirichlet parameters
are alpha_k = e_k + 1, total strength S = sum(alpha), belief masses
b_k = e_k / S, uncertainty u = K / S and class probabilities
p_hat_k = alpha_k / S.

Two entry points exist for most quantities: plain numpy functions for
inference/analysis, and graph-building variants (suffix ``_t``) used by
the trainer so losses are differentiable end-to-end down to the logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, psi

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ArgumentError

LOGIT_CLIP = 200.0
ALPHA_MAX_DEFAULT = 201.0  # softplus(200) + 1, the largest reachable alpha


@dataclass(frozen=True)
class DirichletBelief:
    """Per-sample Dirichlet state derived from an evidence vector.

    All fields have the class axis last, so batches of shape (N, K) are
    supported transparently.
    """

    evidence: np.ndarray
    alpha: np.ndarray
    strength: np.ndarray
    belief: np.ndarray
    uncertainty: np.ndarray
    p_hat: np.ndarray

    @property
    def n_classes(self):
        return self.alpha.shape[-1]


@dataclass(frozen=True)
class AnnealSchedule:
    """Epoch-indexed annealing weight a_t = min(1, t / step)."""

    step: int

    def __post_init__(self):
        if self.step <= 0:
            raise ArgumentError(f"annealing step must be positive, got {self.step}")

    def coefficient(self, epoch):
        if epoch < 0:
            raise ArgumentError(f"epoch must be >= 0, got {epoch}")
        return min(1.0, epoch / self.step)


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def evidence_from_logits(logits):
    """softplus(clip(logits, -200, 200)) along the last (class) axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 2:
        raise ArgumentError("at least two classes are required")
    if not np.all(np.isfinite(logits)):
        raise ArgumentError("logits must be finite")
    return _softplus(np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP))


def belief(evidence):
    """Build the full Dirichlet belief state from non-negative evidence."""
    e = np.asarray(evidence, dtype=np.float64)
    if e.shape[-1] < 2:
        raise ArgumentError("at least two classes are required")
    if np.any(e < 0):
        raise ArgumentError("evidence must be non-negative")
    k = e.shape[-1]
    alpha = e + 1.0
    strength = alpha.sum(axis=-1, keepdims=True)
    b = e / strength
    u = k / strength[..., 0]
    p_hat = alpha / strength
    return DirichletBelief(
        evidence=e,
        alpha=alpha,
        strength=strength[..., 0],
        belief=b,
        uncertainty=u,
        p_hat=p_hat,
    )


def kl_dirichlet(alpha, beta):
    """Closed-form KL divergence between two Dirichlet distributions."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape != beta.shape:
        raise ArgumentError(f"parameter shapes differ: {alpha.shape} vs {beta.shape}")
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise ArgumentError("Dirichlet parameters must be finite")
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise ArgumentError("Dirichlet parameters must be strictly positive")
    sa = alpha.sum(axis=-1)
    sb = beta.sum(axis=-1)
    return (
        gammaln(sa)
        - gammaln(alpha).sum(axis=-1)
        - gammaln(sb)
        + gammaln(beta).sum(axis=-1)
        + ((alpha - beta) * (psi(alpha) - psi(sa)[..., None])).sum(axis=-1)
    )


def _check_one_hot(y, k):
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != k:
        raise ArgumentError(f"label has {y.shape[-1]} classes, expected {k}")
    if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=-1) == 1):
        raise ArgumentError("labels must be one-hot")
    return y


def remove_non_misleading(alpha, y):
    """alpha with the true-class entry reset to 1: alpha_hat = y + (1-y)*alpha."""
    alpha = np.asarray(alpha, dtype=np.float64)
    y = _check_one_hot(y, alpha.shape[-1])
    return y + (1.0 - y) * alpha


def target_alpha(y, alpha_max=ALPHA_MAX_DEFAULT):
    """alpha_max on the true class, 1 elsewhere (zero target evidence)."""
    if alpha_max <= 1.0:
        raise ArgumentError(f"alpha_max must exceed 1, got {alpha_max}")
    y = np.asarray(y, dtype=np.float64)
    return np.where(y == 1, alpha_max, 1.0)


def loss_evid(bel, y, alpha_max=ALPHA_MAX_DEFAULT):
    """KL of the predicted Dirichlet from the maximal-evidence target."""
    y = _check_one_hot(y, bel.alpha.shape[-1])
    return kl_dirichlet(bel.alpha, target_alpha(y, alpha_max))


def loss_unif(alpha, y):
    """KL from uniform after removing the non-misleading (true-class) evidence."""
    alpha_hat = remove_non_misleading(alpha, y)
    return kl_dirichlet(alpha_hat, np.ones_like(alpha_hat))


def total_loss(beliefs, labels, schedule, epoch, alpha_max=ALPHA_MAX_DEFAULT):
    """Mean over the batch of loss_evid + a_t * loss_unif."""
    if len(beliefs) == 0:
        raise ArgumentError("batch must be non-empty")
    alpha = np.atleast_2d(np.stack([b.alpha for b in beliefs]))
    y = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    bel = belief(alpha - 1.0)
    evid = float(np.mean(loss_evid(bel, y, alpha_max)))
    a_t = schedule.coefficient(epoch)
    if a_t == 0.0:
        return evid
    return evid + a_t * float(np.mean(loss_unif(alpha, y)))


# ----------------------------------------------------------------------
# graph-building variants used by the trainer
# ----------------------------------------------------------------------


def evidence_t(logits):
    return ad.softplus(ad.clip(logits, -LOGIT_CLIP, LOGIT_CLIP))


def kl_dirichlet_t(alpha, beta):
    """KL(Dir(alpha) || Dir(beta)) per row; alpha is a (N, K) tensor, beta constant."""
    beta = np.asarray(beta, dtype=np.float64)
    sa = ad.tsum(alpha, axis=1)
    sb = beta.sum(axis=1)
    const = -gammaln(sb) + gammaln(beta).sum(axis=1)
    cross = ad.tsum((alpha - Tensor(beta)) * ad.digamma(alpha), axis=1)
    tail = ad.digamma(sa) * (sa - Tensor(sb))
    return ad.lgamma(sa) - ad.tsum(ad.lgamma(alpha), axis=1) + Tensor(const) + cross - tail


def evidential_loss_t(logits, y, epoch, schedule, alpha_max=ALPHA_MAX_DEFAULT):
    """Full annealed loss as a scalar graph node plus its two components.

    Returns (total, mean_evid, mean_unif); when a_t == 0 the total node
    *is* the mean evidence-term node, keeping the two bit-identical.
    """
    y = _check_one_hot(y, logits.shape[1])
    e = evidence_t(logits)
    alpha = e + 1.0
    l_evid = kl_dirichlet_t(alpha, target_alpha(y, alpha_max))
    alpha_hat = Tensor(y) + Tensor(1.0 - y) * alpha
    l_unif = kl_dirichlet_t(alpha_hat, np.ones_like(y))
    mean_evid = ad.tmean(l_evid)
    mean_unif = ad.tmean(l_unif)
    a_t = schedule.coefficient(epoch)
    if a_t == 0.0:
        total = mean_evid
    else:
        total = mean_evid + a_t * mean_unif
    return total, mean_evid, mean_unif
