"""Seeded training loop: balanced batches, augmentation, annealed loss."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics, synthetic
from .autodiff import Tensor
from .convnet import save_checkpoint
from .evidential import (
    ALPHA_MAX_DEFAULT,
    AnnealSchedule,
    belief,
    evidence_from_logits,
    evidential_loss_t,
)
from .exceptions import ArgumentError, TrainingDivergedError

TRAIN_LOG_COLUMNS = (
    "epoch",
    "a_t",
    "mean_loss_evid",
    "mean_loss_unif",
    "total_loss",
    "train_accuracy",
    "val_auc",
    "mean_u",
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # or "sgd_momentum"
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    anneal_step: int = 10
    alpha_max: float = ALPHA_MAX_DEFAULT
    augment: bool = True
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ArgumentError("batch_size must be an even number >= 2")
        if self.learning_rate < 0:
            raise ArgumentError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ArgumentError(f"unknown optimizer {self.optimizer!r}")
        if self.anneal_step <= 0:
            raise ArgumentError("anneal_step must be positive")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, **kw):
        self.rows.append({c: kw[c] for c in TRAIN_LOG_COLUMNS})

    def to_csv_text(self):
        lines = [",".join(TRAIN_LOG_COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join(
                    str(row["epoch"]) if c == "epoch" else repr(float(row[c]))
                    for c in TRAIN_LOG_COLUMNS
                )
            )
        return "\n".join(lines) + "\n"


def balanced_batches(labels, batch_size, seed):
    """Index batches with exactly batch_size/2 per class.

    The epoch covers each majority-class sample once (padding the last
    batch from a fresh permutation when the count does not divide); the
    minority class is oversampled by cycling reshuffled permutations.
    """
    labels = np.asarray(labels)
    if batch_size < 2 or batch_size % 2 != 0:
        raise ArgumentError("batch_size must be an even number >= 2")
    idx0 = np.flatnonzero(labels == 0)
    idx1 = np.flatnonzero(labels == 1)
    if idx0.size == 0 or idx1.size == 0:
        raise ArgumentError("both classes must be present")
    rng = np.random.default_rng(seed)
    half = batch_size // 2
    n_batches = -(-max(idx0.size, idx1.size) // half)  # ceil

    def draw(idx):
        need = n_batches * half
        reps = []
        total = 0
        while total < need:
            perm = rng.permutation(idx)
            reps.append(perm)
            total += perm.size
        return np.concatenate(reps)[:need]

    seq0, seq1 = draw(idx0), draw(idx1)
    return [
        np.concatenate([seq0[i * half : (i + 1) * half], seq1[i * half : (i + 1) * half]])
        for i in range(n_batches)
    ]


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            mhat = self.m[k] / (1 - self.b1**self.t)
            vhat = self.v[k] / (1 - self.b2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.vel = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.vel[k] = self.momentum * self.vel[k] - self.lr * g
            p.data = p.data + self.vel[k]


def make_optimizer(model, config):
    if config.optimizer == "adam":
        return Adam(model.params, config.learning_rate, config.adam_betas, config.adam_eps)
    return SGDMomentum(model.params, config.learning_rate, config.momentum)


def _one_hot(labels, k):
    y = np.zeros((len(labels), k))
    y[np.arange(len(labels)), labels] = 1.0
    return y


def evaluate_classifier(model, images, labels):
    """Validation-side metrics: referable AUC and mean uncertainty."""
    logits = model.forward(images)
    bel = belief(evidence_from_logits(logits))
    scores = bel.p_hat[:, 1]
    labels = np.asarray(labels)
    if scores[labels == 1].size and scores[labels == 0].size:
        auc = metrics.roc(scores[labels == 1], scores[labels == 0]).auc
    else:
        auc = float("nan")
    return auc, float(bel.uncertainty.mean()), bel


def train(model, train_samples, val_samples, config, checkpoint_dir=None):
    """Run the full loop and return the per-epoch TrainLog."""
    schedule = AnnealSchedule(config.anneal_step)
    optimizer = make_optimizer(model, config)
    log = TrainLog()
    labels = np.array([s.label for s in train_samples])
    images = np.stack([s.image for s in train_samples])
    val_images = np.stack([s.image for s in val_samples]) if val_samples else None
    val_labels = np.array([s.label for s in val_samples]) if val_samples else None
    k = model.config.n_classes

    for epoch in range(config.epochs):
        batches = balanced_batches(labels, config.batch_size, seed=[config.seed, 1 + epoch])
        evid_sum = unif_sum = total_sum = 0.0
        correct = 0
        seen = 0
        for bi, idx in enumerate(batches):
            if config.augment:
                batch_images = np.stack(
                    [
                        synthetic.augment(images[j], seed=[config.seed, 2, epoch, bi, pos])
                        for pos, j in enumerate(idx)
                    ]
                )
            else:
                batch_images = images[idx]
            y = _one_hot(labels[idx], k)
            logits = model.forward_t(Tensor(batch_images))
            total, m_evid, m_unif = evidential_loss_t(
                logits, y, epoch, schedule, alpha_max=config.alpha_max
            )
            if not np.isfinite(total.data):
                raise TrainingDivergedError(epoch, bi)
            model.zero_grad()
            total.backward()
            optimizer.step()
            evid_sum += float(m_evid.data)
            unif_sum += float(m_unif.data)
            total_sum += float(total.data)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
            seen += idx.size
        if val_images is not None:
            val_auc, mean_u, _ = evaluate_classifier(model, val_images, val_labels)
        else:
            val_auc, mean_u = float("nan"), float("nan")
        n = len(batches)
        log.append(
            epoch=epoch,
            a_t=schedule.coefficient(epoch),
            mean_loss_evid=evid_sum / n,
            mean_loss_unif=unif_sum / n,
            total_loss=total_sum / n,
            train_accuracy=correct / seen,
            val_auc=val_auc,
            mean_u=mean_u,
        )
        if (
            checkpoint_dir
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(model, os.path.join(checkpoint_dir, f"checkpoint_epoch{epoch:03d}.edlc"))
    return log
