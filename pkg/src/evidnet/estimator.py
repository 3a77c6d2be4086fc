"""Scikit-learn style front end over the CNN, trainer and belief algebra."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .convnet import ConvBlockConfig, ConvNet, ModelConfig, grad_cam
from .evidential import ALPHA_MAX_DEFAULT, belief, evidence_from_logits
from .exceptions import ArgumentError
from .trainer import TrainConfig, train
from .synthetic import SyntheticSample
from .validation import check_image_array, check_labels


class EvidentialCNNClassifier(BaseEstimator, ClassifierMixin):
    """Binary CNN classifier trained with the annealed evidential KL loss.

    ``fit`` expects images as an (N, 3, size, size) float array in [0, 1]
    and 0/1 labels.  Besides the usual ``predict``/``predict_proba``, the
    fitted estimator exposes per-sample ``uncertainty`` and Grad-CAM
    ``saliency`` maps, which the OOD harness consumes.
    """

    def __init__(
        self,
        input_size=64,
        conv_filters=(16, 32, 64),
        dense_width=64,
        epochs=12,
        batch_size=32,
        learning_rate=1e-3,
        optimizer="adam",
        anneal_step=10,
        alpha_max=ALPHA_MAX_DEFAULT,
        augment=True,
        validation_fraction=0.2,
        checkpoint_every=0,
        seed=0,
    ):
        self.input_size = input_size
        self.conv_filters = conv_filters
        self.dense_width = dense_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.anneal_step = anneal_step
        self.alpha_max = alpha_max
        self.augment = augment
        self.validation_fraction = validation_fraction
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    # -- configuration -------------------------------------------------

    def _model_config(self):
        return ModelConfig(
            input_size=self.input_size,
            conv_blocks=tuple(ConvBlockConfig(f) for f in self.conv_filters),
            dense_width=self.dense_width,
            n_classes=2,
            seed=self.seed,
        )

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            anneal_step=self.anneal_step,
            alpha_max=self.alpha_max,
            augment=self.augment,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )

    # -- estimator API -------------------------------------------------

    def fit(self, X, y, checkpoint_dir=None):
        X = check_image_array(X, size=self.input_size)
        y = check_labels(y, X.shape[0])
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ArgumentError("validation_fraction must be in [0, 1)")
        n_val = int(round(X.shape[0] * self.validation_fraction))
        perm = np.random.default_rng(self.seed).permutation(X.shape[0])
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        train_samples = [SyntheticSample(image=X[i], label=int(y[i])) for i in train_idx]
        val_samples = [SyntheticSample(image=X[i], label=int(y[i])) for i in val_idx]
        self.model_ = ConvNet(self._model_config())
        self.train_log_ = train(
            self.model_,
            train_samples,
            val_samples,
            self._train_config(),
            checkpoint_dir=checkpoint_dir,
        )
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ArgumentError("this estimator is not fitted yet; call fit first")

    def decision_logits(self, X):
        self._check_fitted()
        X = check_image_array(X, size=self.input_size)
        return self.model_.forward(X)

    def dirichlet_belief(self, X):
        return belief(evidence_from_logits(self.decision_logits(X)))

    def predict_proba(self, X):
        return self.dirichlet_belief(X).p_hat

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def uncertainty(self, X):
        return self.dirichlet_belief(X).uncertainty

    def saliency(self, X, target_class=None, layer=None):
        self._check_fitted()
        X = check_image_array(X, size=self.input_size)
        return [grad_cam(self.model_, img, target_class=target_class, layer=layer) for img in X]
