"""Input validation helpers for the estimator and CLI layers."""

from __future__ import annotations

import numpy as np

from .exceptions import ArgumentError, DimensionError


def check_image_array(X, n_channels=3, size=None):
    """Validate a stack of images as N x C x H x W floats in [0, 1]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise DimensionError(f"expected N x C x H x W images, got ndim={X.ndim}")
    if X.shape[1] != n_channels:
        raise DimensionError(f"expected {n_channels} channels, got {X.shape[1]}")
    if size is not None and X.shape[2:] != (size, size):
        raise DimensionError(f"expected {size}x{size} images, got {X.shape[2]}x{X.shape[3]}")
    if not np.all(np.isfinite(X)):
        raise ArgumentError("images must be finite")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ArgumentError("images must be normalized to [0, 1]")
    return X


def check_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise DimensionError(f"expected {n_samples} labels, got shape {y.shape}")
    if not np.all(np.isin(y, (0, 1))):
        raise ArgumentError("labels must be 0 or 1")
    return y.astype(int)
