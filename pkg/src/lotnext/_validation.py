"""Small input-validation helpers shared across the public surfaces."""

from __future__ import annotations

import numpy as np


def check_scores_labels(scores, labels):
    """Coerce and validate a (N, P) score matrix with N integer labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2:
        raise ValueError(f"scores must be 2-dimensional, got shape {scores.shape}")
    if labels.ndim != 1 or labels.shape[0] != scores.shape[0]:
        raise ValueError("labels must be one per score row")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == labels.astype(np.int64)):
            raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
    if scores.shape[0] and (labels.min() < 0 or labels.max() >= scores.shape[1]):
        raise ValueError("label index outside the score matrix")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    return scores, labels.astype(np.int64)


def check_fitted(obj, attributes):
    """Raise if the estimator has not been fitted yet."""
    missing = [a for a in attributes if not hasattr(obj, a)]
    if missing:
        raise RuntimeError(
            f"{type(obj).__name__} is not fitted; call fit() first (missing {missing})"
        )


def check_windows(windows):
    if not windows:
        raise ValueError("no windows given")
    return list(windows)
