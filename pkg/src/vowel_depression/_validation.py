"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .dsp import N_FRAMES, N_MELS


def check_patches(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (N_MELS, N_FRAMES):
        raise ValueError(f"expected patches of shape (n, {N_MELS}, {N_FRAMES}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain non-finite values")
    return X


def check_labels(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    return y


def check_sequences(sequences, n_features: int | None = None) -> list[np.ndarray]:
    """Coerce to a list of non-empty 2-D float arrays of one step width."""
    if isinstance(sequences, np.ndarray) and sequences.ndim == 2:
        sequences = [sequences]
    out = []
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 2 or seq.shape[0] == 0:
            raise ValueError(f"sequence {i} must be a non-empty (steps, features) array, got {seq.shape}")
        if not np.all(np.isfinite(seq)):
            raise ValueError(f"sequence {i} contains non-finite values")
        if n_features is None:
            n_features = seq.shape[1]
        elif seq.shape[1] != n_features:
            raise ValueError(f"sequence {i} has {seq.shape[1]} features, expected {n_features}")
        out.append(seq)
    if not out:
        raise ValueError("no sequences given")
    return out
