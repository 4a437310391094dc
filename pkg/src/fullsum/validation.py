"""Input validation for the estimator-style API.

Utterances are variable-length, so corpus-level containers are lists of
per-utterance arrays rather than one rectangular matrix.
"""

from __future__ import annotations

import numpy as np


def as_feature_matrix(x, name: str = "X") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a 2-D (frames, dim) array, got ndim={x.ndim}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def as_feature_list(X, name: str = "X") -> list[np.ndarray]:
    """Accept one feature matrix or a sequence of them; enforce a common
    feature dimension."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ValueError(f"{name} must be a feature matrix or a non-empty list of them")
    out = [as_feature_matrix(x, name=f"{name}[{i}]") for i, x in enumerate(X)]
    dims = {x.shape[1] for x in out}
    if len(dims) != 1:
        raise ValueError(f"{name} mixes feature dimensions {sorted(dims)}")
    return out


def as_label_sequences(y, n_utterances: int, name: str = "y") -> list[list[int]]:
    """One non-empty integer label sequence per utterance."""
    if y is None:
        raise ValueError(f"{name} is required: alignment is conditioned on the transcription")
    if isinstance(y, (list, tuple)) and y and np.isscalar(y[0]):
        y = [y]
    if not isinstance(y, (list, tuple)) or len(y) != n_utterances:
        raise ValueError(f"{name} must hold one label sequence per utterance ({n_utterances})")
    out = []
    for i, seq in enumerate(y):
        seq = [int(v) for v in np.asarray(seq).reshape(-1)]
        if not seq:
            raise ValueError(f"{name}[{i}] is empty")
        out.append(seq)
    return out
