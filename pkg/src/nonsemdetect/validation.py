"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NumericError

LABEL_NAMES = {"spoof": 0, "bonafide": 1}


def check_embedding_stack(X) -> np.ndarray:
    """Coerce X to a float32 (n, d, t) stack of embedding matrices.

    Accepts a 3-d array or a sequence of 2-d (d, t) arrays with a single
    consistent shape. Values must be finite.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        stack = X.astype(np.float32, copy=False)
    else:
        matrices = [np.asarray(m, dtype=np.float32) for m in X]
        if not matrices:
            raise ConfigurationError("X must contain at least one embedding matrix")
        shapes = {m.shape for m in matrices}
        bad = [m.shape for m in matrices if m.ndim != 2]
        if bad:
            raise ConfigurationError(f"embedding matrices must be 2-d (d, t); got shapes {bad[:3]}")
        if len(shapes) != 1:
            raise ConfigurationError(f"embedding matrices disagree in shape: {sorted(shapes)}")
        stack = np.stack(matrices)
    if stack.shape[0] < 1 or stack.shape[1] < 1 or stack.shape[2] < 1:
        raise ConfigurationError(f"need n, d, t >= 1, got {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise NumericError("embedding values must be finite")
    return stack


def check_binary_labels(y, n: int) -> np.ndarray:
    """Coerce labels to int {0 spoof, 1 bonafide}; accepts the string names too."""
    arr = np.asarray(y)
    if arr.shape != (n,):
        raise ConfigurationError(f"y must have shape ({n},), got {arr.shape}")
    if arr.dtype.kind in ("U", "S", "O"):
        try:
            arr = np.array([LABEL_NAMES[str(v)] for v in arr], dtype=np.int64)
        except KeyError as exc:
            raise ConfigurationError(
                f"string labels must be 'spoof' or 'bonafide', got {exc.args[0]!r}"
            ) from exc
    else:
        arr = arr.astype(np.int64)
    values = set(np.unique(arr).tolist())
    if not values <= {0, 1}:
        raise ConfigurationError(f"labels must be binary 0/1, got values {sorted(values)}")
    return arr
