from __future__ import annotations

from typing import Sequence

import numpy as np

from ..domain import StructuralError


def select_columns(X, names: Sequence[str], wanted: Sequence[str]) -> np.ndarray:
    """Columns of ``X`` for ``wanted`` predictors, in that order."""
    X = np.asarray(X, dtype=float)
    index = {n: i for i, n in enumerate(names)}
    missing = [w for w in wanted if w not in index]
    if missing:
        raise StructuralError(f"predictors not present in the input matrix: {missing}")
    if X.ndim != 2 or X.shape[1] != len(names):
        raise StructuralError(f"matrix has shape {X.shape} but {len(names)} predictor names")
    return X[:, [index[w] for w in wanted]]


def as_levels(levels) -> np.ndarray:
    q = np.asarray(levels, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) <= 0):
        raise ValueError("quantile levels must be strictly increasing inside (0, 1)")
    return q
