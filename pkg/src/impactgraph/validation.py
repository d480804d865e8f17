"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError


def check_features(X, n_features: int | None = 3) -> np.ndarray:
    """Finite float64 2-D array with the expected column count."""
    try:
        X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True, copy=False)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise ValidationError(f"expected {n_features} feature columns, got {X.shape[1]}")
    return X


def check_target(y, n_rows: int) -> np.ndarray:
    """1-D float64 target; NaN marks unlabelled rows, infinities are rejected."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1 or y.size != n_rows:
        raise ValidationError(f"target must be a vector of length {n_rows}, got shape {y.shape}")
    if np.any(np.isinf(y)):
        raise ValidationError("target contains infinite values")
    return y


def check_mask(mask, n_rows: int, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValidationError(f"{name} must be boolean")
        mask = mask.astype(bool)
    if mask.shape != (n_rows,):
        raise ValidationError(f"{name} must have shape ({n_rows},), got {mask.shape}")
    return mask
