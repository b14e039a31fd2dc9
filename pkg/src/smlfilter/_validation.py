"""Input validation helpers shared by the numeric modules and the estimators."""

from __future__ import annotations

import numbers

import numpy as np


def as_vector(x, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a finite, non-empty 1-D float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_step_size(mu) -> float:
    mu = float(mu)
    if not np.isfinite(mu) or mu <= 0:
        raise ValueError(f"step size mu must be positive and finite, got {mu}")
    return mu


def as_factor_array(W, M: int | None = None, K: int | None = None) -> np.ndarray:
    """Validate factor weights and return them as a ``(K, M)`` float array."""
    if isinstance(W, np.ndarray):
        F = np.array(W, dtype=float, ndmin=2)
    else:
        rows = [np.asarray(w, dtype=float).reshape(-1) for w in W]
        if not rows:
            raise ValueError("factor weights must contain at least one vector")
        lengths = {r.size for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"factor vectors have mismatched lengths {sorted(lengths)}")
        F = np.vstack(rows)
    if F.ndim != 2 or F.shape[0] < 1 or F.shape[1] < 1:
        raise ValueError(f"factor weights must have shape (K, M), got {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError("factor weights contain non-finite entries")
    if K is not None and F.shape[0] != K:
        raise ValueError(f"expected K={K} factors, got {F.shape[0]}")
    if M is not None and F.shape[1] != M:
        raise ValueError(f"expected factor length M={M}, got {F.shape[1]}")
    return F


def check_signal_pair(x, d) -> tuple[np.ndarray, np.ndarray]:
    """Validate an (input, desired) pair of equal-length 1-D signals. Empty is allowed."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if x.shape != d.shape:
        raise ValueError(f"input and desired lengths differ: {x.size} != {d.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d))):
        raise ValueError("signals contain non-finite entries")
    return x, d
