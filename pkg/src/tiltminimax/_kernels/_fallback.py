"""NumPy reference implementations of the Monte Carlo kernels."""

from __future__ import annotations

import numpy as np


def row_medians(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape[1] == 0:
        raise ValueError("empty rows")
    return np.median(x, axis=1)


def tilted_values(z, effects, kind: int, lam: float, cap: float) -> np.ndarray:
    """``expm1(min(loss, cap)/lam)`` elementwise; ``effects`` broadcasts against ``z``."""
    z = np.asarray(z, dtype=float)
    e = np.asarray(effects, dtype=float)
    if kind == 0:
        loss = (e - z) ** 2
    else:
        wrong = ((e > 0) & (z < 0)) | ((e < 0) & (z >= 0))
        loss = np.where(wrong, np.abs(e), 0.0)
    return np.expm1(np.minimum(loss, cap) / lam)


def tilted_stats(z, effects, kind: int, lam: float, cap: float):
    z = np.ascontiguousarray(z, dtype=float)
    effects = np.ascontiguousarray(effects, dtype=float)
    if effects.shape[0] != z.shape[0]:
        raise ValueError("effects length must match rows of z")
    if z.shape[1] < 2:
        raise ValueError("need at least two replications")
    v = tilted_values(z, effects[:, None], kind, lam, cap)
    return v.mean(axis=1), v.var(axis=1, ddof=1)
