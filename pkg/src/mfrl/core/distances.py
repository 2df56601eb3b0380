"""Total variation and Hellinger distances between discrete distributions."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, PreconditionError


def _pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1:] != q.shape[-1:]:
        raise DimensionError(f"length mismatch: {p.shape[-1:]} vs {q.shape[-1:]}")
    return p, q


def tv_distance(p, q):
    """Half the L1 distance, taken along the last axis (broadcasts)."""
    p, q = _pair(p, q)
    d = 0.5 * np.abs(p - q).sum(axis=-1)
    return float(d) if d.ndim == 0 else d


def hellinger_distance(p, q):
    """``sqrt(1 - sum_x sqrt(p(x) q(x)))`` along the last axis.

    The Bhattacharyya coefficient is clipped to [0, 1] so rounding never
    produces a NaN for identical inputs.
    """
    p, q = _pair(p, q)
    bc = np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)).sum(axis=-1)
    d = np.sqrt(np.clip(1.0 - bc, 0.0, 1.0))
    return float(d) if d.ndim == 0 else d


def gaussian_hellinger(mean1, mean2, sigma: float):
    """Hellinger distance between N(mean1, sigma^2 I) and N(mean2, sigma^2 I).

    The squared distance is ``1 - exp(-|mean1 - mean2|^2 / (8 sigma^2))``.
    """
    if sigma <= 0:
        raise PreconditionError("sigma must be positive")
    m1, m2 = _pair(mean1, mean2)
    sq = ((m1 - m2) ** 2).sum(axis=-1) / (sigma * sigma)
    d = np.sqrt(np.clip(-np.expm1(-sq / 8.0), 0.0, 1.0))
    return float(d) if d.ndim == 0 else d
