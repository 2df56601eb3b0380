"""Probability-simplex helpers: validation, renormalization, projection."""
from __future__ import annotations

import numpy as np

from ..errors import DensityError, DimensionError

# raw mass may deviate from 1 by at most this much before renormalizing
MASS_TOL = 1e-6
NEG_TOL = 1e-12
# drift at or below this is rounding; leaving it keeps construction idempotent
ROUND_TOL = 1e-12


def as_density(p, tol: float = MASS_TOL) -> np.ndarray:
    """Validate ``p`` as a distribution over states and renormalize it.

    Entries below ``-1e-12`` or a total mass off by more than ``tol`` raise
    :class:`DensityError`; smaller drift is clamped and renormalized away.
    """
    arr = np.array(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"density must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DensityError("density has non-finite entries")
    if arr.min() < -NEG_TOL:
        raise DensityError(f"negative probability {arr.min():.3g}")
    total = arr.sum()
    if abs(total - 1.0) > tol:
        raise DensityError(f"probability mass {total!r} deviates from 1 by more than {tol}")
    arr = np.clip(arr, 0.0, None)
    total = arr.sum()
    return arr if abs(total - 1.0) <= ROUND_TOL else arr / total


def as_row_stochastic(x, tol: float = MASS_TOL) -> np.ndarray:
    """Same checks as :func:`as_density`, applied along the last axis."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise DimensionError(f"expected trailing distribution axis, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DensityError("non-finite probabilities")
    if arr.size and arr.min() < -NEG_TOL:
        raise DensityError(f"negative probability {arr.min():.3g}")
    sums = arr.sum(axis=-1)
    if arr.size and np.max(np.abs(sums - 1.0)) > tol:
        raise DensityError(f"row mass deviates from 1 by {np.max(np.abs(sums - 1.0)):.3g}")
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=-1, keepdims=True)
    return np.where(np.abs(sums - 1.0) <= ROUND_TOL, arr, arr / sums)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex.

    Sort-and-threshold: with ``u`` sorted descending, the support size is the
    largest ``k`` such that ``u_k - (sum_{j<=k} u_j - 1)/k > 0``; the output is
    ``max(v - tau, 0)`` for the matching threshold ``tau``. Ties are handled
    exactly since equal entries receive the same shift.
    """
    v = np.asarray(v, dtype=np.float64)
    flat = v.reshape(-1, v.shape[-1])
    n = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ks = np.arange(1, n + 1)
    cond = u - css / ks > 0
    # cond holds on a prefix in exact arithmetic; take its last index
    rho = (cond * ks).max(axis=1)
    tau = css[np.arange(flat.shape[0]), rho - 1] / rho
    out = np.maximum(flat - tau[:, None], 0.0)
    return out.reshape(v.shape)


def random_simplex(rng: np.random.Generator, n: int, size=None, alpha: float = 1.0) -> np.ndarray:
    """Dirichlet(alpha) draws over ``n`` outcomes."""
    shape = () if size is None else (size if isinstance(size, tuple) else (size,))
    return rng.dirichlet(np.full(n, alpha), size=shape if shape else None)
