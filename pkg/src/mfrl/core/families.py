"""Transition and reward families for finite mean-field models.

Every discrete transition family is affine in the conditioning density, so
``P(.|s, a, mu) = sum_x mu(x) P(.|s, a, e_x)`` where ``e_x`` is the vertex of
the simplex at state ``x``. The vertex kernels (``vertices()``) are therefore
a complete description of a family and give exact Lipschitz constants.

Steps ``h`` are 0-based throughout: ``h = 0`` is the first step.
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, DensityError, PreconditionError, UnsupportedFamilyError
from .simplex import as_row_stochastic, project_simplex

_VERTEX_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class TransitionFamily:
    """Common interface. Subclasses set ``variant`` and the shape attributes."""

    variant = "abstract"
    discrete = True
    H: int
    S: int
    A: int

    def kernel(self, h: int, mu) -> np.ndarray:
        """All conditionals at step ``h``: array ``(S, A, S)``."""
        raise NotImplementedError

    def kernel_batch(self, h: int, mus) -> np.ndarray:
        """Conditionals for a batch of densities ``(P, S)``: ``(P, S, A, S)``."""
        return np.einsum("px,saxn->psan", np.asarray(mus, dtype=np.float64), self.vertices()[h])

    def vertices(self) -> np.ndarray:
        """Vertex kernels ``V[h, s, a, x, s'] = P_h(s'|s, a, e_x)``."""
        raise NotImplementedError

    def evaluate(self, h: int, s: int, a: int, mu) -> np.ndarray:
        return self.kernel(h, mu)[s, a]

    def to_dict(self) -> dict:
        raise NotImplementedError


class DensityFree(TransitionFamily):
    """Transitions that ignore the population: ``table[h, s, a]`` is a density."""

    variant = "density_free"

    def __init__(self, table):
        t = as_row_stochastic(table)
        if t.ndim != 4 or t.shape[1] != t.shape[3]:
            raise DimensionError(f"density-free table must be (H, S, A, S), got {t.shape}")
        self.table = _readonly(t)
        self.H, self.S, self.A = t.shape[:3]
        self._vert = None

    def kernel(self, h, mu):
        return self.table[h]

    def kernel_batch(self, h, mus):
        mus = np.asarray(mus)
        return np.broadcast_to(self.table[h], (mus.shape[0],) + self.table[h].shape)

    def vertices(self):
        if self._vert is None:
            t = self.table
            self._vert = _readonly(np.ascontiguousarray(
                np.broadcast_to(t[:, :, :, None, :], (self.H, self.S, self.A, self.S, self.S))))
        return self._vert

    def to_dict(self):
        return {"variant": self.variant, "table": self.table.tolist()}


class ConvexMixture(TransitionFamily):
    """``P(.|s, a, mu) = sum_x mu(x) K[h, s, a, x]`` with each ``K`` column a density."""

    variant = "convex_mixture"

    def __init__(self, kernel):
        k = as_row_stochastic(kernel)
        if k.ndim != 5 or not (k.shape[1] == k.shape[3] == k.shape[4]):
            raise DimensionError(f"mixture kernel must be (H, S, A, S, S), got {k.shape}")
        self.K = _readonly(k)
        self.H, self.S, self.A = k.shape[:3]

    def kernel(self, h, mu):
        return np.einsum("x,saxn->san", np.asarray(mu, dtype=np.float64), self.K[h])

    def vertices(self):
        return self.K

    def to_dict(self):
        return {"variant": self.variant, "K": self.K.tolist()}


class Interpolated(TransitionFamily):
    """``(1 - w) * base + w * mixture``; ``w`` scales the population dependence."""

    variant = "interpolated"

    def __init__(self, weight: float, base: DensityFree, mixture: ConvexMixture):
        if not 0.0 <= weight <= 1.0:
            raise PreconditionError(f"interpolation weight must lie in [0, 1], got {weight}")
        if (base.H, base.S, base.A) != (mixture.H, mixture.S, mixture.A):
            raise DimensionError("base and mixture shapes differ")
        self.weight = float(weight)
        self.base = base
        self.mixture = mixture
        self.H, self.S, self.A = base.H, base.S, base.A
        self._vert = None

    def kernel(self, h, mu):
        w = self.weight
        return (1.0 - w) * self.base.kernel(h, mu) + w * self.mixture.kernel(h, mu)

    def vertices(self):
        if self._vert is None:
            w = self.weight
            self._vert = _readonly((1.0 - w) * self.base.vertices() + w * self.mixture.vertices())
        return self._vert

    def to_dict(self):
        return {"variant": self.variant, "weight": self.weight,
                "base": self.base.to_dict(), "mixture": self.mixture.to_dict()}


class LowRank(TransitionFamily):
    """``P(.|s, a, mu) = sum_j phi_j(s, a, mu) psi[h, j]``.

    The feature map is affine: ``phi = phi_base[h, s, a] + mu @ phi_lin[h, s, a]``.
    Construction requires ``phi`` at every simplex vertex to be a point of the
    d-simplex (to 1e-9), which makes ``phi`` valid on the whole simplex; the
    evaluation still projects onto the simplex to absorb rounding.
    """

    variant = "low_rank"

    def __init__(self, phi_base, phi_lin, psi):
        base = np.array(phi_base, dtype=np.float64)
        lin = np.array(phi_lin, dtype=np.float64)
        if base.ndim != 4 or lin.ndim != 5 or lin.shape[:3] != base.shape[:3] \
                or lin.shape[4] != base.shape[3] or lin.shape[3] != base.shape[1]:
            raise DimensionError("phi_base must be (H, S, A, d) and phi_lin (H, S, A, S, d)")
        H, S, A, d = base.shape
        ps = as_row_stochastic(psi)
        if ps.shape != (H, d, S):
            raise DimensionError(f"psi must be (H, d, S) = {(H, d, S)}, got {ps.shape}")
        vert_phi = base[:, :, :, None, :] + lin
        if vert_phi.min() < -_VERTEX_TOL or np.max(np.abs(vert_phi.sum(-1) - 1.0)) > _VERTEX_TOL:
            raise DensityError("feature map leaves the d-simplex at some density vertex")
        self.phi_base = _readonly(base)
        self.phi_lin = _readonly(lin)
        self.psi = _readonly(ps)
        self.H, self.S, self.A, self.d = H, S, A, d
        self._vert = None

    def features(self, h, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=np.float64)
        raw = self.phi_base[h] + np.einsum("x,saxj->saj", mu, self.phi_lin[h])
        return project_simplex(raw)

    def kernel(self, h, mu):
        return self.features(h, mu) @ self.psi[h]

    def vertices(self):
        if self._vert is None:
            phi_v = project_simplex(self.phi_base[:, :, :, None, :] + self.phi_lin)
            self._vert = _readonly(np.einsum("hsaxj,hjn->hsaxn", phi_v, self.psi))
        return self._vert

    def to_dict(self):
        return {"variant": self.variant, "phi_base": self.phi_base.tolist(),
                "phi_lin": self.phi_lin.tolist(), "psi": self.psi.tolist()}


class GaussianMean(TransitionFamily):
    """Deterministic mean plus isotropic Gaussian noise, for eluder estimation only.

    ``mean(h, s, a, mu) = base[h, s, a] + mu @ lin[h, s, a]`` in R^d, noise
    ``N(0, sigma^2 I)``. Dynamics and learning operations reject this family.
    """

    variant = "gaussian_mean"
    discrete = False

    def __init__(self, base, lin, sigma: float, S: int | None = None):
        if sigma <= 0:
            raise PreconditionError("sigma must be positive")
        b = np.array(base, dtype=np.float64)
        ln = np.array(lin, dtype=np.float64)
        if b.ndim != 4 or ln.ndim != 5 or ln.shape[:3] != b.shape[:3] or ln.shape[4] != b.shape[3]:
            raise DimensionError("base must be (H, S, A, d) and lin (H, S, A, X, d)")
        self.base = _readonly(b)
        self.lin = _readonly(ln)
        self.sigma = float(sigma)
        self.H, self.S, self.A, self.d = b.shape
        if ln.shape[3] != self.S:
            raise DimensionError("lin density axis must match the state count")

    def mean(self, h, s, a, mu) -> np.ndarray:
        return self.base[h, s, a] + np.asarray(mu, dtype=np.float64) @ self.lin[h, s, a]

    def means(self, h, mu) -> np.ndarray:
        return self.base[h] + np.einsum("x,saxj->saj", np.asarray(mu, dtype=np.float64), self.lin[h])

    def _reject(self, *_, **__):
        raise UnsupportedFamilyError("Gaussian-mean transitions have no discrete kernel")

    kernel = kernel_batch = vertices = evaluate = _reject

    def to_dict(self):
        return {"variant": self.variant, "base": self.base.tolist(),
                "lin": self.lin.tolist(), "sigma": self.sigma}


def family_from_dict(doc: dict) -> TransitionFamily:
    v = doc.get("variant")
    if v == DensityFree.variant:
        return DensityFree(doc["table"])
    if v == ConvexMixture.variant:
        return ConvexMixture(doc["K"])
    if v == Interpolated.variant:
        return Interpolated(doc["weight"], family_from_dict(doc["base"]),
                            family_from_dict(doc["mixture"]))
    if v == LowRank.variant:
        return LowRank(doc["phi_base"], doc["phi_lin"], doc["psi"])
    if v == GaussianMean.variant:
        return GaussianMean(doc["base"], doc["lin"], doc["sigma"])
    raise UnsupportedFamilyError(f"unknown transition variant {v!r}")


class RewardFamily:
    """Known reward ``clip(R0[h, s, a] + <R1[h, s, a], mu>, 0, 1/H)``."""

    def __init__(self, R0, R1):
        r0 = np.array(R0, dtype=np.float64)
        r1 = np.array(R1, dtype=np.float64)
        if r0.ndim != 3 or r1.shape != r0.shape + (r0.shape[1],):
            raise DimensionError(f"R0 must be (H, S, A) and R1 (H, S, A, S); got {r0.shape}, {r1.shape}")
        H = r0.shape[0]
        if r0.min() < 0 or r0.max() > 1.0 / H + 1e-12:
            raise PreconditionError("R0 must lie in [0, 1/H]")
        self.R0 = _readonly(np.clip(r0, 0.0, 1.0 / H))
        self.R1 = _readonly(r1)
        self.H, self.S, self.A = r0.shape

    def evaluate(self, h: int, mu) -> np.ndarray:
        """Reward table ``(S, A)`` at step ``h`` for conditioning density ``mu``."""
        mu = np.asarray(mu, dtype=np.float64)
        return np.clip(self.R0[h] + self.R1[h] @ mu, 0.0, 1.0 / self.H)

    def evaluate_batch(self, h: int, mus) -> np.ndarray:
        mus = np.asarray(mus, dtype=np.float64)
        return np.clip(self.R0[h][None] + np.einsum("sax,px->psa", self.R1[h], mus), 0.0, 1.0 / self.H)

    def lipschitz(self) -> float:
        """Largest spread ``max_x R1 - min_x R1``; exact before clipping."""
        return float(np.max(self.R1.max(axis=-1) - self.R1.min(axis=-1)))

    def to_dict(self):
        return {"R0": self.R0.tolist(), "R1": self.R1.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["R0"], doc["R1"])

    def same_as(self, other: "RewardFamily") -> bool:
        return np.array_equal(self.R0, other.R0) and np.array_equal(self.R1, other.R1)
