"""Finite model classes with a designated true model.

Classes are generated from a seed: the truth is drawn from the requested
transition family and every other member is a structured perturbation of it
(Dirichlet re-draws mixed into the truth's kernel columns), so all members
stay inside the family. The reward is shared by every member.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .core.dynamics import contraction_upper_bound, transition_lipschitz
from .core.families import ConvexMixture, DensityFree, GaussianMean, Interpolated, LowRank, RewardFamily
from .core.model import SCHEMA_VERSION, MeanFieldModel, canonical_json
from .errors import DimensionError, GenerationError, PreconditionError, SchemaVersionError

FAMILIES = ("density_free", "convex_mixture", "interpolated", "low_rank")

# weight of the shared, state-independent component under the contraction flag
CONTRACTION_MIX = 0.7


@dataclass(frozen=True)
class ClassGenSpec:
    S: int
    A: int
    H: int
    size: int
    family: str = "convex_mixture"
    perturbation: float = 0.5
    lt_range: tuple | None = None
    contraction: bool = False
    seed: int = 0
    weight: float = 0.5  # interpolated family only
    rank: int = 3  # low-rank family only
    crowd_aversion: float = 0.5
    max_retries: int = 50

    def __post_init__(self):
        if min(self.S, self.A, self.H, self.size) < 1:
            raise PreconditionError("S, A, H and size must be positive")
        if self.family not in FAMILIES:
            raise PreconditionError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if not 0.0 <= self.perturbation <= 1.0:
            raise PreconditionError("perturbation must lie in [0, 1]")
        if not 0.0 <= self.crowd_aversion <= 1.0:
            raise PreconditionError("crowd_aversion must lie in [0, 1]")
        if self.lt_range is not None:
            lo, hi = self.lt_range
            if lo > hi:
                raise PreconditionError("lt_range must be (low, high) with low <= high")
            object.__setattr__(self, "lt_range", (float(lo), float(hi)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lt_range"] = None if self.lt_range is None else list(self.lt_range)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassGenSpec":
        doc = dict(doc)
        if doc.get("lt_range") is not None:
            doc["lt_range"] = tuple(doc["lt_range"])
        return cls(**doc)


@dataclass(frozen=True)
class ModelClass:
    models: tuple
    truth_index: int
    family: str = "custom"
    seed: int | None = None
    spec: dict | None = field(default=None)

    def __post_init__(self):
        models = tuple(self.models)
        object.__setattr__(self, "models", models)
        if not models:
            raise PreconditionError("a model class needs at least one model")
        if not 0 <= self.truth_index < len(models):
            raise PreconditionError(f"truth_index {self.truth_index} out of range")
        first = models[0]
        for m in models[1:]:
            if (m.S, m.A, m.H) != (first.S, first.A, first.H):
                raise DimensionError("all models in a class must share (S, A, H)")
            if not np.array_equal(m.mu1, first.mu1):
                raise PreconditionError("all models in a class must share mu1")
            if not m.reward.same_as(first.reward):
                raise PreconditionError("all models in a class must share the known reward")

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i) -> MeanFieldModel:
        return self.models[i]

    @property
    def truth(self) -> MeanFieldModel:
        return self.models[self.truth_index]

    @property
    def shape(self):
        m = self.models[0]
        return m.S, m.A, m.H

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "models": [m.to_dict() for m in self.models],
                "truth_index": self.truth_index, "family": self.family,
                "seed": self.seed, "spec": self.spec}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelClass":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported class schema_version {doc.get('schema_version')!r}")
        return cls(tuple(MeanFieldModel.from_dict(d) for d in doc["models"]), int(doc["truth_index"]),
                   doc.get("family", "custom"), doc.get("seed"), doc.get("spec"))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelClass":
        return cls.from_dict(json.loads(text))


def _dir(rng, n, shape):
    return rng.dirichlet(np.ones(n), size=shape)


def _perturb(raw: np.ndarray, scale: float, rng) -> np.ndarray:
    if scale == 0.0:
        return raw.copy()
    return (1.0 - scale) * raw + scale * _dir(rng, raw.shape[-1], raw.shape[:-1])


def _reward(spec: ClassGenSpec, rng) -> RewardFamily:
    H, S, A = spec.H, spec.S, spec.A
    c = spec.crowd_aversion
    R0 = rng.uniform(c, 1.0, size=(H, S, A)) / H
    # crowd aversion: reward drops with the fraction of the population sharing the state
    R1 = np.zeros((H, S, A, S))
    for s in range(S):
        R1[:, s, :, s] = -c / H
    return RewardFamily(R0, R1)


def _raw_tables(spec: ClassGenSpec, rng) -> dict:
    """Unmixed stochastic tables for the truth; every leaf axis is a distribution."""
    H, S, A = spec.H, spec.S, spec.A
    f = spec.family
    if f == "density_free":
        t = {"T": _dir(rng, S, (H, S, A))}
    elif f == "convex_mixture":
        t = {"K": _dir(rng, S, (H, S, A, S))}
    elif f == "interpolated":
        t = {"T": _dir(rng, S, (H, S, A)), "K": _dir(rng, S, (H, S, A, S))}
    else:
        t = {"phi": _dir(rng, spec.rank, (H, S, A, S)), "psi": _dir(rng, S, (H, spec.rank))}
    if spec.contraction:
        t["common"] = _dir(rng, S, (H,))
    return t


def _build(spec: ClassGenSpec, raw: dict):
    H, S, A = spec.H, spec.S, spec.A

    def mix(x, lead):
        if not spec.contraction:
            return x
        c = raw["common"].reshape((H,) + (1,) * lead + (S,))
        return CONTRACTION_MIX * c + (1.0 - CONTRACTION_MIX) * x

    f = spec.family
    if f == "density_free":
        return DensityFree(mix(raw["T"], 2))
    if f == "convex_mixture":
        return ConvexMixture(mix(raw["K"], 3))
    if f == "interpolated":
        return Interpolated(spec.weight, DensityFree(mix(raw["T"], 2)), ConvexMixture(mix(raw["K"], 3)))
    # features are known and shared; only psi is learned
    return LowRank(np.zeros((H, S, A, spec.rank)), raw["phi"], mix(raw["psi"], 1))


def _acceptable(spec: ClassGenSpec, m: MeanFieldModel) -> bool:
    if spec.lt_range is not None:
        lt = transition_lipschitz(m)
        if not spec.lt_range[0] - 1e-12 <= lt <= spec.lt_range[1] + 1e-12:
            return False
    if spec.contraction and contraction_upper_bound(m) >= 1.0:
        return False
    return True


def generate_class(spec: ClassGenSpec, rng: np.random.Generator | None = None) -> ModelClass:
    """Draw a class of ``spec.size`` models around a random true model.

    Raises :class:`GenerationError` if no draw within ``spec.max_retries``
    satisfies the requested ``lt_range`` or contraction certificate.
    """
    if rng is None:
        rng = rngmod.stream(spec.seed, rngmod.CLASS_GEN)
    for _ in range(spec.max_retries):
        mu1 = _dir(rng, spec.S, None)
        reward = _reward(spec, rng)
        truth_raw = _raw_tables(spec, rng)
        truth_index = int(rng.integers(spec.size))
        models = []
        for i in range(spec.size):
            raw = truth_raw if i == truth_index else {
                k: _perturb(v, spec.perturbation, rng) for k, v in truth_raw.items()}
            if spec.family == "low_rank" and i != truth_index:
                raw["phi"] = truth_raw["phi"]
            models.append(MeanFieldModel(mu1, _build(spec, raw), reward))
        if all(_acceptable(spec, m) for m in models):
            return ModelClass(tuple(models), truth_index, spec.family, spec.seed, spec.to_dict())
    raise GenerationError(
        f"no class satisfying lt_range={spec.lt_range} contraction={spec.contraction} "
        f"after {spec.max_retries} draws")


def class_separation(c: ModelClass, probe_count: int, rng: np.random.Generator) -> np.ndarray:
    """Pairwise max TV between members' conditionals over sampled probes.

    Probes cycle through every ``(h, s, a)`` cell before repeating, each with
    a fresh Dirichlet(1) density; so ``probe_count >= H*S*A`` covers all cells.
    """
    if probe_count < 1:
        raise PreconditionError("probe_count must be >= 1")
    S, A, H = c.shape
    n = len(c)
    cells = np.arange(probe_count) % (H * S * A)
    hs, rest = np.divmod(cells, S * A)
    ss, aa = np.divmod(rest, A)
    mus = rng.dirichlet(np.ones(S), size=probe_count)
    out = np.zeros((n, n))
    for h in range(H):
        sel = hs == h
        if not sel.any():
            continue
        idx = np.arange(sel.sum())
        cond = np.stack([m.transition.kernel_batch(h, mus[sel])[idx, ss[sel], aa[sel]] for m in c.models])
        tv = 0.5 * np.abs(cond[:, None] - cond[None, :]).sum(axis=-1).max(axis=-1)
        out = np.maximum(out, tv)
    np.fill_diagonal(out, 0.0)
    return np.maximum(out, out.T)


@dataclass(frozen=True)
class GaussianMeanClass:
    """Finite class of Gaussian-noise models, usable only for Hellinger eluder estimates.

    ``functions[i](h, s, a, mu)`` returns the mean vector in R^d of model ``i``.
    """

    functions: tuple
    sigma: float
    d: int
    S: int
    A: int
    H: int = 1

    def __len__(self):
        return len(self.functions)

    def means(self, h: int, probes) -> np.ndarray:
        """Mean vectors ``(n_functions, n_probes, d)`` at ``(s, a, mu)`` probes."""
        return np.array([[f(h, s, a, mu) for (s, a, mu) in probes] for f in self.functions],
                        dtype=np.float64).reshape(len(self.functions), len(probes), self.d)


def gaussian_mean_class(d: int, means: Sequence, sigma: float, S: int = 1, A: int = 1,
                        H: int = 1) -> GaussianMeanClass:
    """Wrap mean functions (``GaussianMean`` families, callables, or constant vectors).

    Callables take ``(s, a, mu)`` and are step-independent.
    """
    if sigma <= 0:
        raise PreconditionError("sigma must be positive")
    fns: list[Callable] = []
    for g in means:
        if isinstance(g, GaussianMean):
            if g.d != d:
                raise DimensionError(f"mean dimension {g.d} != {d}")
            S, A, H = g.S, g.A, g.H
            fns.append(lambda h, s, a, mu, g=g: g.mean(h, s, a, mu))
        elif callable(g):
            fns.append(lambda h, s, a, mu, g=g: np.asarray(g(s, a, mu), dtype=np.float64))
        else:
            v = np.asarray(g, dtype=np.float64)
            if v.shape != (d,):
                raise DimensionError(f"constant mean must have shape ({d},)")
            fns.append(lambda h, s, a, mu, v=v: v)
    return GaussianMeanClass(tuple(fns), float(sigma), int(d), S, A, H)
