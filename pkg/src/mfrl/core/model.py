"""The mean-field model container, policies, and JSON (de)serialization."""
from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import DimensionError, SchemaVersionError, UnsupportedFamilyError
from .families import RewardFamily, TransitionFamily, family_from_dict
from .simplex import as_density, as_row_stochastic

SCHEMA_VERSION = 1


def canonical_json(doc) -> str:
    """Sorted keys, no whitespace; floats keep their shortest round-trip repr."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


class MeanFieldModel:
    """One candidate finite-horizon mean-field MDP.

    Immutable after construction. ``id`` defaults to a content hash of the
    serialized tables, so two models with identical tables share cache entries.
    """

    __slots__ = ("S", "A", "H", "mu1", "transition", "reward", "id")

    def __init__(self, mu1, transition: TransitionFamily, reward: RewardFamily, id: str | None = None):
        mu1 = as_density(mu1)
        mu1.setflags(write=False)
        S = mu1.size
        if (transition.S, transition.H) != (S, reward.H) or transition.A != reward.A or reward.S != S:
            raise DimensionError(
                f"shape mismatch: mu1 S={S}, transition (H,S,A)=({transition.H},{transition.S},{transition.A}), "
                f"reward (H,S,A)=({reward.H},{reward.S},{reward.A})")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "A", transition.A)
        object.__setattr__(self, "H", transition.H)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        if id is None:
            body = canonical_json(self._body())
            id = hashlib.sha256(body.encode()).hexdigest()[:16]
        object.__setattr__(self, "id", str(id))

    def __setattr__(self, name, value):
        raise AttributeError("MeanFieldModel is immutable")

    def __repr__(self):
        return (f"MeanFieldModel(id={self.id!r}, S={self.S}, A={self.A}, H={self.H}, "
                f"family={self.transition.variant!r})")

    @property
    def discrete(self) -> bool:
        return self.transition.discrete

    def _body(self) -> dict:
        return {"S": self.S, "A": self.A, "H": self.H, "mu1": self.mu1.tolist(),
                "transition": self.transition.to_dict(), "reward": self.reward.to_dict()}

    def to_dict(self) -> dict:
        doc = self._body()
        doc["schema_version"] = SCHEMA_VERSION
        doc["id"] = self.id
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MeanFieldModel":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported model schema_version {doc.get('schema_version')!r}")
        m = cls(doc["mu1"], family_from_dict(doc["transition"]),
                RewardFamily.from_dict(doc["reward"]), id=doc.get("id"))
        if (m.S, m.A, m.H) != (doc["S"], doc["A"], doc["H"]):
            raise DimensionError("declared S/A/H disagree with the tables")
        return m

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MeanFieldModel":
        return cls.from_dict(json.loads(text))


def require_discrete(m: MeanFieldModel) -> None:
    if not m.transition.discrete:
        raise UnsupportedFamilyError(f"{m.transition.variant} models are not supported here")


# --- policies --------------------------------------------------------------

def as_policy(pi, H: int | None = None, S: int | None = None, A: int | None = None) -> np.ndarray:
    """Validate a non-stationary policy of shape ``(H, S, A)`` with stochastic rows."""
    arr = as_row_stochastic(pi, tol=1e-9)
    if arr.ndim != 3:
        raise DimensionError(f"policy must be (H, S, A), got {arr.shape}")
    want = (H, S, A)
    if any(w is not None and w != g for w, g in zip(want, arr.shape)):
        raise DimensionError(f"policy shape {arr.shape} incompatible with {want}")
    return arr


def uniform_policy(H: int, S: int, A: int) -> np.ndarray:
    return np.full((H, S, A), 1.0 / A)


def deterministic_policy(actions, A: int) -> np.ndarray:
    """One-hot policy from an integer array of actions with shape ``(H, S)``."""
    actions = np.asarray(actions, dtype=np.int64)
    return np.eye(A)[actions]


def random_policy(rng: np.random.Generator, H: int, S: int, A: int, alpha: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(A, alpha), size=(H, S))


def policy_fingerprint(pi) -> str:
    """Hash of the policy entries quantized to a 1e-12 grid."""
    q = np.rint(np.asarray(pi, dtype=np.float64) * 1e12).astype(np.int64)
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(q.shape).encode())
    h.update(q.tobytes())
    return h.hexdigest()
