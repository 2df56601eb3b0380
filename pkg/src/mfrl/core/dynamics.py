"""Exact mean-field dynamics: population flows, occupancies, values, sampling."""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, NumericalConsistencyError
from .distances import tv_distance
from .model import MeanFieldModel, as_policy, policy_fingerprint, require_discrete

_DRIFT_TOL = 1e-6


def density_propagate(m: MeanFieldModel, h: int, mu, pi_h) -> np.ndarray:
    """One population step ``sum_{s,a} mu(s) pi_h(a|s) P_h(.|s, a, mu)``."""
    require_discrete(m)
    mu = np.asarray(mu, dtype=np.float64)
    pi_h = np.asarray(pi_h, dtype=np.float64)
    if mu.shape != (m.S,) or pi_h.shape != (m.S, m.A):
        raise DimensionError(f"expected mu {(m.S,)} and pi_h {(m.S, m.A)}, got {mu.shape}, {pi_h.shape}")
    nxt = np.einsum("s,sa,san->n", mu, pi_h, m.transition.kernel(h, mu))
    total = nxt.sum()
    if abs(total - 1.0) > _DRIFT_TOL:
        raise NumericalConsistencyError(f"propagated mass {total!r} drifted from 1")
    return np.clip(nxt, 0.0, None) / total


class FlowCache:
    """Thread-safe LRU map ``(model id, policy fingerprint) -> density flow``."""

    def __init__(self, maxsize: int = 200_000):
        self.maxsize = maxsize
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            flow = self._data.get(key)
            if flow is not None:
                self._data.move_to_end(key)
                self.hits += 1
            else:
                self.misses += 1
            return flow

    def put(self, key, flow):
        with self._lock:
            self._data[key] = flow
            self._data.move_to_end(key)
            while len(self._data) > self.maxsize:
                self._data.popitem(last=False)

    def clear(self):
        with self._lock:
            self._data.clear()
            self.hits = self.misses = 0


FLOW_CACHE = FlowCache()


def density_flow(m: MeanFieldModel, pi, cache: FlowCache | None = FLOW_CACHE) -> np.ndarray:
    """Population flow ``(H, S)`` induced by ``pi`` in ``m``, starting at ``m.mu1``.

    Results are memoized per ``(m.id, policy_fingerprint(pi))`` and returned
    read-only; pass ``cache=None`` to bypass.
    """
    require_discrete(m)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (m.H, m.S, m.A):
        raise DimensionError(f"policy shape {pi.shape} != {(m.H, m.S, m.A)}")
    key = None
    if cache is not None:
        key = (m.id, policy_fingerprint(pi))
        hit = cache.get(key)
        if hit is not None:
            return hit
    flow = np.empty((m.H, m.S))
    flow[0] = m.mu1
    for h in range(m.H - 1):
        flow[h + 1] = density_propagate(m, h, flow[h], pi[h])
    flow.setflags(write=False)
    if cache is not None:
        cache.put(key, flow)
    return flow


def _check_cond(m, cond):
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != (m.H, m.S):
        raise DimensionError(f"conditioning flow must be {(m.H, m.S)}, got {cond.shape}")
    return cond


def occupancy_flow(behavior, m: MeanFieldModel, cond) -> np.ndarray:
    """State-action occupancies ``(H, S, A)`` of ``behavior`` under ``P(.|., ., cond_h)``."""
    require_discrete(m)
    pi = as_policy(behavior, m.H, m.S, m.A)
    cond = _check_cond(m, cond)
    occ = np.empty((m.H, m.S, m.A))
    occ[0] = m.mu1[:, None] * pi[0]
    for h in range(m.H - 1):
        state = np.einsum("sa,san->n", occ[h], m.transition.kernel(h, cond[h]))
        occ[h + 1] = state[:, None] * pi[h + 1]
    return occ


def q_values(pi, m: MeanFieldModel, cond) -> np.ndarray:
    """``Q^pi_h(s, a)`` for the fixed-flow MDP defined by ``cond``: ``(H, S, A)``."""
    require_discrete(m)
    pi = np.asarray(pi, dtype=np.float64)
    cond = _check_cond(m, cond)
    Q = np.empty((m.H, m.S, m.A))
    v_next = np.zeros(m.S)
    for h in range(m.H - 1, -1, -1):
        Q[h] = m.reward.evaluate(h, cond[h]) + m.transition.kernel(h, cond[h]) @ v_next
        v_next = (pi[h] * Q[h]).sum(axis=1)
    return Q


def policy_value(pi, m: MeanFieldModel, cond=None):
    """Return ``(J, V)``: expected return and per-step state values ``V[h, s]``.

    With ``cond=None`` the policy's own flow ``density_flow(m, pi)`` is used.
    """
    require_discrete(m)
    pi = as_policy(pi, m.H, m.S, m.A)
    if cond is None:
        cond = density_flow(m, pi)
    Q = q_values(pi, m, cond)
    V = (pi * Q).sum(axis=2)
    return float(m.mu1 @ V[0]), V


# --- batched versions over many policies (planning oracles) ------------------

def batch_density_flows(m: MeanFieldModel, pis) -> np.ndarray:
    """Flows ``(P, H, S)`` for a stack of policies ``(P, H, S, A)``."""
    require_discrete(m)
    pis = np.asarray(pis, dtype=np.float64)
    P = pis.shape[0]
    flows = np.empty((P, m.H, m.S))
    flows[:, 0] = m.mu1
    for h in range(m.H - 1):
        K = m.transition.kernel_batch(h, flows[:, h])
        nxt = np.einsum("ps,psa,psan->pn", flows[:, h], pis[:, h], K)
        flows[:, h + 1] = np.clip(nxt, 0.0, None) / nxt.sum(axis=1, keepdims=True)
    return flows


def batch_policy_values(m: MeanFieldModel, pis, conds=None) -> np.ndarray:
    """``J_m(pi_p; cond_p)`` for each stacked policy; own flows when ``conds`` is None."""
    require_discrete(m)
    pis = np.asarray(pis, dtype=np.float64)
    if conds is None:
        conds = batch_density_flows(m, pis)
    conds = np.asarray(conds, dtype=np.float64)
    v = np.zeros((pis.shape[0], m.S))
    for h in range(m.H - 1, -1, -1):
        K = m.transition.kernel_batch(h, conds[:, h])
        R = m.reward.evaluate_batch(h, conds[:, h])
        Q = R + np.einsum("psan,pn->psa", K, v)
        v = (pis[:, h] * Q).sum(axis=2)
    return v @ m.mu1


# --- sampling ----------------------------------------------------------------

def categorical(rng: np.random.Generator, probs) -> np.ndarray:
    """One exact categorical draw per row of ``probs`` (inverse CDF)."""
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[..., -1:]
    u = rng.random(probs.shape[:-1])
    return (u[..., None] >= cdf).sum(axis=-1)


@dataclass(frozen=True)
class Trajectories:
    """``n`` sampled episodes: states ``(n, H+1)``, actions and rewards ``(n, H)``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def sample_trajectories(behavior, population, m: MeanFieldModel, rng: np.random.Generator,
                        n: int) -> Trajectories:
    """Representative-agent episodes.

    The population plays ``population`` (its flow conditions every transition
    and reward); the observed agent plays ``behavior``. Equal policies give
    on-policy sampling.
    """
    require_discrete(m)
    beh = as_policy(behavior, m.H, m.S, m.A)
    flow = density_flow(m, as_policy(population, m.H, m.S, m.A))
    states = np.empty((n, m.H + 1), dtype=np.int64)
    actions = np.empty((n, m.H), dtype=np.int64)
    rewards = np.empty((n, m.H))
    states[:, 0] = categorical(rng, np.broadcast_to(m.mu1, (n, m.S)))
    for h in range(m.H):
        s = states[:, h]
        a = categorical(rng, beh[h, s])
        actions[:, h] = a
        rewards[:, h] = m.reward.evaluate(h, flow[h])[s, a]
        states[:, h + 1] = categorical(rng, m.transition.kernel(h, flow[h])[s, a])
    return Trajectories(states, actions, rewards)


def sample_trajectory(behavior, population, m: MeanFieldModel, rng: np.random.Generator):
    """A single episode as a list of ``(s_h, a_h, r_h, s_{h+1})`` tuples."""
    tr = sample_trajectories(behavior, population, m, rng, 1)
    return [(int(tr.states[0, h]), int(tr.actions[0, h]), float(tr.rewards[0, h]),
             int(tr.states[0, h + 1])) for h in range(m.H)]


# --- Lipschitz and contraction constants ---------------------------------------

@dataclass(frozen=True)
class LipschitzReport:
    """Transition/reward Lipschitz constants and population-operator bounds.

    ``L_T`` and ``L_r`` are exact (``L_r`` before clipping). ``gamma_lower`` is
    a sampled lower bound on the population operator's TV Lipschitz constant
    (an estimate); ``gamma_upper`` is a certified upper bound, the smaller of
    the trivial ``1 + L_T`` and the Dobrushin-coefficient bound.
    """

    L_T: float
    L_r: float
    gamma_lower: float
    gamma_upper: float

    @property
    def gamma_trivial(self) -> float:
        return 1.0 + self.L_T

    @property
    def contraction_certified(self) -> bool:
        return self.gamma_upper < 1.0


def _pairwise_tv_max(v: np.ndarray, axis: int) -> np.ndarray:
    """``max_{i,j} TV(v[..i..], v[..j..])`` over ``axis`` (distribution on the last axis)."""
    a = np.expand_dims(v, axis)
    b = np.expand_dims(v, axis + 1)
    return (0.5 * np.abs(a - b).sum(axis=-1)).max(axis=(axis, axis + 1))


def transition_lipschitz(m: MeanFieldModel) -> float:
    """Exact TV-to-TV Lipschitz constant of the transition in the density."""
    require_discrete(m)
    V = m.transition.vertices()  # (H, S, A, X, S')
    return float(_pairwise_tv_max(V, 3).max())


def contraction_upper_bound(m: MeanFieldModel) -> float:
    """Certified bound on ``sup_{pi, mu != mu'} TV(G(mu), G(mu')) / TV(mu, mu')``.

    Splits ``G(mu) - G(mu')`` into a move of the mixing weights (bounded by
    the Dobrushin coefficient of the state kernel, itself at most the largest
    TV between any two vertex rows at the same density vertex) plus the
    density dependence of the kernel (bounded by the per-step ``L_T``).
    """
    require_discrete(m)
    V = m.transition.vertices()
    H, S, A = m.H, m.S, m.A
    lt = _pairwise_tv_max(V, 3).max(axis=(1, 2))  # per step
    rows = V.transpose(0, 3, 1, 2, 4).reshape(H, S, S * A, S)  # (h, x, (s,a), s')
    dob = _pairwise_tv_max(rows, 2).max(axis=1)
    return float(np.max(dob + lt))


def lipschitz_constants(m: MeanFieldModel, rng: np.random.Generator | None = None,
                        n_samples: int = 2000) -> LipschitzReport:
    require_discrete(m)
    if rng is None:
        rng = np.random.Generator(np.random.Philox(0))
    L_T = transition_lipschitz(m)
    L_r = m.reward.lipschitz()
    best = 0.0
    for h in range(m.H):
        mus = rng.dirichlet(np.ones(m.S), size=n_samples)
        nus = rng.dirichlet(np.ones(m.S), size=n_samples)
        # vertex pairs often realize the supremum
        k = min(n_samples, m.S * m.S)
        xs = rng.integers(0, m.S, size=(2, k))
        mus[:k] = np.eye(m.S)[xs[0]]
        nus[:k] = np.eye(m.S)[xs[1]]
        pis = rng.dirichlet(np.ones(m.A), size=(n_samples, m.S))
        K1 = m.transition.kernel_batch(h, mus)
        K2 = m.transition.kernel_batch(h, nus)
        g1 = np.einsum("ps,psa,psan->pn", mus, pis, K1)
        g2 = np.einsum("ps,psa,psan->pn", nus, pis, K2)
        den = tv_distance(mus, nus)
        ok = den > 1e-9
        if ok.any():
            best = max(best, float(np.max(tv_distance(g1, g2)[ok] / den[ok])))
    upper = min(1.0 + L_T, contraction_upper_bound(m))
    return LipschitzReport(L_T=L_T, L_r=L_r, gamma_lower=best, gamma_upper=upper)
