"""Optimistic maximum-likelihood model learning for mean-field control and games,
and the regret-to-PAC policy selection step.

Iterations ``k`` are 1-based (``k = 1..K``); steps ``h`` are 0-based.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .classes import ModelClass
from .core.dynamics import density_flow, policy_value, sample_trajectories
from .core.model import MeanFieldModel, as_policy, require_discrete, uniform_policy
from .errors import PreconditionError
from .planning import (
    EXHAUSTIVE_CAP,
    PlannerBudget,
    best_response,
    exhaustive_mfc,
    exploitability,
    mfc_plan,
    ne_solve,
)

PROB_FLOOR = 1e-12
MAIN, DEVIANT = "main", "deviant"


# --- data ------------------------------------------------------------------------

@dataclass
class TransitionDataset:
    """Append-only transition records, one per (iteration, step, role).

    Each record comes from its own freshly sampled trajectory. The policy log
    keeps ``(pi^k, pi_tilde^k)`` per iteration (``pi_tilde`` is None for control).
    """

    H: int
    main: list = field(default_factory=list)  # per k: int array (H, 3) of (s, a, s')
    deviant: list = field(default_factory=list)  # per k: (H, 3) or None
    policies: list = field(default_factory=list)  # per k: (pi, pi_tilde)

    def __len__(self):
        return len(self.main)

    def append(self, pi, main, pi_tilde=None, deviant=None):
        main = np.asarray(main, dtype=np.int64)
        if main.shape != (self.H, 3):
            raise PreconditionError(f"need exactly one main record per step, got shape {main.shape}")
        if deviant is not None:
            deviant = np.asarray(deviant, dtype=np.int64)
            if deviant.shape != (self.H, 3):
                raise PreconditionError("need exactly one deviant record per step")
        self.main.append(main)
        self.deviant.append(deviant)
        self.policies.append((np.asarray(pi), None if pi_tilde is None else np.asarray(pi_tilde)))

    @property
    def records(self) -> list:
        """Flat ``(k, h, s, a, s_next, role)`` tuples."""
        out = []
        for k, (mn, dv) in enumerate(zip(self.main, self.deviant), start=1):
            for role, arr in ((MAIN, mn), (DEVIANT, dv)):
                if arr is None:
                    continue
                for h in range(self.H):
                    s, a, sn = (int(v) for v in arr[h])
                    out.append((k, h, s, a, sn, role))
        return out


def collect_iteration(truth: MeanFieldModel, pi, rng: np.random.Generator, pi_tilde=None):
    """One record per step, each from a fresh trajectory sampled under ``truth``.

    Main records follow ``pi`` in the population of ``pi``; deviant records
    follow ``pi_tilde`` in the population of ``pi``.
    """
    H = truth.H
    idx = np.arange(H)

    def take(behavior):
        tr = sample_trajectories(behavior, pi, truth, rng, H)
        return np.stack([tr.states[idx, idx], tr.actions[idx, idx], tr.states[idx, idx + 1]], axis=1)

    main = take(pi)
    dev = None if pi_tilde is None else take(pi_tilde)
    return main, dev


def _iteration_loglik(m: MeanFieldModel, data: TransitionDataset, i: int) -> float:
    """Log-likelihood of iteration ``i`` (0-based index) under ``m``, conditioned on
    the flow of the logged ``pi^i`` in ``m`` itself."""
    pi, _ = data.policies[i]
    flow = density_flow(m, pi)
    total = 0.0
    for arr in (data.main[i], data.deviant[i]):
        if arr is None:
            continue
        for h in range(m.H):
            s, a, sn = arr[h]
            p = m.transition.kernel(h, flow[h])[s, a, sn]
            total += math.log(max(p, PROB_FLOOR))
    return total


def mle_loss(m: MeanFieldModel, data: TransitionDataset, upto_k: int | None = None) -> float:
    """Sum of floored log transition probabilities over iterations ``1..upto_k``."""
    require_discrete(m)
    n = len(data) if upto_k is None else min(int(upto_k), len(data))
    total = 0.0
    for i in range(n):
        total += _iteration_loglik(m, data, i)
    return total


@dataclass(frozen=True)
class ConfidenceSet:
    members: tuple
    threshold: float
    scores: tuple

    def __contains__(self, i):
        return i in self.members

    def __len__(self):
        return len(self.members)


def confidence_threshold(n_models: int, K: int, H: int, delta: float) -> float:
    if not 0 < delta < 1:
        raise PreconditionError("delta must lie in (0, 1)")
    if K < 1 or H < 1:
        raise PreconditionError("K and H must be >= 1")
    return math.log(2 * n_models * K * H / delta)


def confidence_from_scores(scores, threshold: float) -> ConfidenceSet:
    scores = tuple(float(s) for s in scores)
    top = max(scores)
    members = tuple(i for i, s in enumerate(scores) if s >= top - threshold)
    return ConfidenceSet(members, threshold, scores)


def confidence_set(c: ModelClass, data: TransitionDataset, k: int, K: int, H: int,
                   delta: float) -> ConfidenceSet:
    """Models whose log-likelihood on iterations ``1..k`` is within
    ``ln(2 |M| K H / delta)`` of the best."""
    thr = confidence_threshold(len(c), K, H, delta)
    return confidence_from_scores([mle_loss(m, data, k) for m in c.models], thr)


# --- regret to PAC ---------------------------------------------------------------

@dataclass(frozen=True)
class Regret2PACResult:
    policy: np.ndarray
    index: int  # index into the candidate list
    picks: tuple
    estimates: tuple
    trajectories: int


def regret2pac_sizes(epsilon: float, delta: float) -> tuple:
    """``(N, n)``: number of sampled candidates and trajectories per candidate."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise PreconditionError("epsilon and delta must lie in (0, 1)")
    N = max(1, math.ceil(math.log(1.0 / delta) / math.log(1.5) - 1e-12))
    n = math.ceil(16.0 / epsilon ** 2 * math.log(2 * N / delta))
    return N, n


def regret2pac(candidates, env: MeanFieldModel, epsilon: float, delta: float,
               rng: np.random.Generator) -> Regret2PACResult:
    """Sample ``N`` candidates uniformly with replacement, estimate each by the
    mean on-policy return in ``env``, return the empirical best (first on ties)."""
    candidates = list(candidates)
    if not candidates:
        raise PreconditionError("no candidate policies")
    N, n = regret2pac_sizes(epsilon, delta)
    picks = rng.integers(0, len(candidates), size=N)
    est = []
    for k in picks:
        pi = candidates[int(k)]
        est.append(float(sample_trajectories(pi, pi, env, rng, n).returns.mean()))
    best = int(np.argmax(est))
    idx = int(picks[best])
    return Regret2PACResult(candidates[idx], idx, tuple(int(k) for k in picks), tuple(est), N * n)


# --- learning loops ------------------------------------------------------------------

TRACE_COLUMNS = ("k", "conf_set_size", "truth_in_set", "optimistic_value_or_gap",
                 "true_eopt_or_ene", "ne_converged", "wallclock_ms")


@dataclass
class RunTrace:
    mode: str
    seed: int
    rows: list = field(default_factory=list)  # dicts with TRACE_COLUMNS plus model indices

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> list:
        return [r[name] for r in self.rows]

    @property
    def truth_always_in_set(self) -> bool:
        return all(r["truth_in_set"] for r in self.rows)


@dataclass(frozen=True)
class RunResult:
    policy: np.ndarray
    trace: RunTrace
    final_metric: float  # true E_Opt (control) or E_NE (game) of the returned policy
    trajectories: int
    returned_k: int  # iteration whose policy was returned (policy pi^{k+1})


class _Scores:
    """Incremental per-model log-likelihoods, bit-identical to :func:`mle_loss`."""

    def __init__(self, c: ModelClass):
        self.c = c
        self.values = [0.0] * len(c)

    def update(self, data: TransitionDataset):
        i = len(data) - 1
        self.values = [v + _iteration_loglik(m, data, i) for v, m in zip(self.values, self.c.models)]


def _check_class(c: ModelClass):
    for m in c.models:
        require_discrete(m)


def _argmax_first(values) -> int:
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


def run_mfc(c: ModelClass, K: int, delta: float, epsilon: float, budget: PlannerBudget | None = None,
            seed: int = 0, initial_policy=None, record_timing: bool = False) -> RunResult:
    """Optimistic MLE for mean-field control.

    Each iteration samples ``H`` fresh trajectories of ``pi^k`` under the true
    model (one record each), rebuilds the confidence set, and plans
    optimistically: ``pi^{k+1}`` is the planner's policy of the member with
    the largest planned value. Returns the regret-to-PAC pick among
    ``pi^2..pi^{K+1}``.
    """
    _check_class(c)
    if K < 1:
        raise PreconditionError("K must be >= 1")
    budget = budget or PlannerBudget(seed=seed)
    S, A, H = c.shape
    truth = c.truth
    traj_rng = rngmod.stream(seed, rngmod.TRAJECTORY)
    r2p_rng = rngmod.stream(seed, rngmod.REGRET2PAC)
    optimum = exhaustive_mfc(truth).value if A ** (S * H) <= max(EXHAUSTIVE_CAP, budget.exhaustive_cap) \
        else mfc_plan(truth, budget).value
    thr = confidence_threshold(len(c), K, H, delta)
    pi = as_policy(uniform_policy(H, S, A) if initial_policy is None else initial_policy, H, S, A)
    data = TransitionDataset(H)
    scores = _Scores(c)
    trace = RunTrace("mfc", seed)
    candidates = []
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        main, _ = collect_iteration(truth, pi, traj_rng)
        data.append(pi, main)
        scores.update(data)
        cs = confidence_from_scores(scores.values, thr)
        plans = [mfc_plan(c.models[i], budget) for i in cs.members]
        j = _argmax_first([p.value for p in plans])
        pi = plans[j].policy
        candidates.append(pi)
        trace.rows.append({
            "k": k, "conf_set_size": len(cs), "truth_in_set": c.truth_index in cs,
            "optimistic_value_or_gap": plans[j].value,
            "true_eopt_or_ene": optimum - policy_value(pi, truth)[0],
            "ne_converged": True, "wallclock_ms": _elapsed(t0, record_timing),
            "model_index": cs.members[j], "planner": plans[j].method,
        })
    pick = regret2pac(candidates, truth, epsilon, delta, r2p_rng)
    final = optimum - policy_value(pick.policy, truth)[0]
    return RunResult(pick.policy, trace, final, K * H + pick.trajectories, pick.index + 1)


@dataclass(frozen=True)
class NEParams:
    damping: float = 0.5
    max_iters: int = 10000
    tol: float = 1e-10
    restarts: int = 3
    prox_weight: float = 1.0

    def key(self):
        return (self.damping, self.max_iters, self.tol, self.restarts, self.prox_weight)


def run_mfg(c: ModelClass, K: int, delta: float, ne: NEParams | None = None, seed: int = 0,
            initial_policy=None, record_timing: bool = False) -> RunResult:
    """Optimistic MLE for mean-field games.

    Each iteration samples ``H`` main records of ``pi^k`` and ``H`` deviant
    records of ``pi_tilde^k`` (both in the population of ``pi^k``), draws
    ``M^{k+1}`` uniformly from the confidence set, takes its Nash policy
    ``pi^{k+1}``, then finds the member and best response with the largest
    deviation gain. Returns the ``pi^{k+1}`` with the smallest such gain.
    """
    _check_class(c)
    if K < 1:
        raise PreconditionError("K must be >= 1")
    ne = ne or NEParams()
    S, A, H = c.shape
    truth = c.truth
    traj_rng = rngmod.stream(seed, rngmod.TRAJECTORY)
    pick_rng = rngmod.stream(seed, rngmod.MODEL_PICK)
    thr = confidence_threshold(len(c), K, H, delta)
    pi = as_policy(uniform_policy(H, S, A) if initial_policy is None else initial_policy, H, S, A)
    pi_t = pi
    data = TransitionDataset(H)
    scores = _Scores(c)
    trace = RunTrace("mfg", seed)
    ne_cache: dict = {}
    best = None  # (gap, k, policy)
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        main, dev = collect_iteration(truth, pi, traj_rng, pi_t)
        data.append(pi, main, pi_t, dev)
        scores.update(data)
        cs = confidence_from_scores(scores.values, thr)
        mi = cs.members[int(pick_rng.integers(len(cs)))]
        if mi not in ne_cache:
            ne_cache[mi] = ne_solve(c.models[mi], ne.damping, ne.max_iters, ne.tol, ne.restarts,
                                    rngmod.stream(seed, rngmod.POLICY, mi), ne.prox_weight)
        sol = ne_cache[mi]
        pi = sol.policy
        gains, brs = [], []
        for i in cs.members:
            m = c.models[i]
            flow = density_flow(m, pi)
            br = best_response(m, flow)
            gains.append(br.value - policy_value(pi, m, flow)[0])
            brs.append(br.policy)
        j = _argmax_first(gains)
        gap = gains[j]
        pi_t = brs[j]
        true_ene = exploitability(truth, pi)
        trace.rows.append({
            "k": k, "conf_set_size": len(cs), "truth_in_set": c.truth_index in cs,
            "optimistic_value_or_gap": gap, "true_eopt_or_ene": true_ene,
            "ne_converged": sol.converged, "wallclock_ms": _elapsed(t0, record_timing),
            "model_index": mi, "witness_index": cs.members[j],
        })
        if best is None or gap < best[0]:
            best = (gap, k, pi, true_ene)
    return RunResult(best[2], trace, best[3], 2 * K * H, best[1])


def _elapsed(t0: float, record: bool) -> int:
    # timing breaks byte-identical reruns, so it is opt-in
    return int(round((time.perf_counter() - t0) * 1000)) if record else 0
