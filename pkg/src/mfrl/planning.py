"""Planning against a known model: best responses, exploitability, the MFC
planner, the proximal fixed-point Nash solver, and the bound-check suite."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .core.distances import tv_distance
from .core.dynamics import (
    batch_policy_values,
    contraction_upper_bound,
    density_flow,
    density_propagate,
    occupancy_flow,
    policy_value,
    q_values,
    transition_lipschitz,
)
from .core.model import MeanFieldModel, as_policy, random_policy, require_discrete, uniform_policy
from .core.simplex import project_simplex
from .errors import DimensionError, PreconditionError

EXHAUSTIVE_CAP = 4096


@dataclass(frozen=True)
class BestResponseResult:
    policy: np.ndarray  # one-hot (H, S, A)
    value: float
    Q: np.ndarray  # (H, S, A)


def best_response(m: MeanFieldModel, cond) -> BestResponseResult:
    """Optimal policy of the MDP obtained by freezing the population flow at ``cond``.

    Ties break toward the lowest action index.
    """
    require_discrete(m)
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape != (m.H, m.S):
        raise DimensionError(f"conditioning flow must be {(m.H, m.S)}, got {cond.shape}")
    Q = np.empty((m.H, m.S, m.A))
    greedy = np.empty((m.H, m.S), dtype=np.int64)
    v = np.zeros(m.S)
    for h in range(m.H - 1, -1, -1):
        Q[h] = m.reward.evaluate(h, cond[h]) + m.transition.kernel(h, cond[h]) @ v
        greedy[h] = np.argmax(Q[h], axis=1)
        v = Q[h][np.arange(m.S), greedy[h]]
    pi = np.eye(m.A)[greedy]
    return BestResponseResult(pi, float(m.mu1 @ v), Q)


def delta_gap(m: MeanFieldModel, pi_tilde, pi) -> float:
    """``J(pi_tilde; flow(pi)) - J(pi; flow(pi))``: gain from deviating to ``pi_tilde``."""
    pi = as_policy(pi, m.H, m.S, m.A)
    flow = density_flow(m, pi)
    return policy_value(pi_tilde, m, flow)[0] - policy_value(pi, m, flow)[0]


def exploitability(m: MeanFieldModel, pi) -> float:
    """Best-response gain against the policy's own flow; exact."""
    pi = as_policy(pi, m.H, m.S, m.A)
    flow = density_flow(m, pi)
    return best_response(m, flow).value - policy_value(pi, m, flow)[0]


# --- mean-field control planner ---------------------------------------------------

@dataclass(frozen=True)
class PlannerBudget:
    exhaustive_cap: int = EXHAUSTIVE_CAP
    restarts: int = 4
    max_iters: int = 100
    damping: float = 0.5
    seed: int = 0

    def key(self):
        return (self.exhaustive_cap, self.restarts, self.max_iters, self.damping, self.seed)


@dataclass(frozen=True)
class MFCPlanResult:
    policy: np.ndarray
    value: float
    method: str  # "exhaustive" or "local_search"


def _all_deterministic(m: MeanFieldModel, lo: int, hi: int) -> np.ndarray:
    """Deterministic policies with indices ``lo..hi-1``; index digits run over (h, s) in C order."""
    idx = np.arange(lo, hi)
    n = m.H * m.S
    digits = np.empty((idx.size, n), dtype=np.int64)
    rest = idx.copy()
    for j in range(n - 1, -1, -1):
        rest, digits[:, j] = np.divmod(rest, m.A)
    return np.eye(m.A)[digits.reshape(-1, m.H, m.S)]


def exhaustive_mfc(m: MeanFieldModel, batch: int = 4096) -> MFCPlanResult:
    """Best deterministic policy by enumeration (first index among ties)."""
    require_discrete(m)
    total = m.A ** (m.S * m.H)
    best_v, best_i = -np.inf, 0
    for lo in range(0, total, batch):
        pis = _all_deterministic(m, lo, min(total, lo + batch))
        vals = batch_policy_values(m, pis)
        k = int(np.argmax(vals))
        if vals[k] > best_v:
            best_v, best_i = float(vals[k]), lo + k
    return MFCPlanResult(_all_deterministic(m, best_i, best_i + 1)[0], best_v, "exhaustive")


def _coordinate_ascent(m: MeanFieldModel, actions: np.ndarray, value: float, max_iters: int):
    """Best single-(h, s) action switch until none improves."""
    H, S, A = m.H, m.S, m.A
    for _ in range(max_iters):
        cand = np.repeat(actions[None], H * S * A, axis=0)
        hh, ss, aa = np.unravel_index(np.arange(H * S * A), (H, S, A))
        cand[np.arange(cand.shape[0]), hh, ss] = aa
        vals = batch_policy_values(m, np.eye(A)[cand])
        k = int(np.argmax(vals))
        if vals[k] <= value + 1e-15:
            break
        actions, value = cand[k], float(vals[k])
    return actions, value


def local_search_mfc(m: MeanFieldModel, budget: PlannerBudget) -> MFCPlanResult:
    """Multi-start local ascent; the incumbent is the best ``J(pi; flow(pi))`` seen.

    Each start runs damped mixing toward the best response to the current
    flow, then coordinate ascent over deterministic policies seeded from
    the best policy visited by the mixing phase.
    """
    require_discrete(m)
    rng = rngmod.stream(budget.seed, rngmod.PLANNER_RESTARTS)
    best_pi, best_v = None, -np.inf
    for r in range(max(1, budget.restarts)):
        pi = uniform_policy(m.H, m.S, m.A) if r == 0 else random_policy(rng, m.H, m.S, m.A)
        start_v = policy_value(pi, m)[0]
        inc_pi, inc_v = pi, start_v
        for _ in range(budget.max_iters):
            br = best_response(m, density_flow(m, pi, cache=None)).policy
            nxt = (1 - budget.damping) * pi + budget.damping * br
            v = policy_value(nxt, m, density_flow(m, nxt, cache=None))[0]
            if v > inc_v:
                inc_pi, inc_v = nxt, v
            if np.max(np.abs(nxt - pi)) < 1e-12:
                break
            pi = nxt
        if inc_v > best_v:
            best_pi, best_v = inc_pi, inc_v
        acts = np.argmax(inc_pi, axis=2)
        acts, v = _coordinate_ascent(m, acts, float(batch_policy_values(m, np.eye(m.A)[acts][None])[0]),
                                     budget.max_iters)
        if v > best_v:
            best_pi, best_v = np.eye(m.A)[acts], v
    return MFCPlanResult(best_pi, best_v, "local_search")


class _PlanCache:
    def __init__(self):
        self._d = {}
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            return self._d.get(key)

    def put(self, key, val):
        with self._lock:
            self._d[key] = val

    def clear(self):
        with self._lock:
            self._d.clear()


PLAN_CACHE = _PlanCache()


def mfc_plan(m: MeanFieldModel, budget: PlannerBudget | None = None) -> MFCPlanResult:
    """Maximize ``J_m(pi; flow_m(pi))``.

    Exhaustive over deterministic policies when ``A**(S*H)`` is within the
    cap, otherwise labeled local search. Results are cached per model id.
    """
    budget = budget or PlannerBudget()
    key = (m.id, budget.key())
    hit = PLAN_CACHE.get(key)
    if hit is not None:
        return hit
    if m.A ** (m.S * m.H) <= budget.exhaustive_cap:
        res = exhaustive_mfc(m)
    else:
        res = local_search_mfc(m, budget)
    PLAN_CACHE.put(key, res)
    return res


def mfc_gap(m: MeanFieldModel, pi, optimum: float | None = None) -> float:
    """``max_pi' J(pi') - J(pi)`` against the exhaustive deterministic optimum."""
    if optimum is None:
        optimum = mfc_plan(m, PlannerBudget(exhaustive_cap=max(EXHAUSTIVE_CAP, m.A ** (m.S * m.H)))).value
    return optimum - policy_value(pi, m)[0]


# --- Nash equilibrium via the proximal fixed point ------------------------------

def gamma_pp_step(m: MeanFieldModel, pi, cond, prox_weight: float = 1.0) -> np.ndarray:
    """Per state, ``argmax_u <Q(s, .), u> - w ||pi(.|s) - u||^2`` over the simplex.

    Closed form: project ``pi(.|s) + Q(s, .) / (2 w)`` onto the simplex, with
    ``Q`` the action values of ``pi`` itself against ``cond``.
    """
    if prox_weight <= 0:
        raise PreconditionError("prox_weight must be positive")
    pi = as_policy(pi, m.H, m.S, m.A)
    Q = q_values(pi, m, cond)
    shifted = (pi + Q / (2.0 * prox_weight)).reshape(-1, m.A)
    return project_simplex(shifted).reshape(m.H, m.S, m.A)


def gamma_ne(m: MeanFieldModel, pi, prox_weight: float = 1.0) -> np.ndarray:
    return gamma_pp_step(m, pi, density_flow(m, pi, cache=None), prox_weight)


def fixed_point_residual(m: MeanFieldModel, pi, prox_weight: float = 1.0) -> float:
    """``max_h ||pi_h - Gamma_NE(pi)_h||_2`` (Frobenius norm over states and actions)."""
    d = np.asarray(pi) - gamma_ne(m, pi, prox_weight)
    return float(np.sqrt((d * d).sum(axis=(1, 2))).max())


def consistency_residual(m: MeanFieldModel, pi, flow) -> float:
    """Largest one-step mismatch ``|flow_{h+1} - Gamma_pop(flow_h, pi_h)|`` and ``|flow_1 - mu1|``."""
    flow = np.asarray(flow, dtype=np.float64)
    res = float(np.max(np.abs(flow[0] - m.mu1)))
    for h in range(m.H - 1):
        res = max(res, float(np.max(np.abs(flow[h + 1] - density_propagate(m, h, flow[h], pi[h])))))
    return res


@dataclass(frozen=True)
class NESolveResult:
    policy: np.ndarray
    flow: np.ndarray
    exploitability: float
    consistency_residual: float
    iterations: int
    converged: bool
    restarts: int
    fixed_point_residual: float = field(default=float("nan"))


def ne_solve(m: MeanFieldModel, damping: float = 0.5, max_iters: int = 10000, tol: float = 1e-10,
             restarts: int = 1, rng: np.random.Generator | None = None,
             prox_weight: float = 1.0) -> NESolveResult:
    """Damped iteration ``pi <- (1 - damping) pi + damping Gamma_NE(pi)``.

    The first start is the uniform policy, later starts are random. A start
    is declared converged when the fixed-point residual is at most ``tol``
    and its exact exploitability is at most ``10 * tol``; otherwise the
    lowest-exploitability policy seen is returned with ``converged=False``.
    """
    require_discrete(m)
    if not 0.0 < damping <= 1.0:
        raise PreconditionError("damping must lie in (0, 1]")
    if rng is None:
        rng = rngmod.stream(0, rngmod.POLICY)
    best = None
    total_iters = 0
    for r in range(max(1, restarts)):
        pi = uniform_policy(m.H, m.S, m.A) if r == 0 else random_policy(rng, m.H, m.S, m.A)
        res = np.inf
        for _ in range(max_iters):
            g = gamma_ne(m, pi, prox_weight)
            d = pi - g
            res = float(np.sqrt((d * d).sum(axis=(1, 2))).max())
            if res <= tol:
                break
            pi = (1.0 - damping) * pi + damping * g
            total_iters += 1
        else:
            res = fixed_point_residual(m, pi, prox_weight)
        expl = exploitability(m, pi)
        ok = res <= tol and expl <= 10 * tol
        cand = (ok, -expl, r, pi, res)
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
        if ok:
            break
    ok, neg_expl, r, pi, res = best
    flow = np.array(density_flow(m, pi, cache=None))
    return NESolveResult(pi, flow, -neg_expl, consistency_residual(m, pi, flow), total_iters,
                         bool(ok), r, res)


# --- inequality verification -----------------------------------------------------

@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    status: str  # "pass", "fail" or "skipped"

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "slack": None if self.status == "skipped" else self.slack, "status": self.status}


@dataclass(frozen=True)
class BoundReport:
    checks: tuple
    L_T: float
    L_r: float
    contraction: float | None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "L_T": self.L_T, "L_r": self.L_r,
                "contraction": self.contraction, "checks": [c.to_dict() for c in self.checks]}


def _step_tv(m1: MeanFieldModel, m2: MeanFieldModel, cond1, cond2) -> np.ndarray:
    """``TV(P1_h(.|s, a, cond1_h), P2_h(.|s, a, cond2_h))`` as ``(H, S, A)``."""
    return np.stack([tv_distance(m1.transition.kernel(h, cond1[h]), m2.transition.kernel(h, cond2[h]))
                     for h in range(m1.H)])


def _weights_geometric(L: float, n: np.ndarray) -> np.ndarray:
    """``((1 + L)^n - 1) / L``, equal to ``n`` at ``L = 0``."""
    if L == 0.0:
        return n.astype(np.float64)
    return np.expm1(n * np.log1p(L)) / L


def bound_check_suite(M: MeanFieldModel, M_tilde: MeanFieldModel, pi, pi_tilde,
                      contraction=None, tol: float = 1e-8) -> BoundReport:
    """Evaluate both sides of the value-difference and model-difference inequalities.

    Expectations are exact (occupancy flows). ``L_T`` is the larger exact
    constant of the two models. ``contraction`` is a certified bound on the
    population operator's Lipschitz constant (< 1); pass ``"auto"`` to use the
    larger certified bound of the two models when it is below 1. Without one,
    the contraction-based checks are reported as skipped.
    """
    require_discrete(M)
    require_discrete(M_tilde)
    if (M.S, M.A, M.H) != (M_tilde.S, M_tilde.A, M_tilde.H):
        raise DimensionError("models must share (S, A, H)")
    if not M.reward.same_as(M_tilde.reward):
        raise PreconditionError("models must share the reward")
    H = M.H
    pi = as_policy(pi, H, M.S, M.A)
    pi_tilde = as_policy(pi_tilde, H, M.S, M.A)
    L_T = max(transition_lipschitz(M), transition_lipschitz(M_tilde))
    L_r = M.reward.lipschitz()
    if isinstance(contraction, str):
        if contraction != "auto":
            raise PreconditionError("contraction must be a number, 'auto' or None")
        c = max(contraction_upper_bound(M), contraction_upper_bound(M_tilde))
        contraction = c if c < 1.0 else None
    elif contraction is not None and not 0.0 <= contraction < 1.0:
        raise PreconditionError("a contraction certificate must lie in [0, 1)")

    checks: list[BoundCheck] = []

    def add(name, lhs, rhs):
        lhs, rhs = float(lhs), float(rhs)
        checks.append(BoundCheck(name, lhs, rhs, "pass" if rhs - lhs >= -tol else "fail"))

    def skip(name):
        checks.append(BoundCheck(name, float("nan"), float("nan"), "skipped"))

    mu = density_flow(M, pi)
    mu_t = density_flow(M_tilde, pi)
    occ = occupancy_flow(pi, M, mu)  # E_{pi, M}
    own = _step_tv(M, M_tilde, mu, mu_t)  # each model at its own flow
    shared = _step_tv(M, M_tilde, mu, mu)  # both at M's flow
    own_h = (occ * own).sum(axis=(1, 2))
    shared_h = (occ * shared).sum(axis=(1, 2))
    steps = np.arange(H)
    remaining = H - 1 - steps  # steps after h

    # value difference, control objective
    J, _ = policy_value(pi, M, mu)
    Jt, _ = policy_value(pi, M_tilde, mu_t)
    add("mfc_value_difference", abs(J - Jt), (1 + L_r * H) * own_h.sum())

    # value difference, exploitability gap
    d_M = policy_value(pi_tilde, M, mu)[0] - J
    d_Mt = policy_value(pi_tilde, M_tilde, mu_t)[0] - Jt
    occ_dev = occupancy_flow(pi_tilde, M, mu)
    dev_h = (occ_dev * own).sum(axis=(1, 2))
    add("mfg_exploitability_difference", abs(d_M - d_Mt), dev_h.sum() + (2 * L_r * H + 1) * own_h.sum())

    # model difference conversion, both directions
    add("model_diff_shared_by_own", shared_h.sum(), (1 + L_T * H) * own_h.sum())
    add("model_diff_own_by_shared", own_h.sum(), ((1 + L_T) ** remaining * shared_h).sum())

    # density error per step
    gap = tv_distance(mu, mu_t)  # (H,)
    for h in range(H - 1):
        add(f"density_error_own[{h + 1}]", gap[h + 1], own_h[:h + 1].sum())
        add(f"density_error_shared[{h + 1}]", gap[h + 1],
            ((1 + L_T) ** (h - steps[:h + 1]) * shared_h[:h + 1]).sum())

    # accumulated density error
    add("accumulated_density_own", gap.sum(), (remaining * own_h).sum())
    add("accumulated_density_shared", gap.sum(), (_weights_geometric(L_T, remaining) * shared_h).sum())

    if contraction is None:
        skip("model_diff_own_by_shared_contraction")
        skip("accumulated_density_contraction")
    else:
        g = float(contraction)
        add("model_diff_own_by_shared_contraction", own_h.sum(), (1 + L_T / (1 - g)) * shared_h.sum())
        add("accumulated_density_contraction", gap.sum(), shared_h.sum() / (1 - g))
    return BoundReport(tuple(checks), L_T, L_r, contraction)
