"""Weak-independence sequences and model-based eluder dimension estimates.

A problem is a finite function class evaluated on a finite probe set, stored
as the tensor ``dist[i, j, x] = D(f_i, f_j)(x)``. A probe ``x`` is
alpha-weakly-eps'-independent of a history when some ordered pair ``(i, j)``
has ``sum_history D^2 <= eps'^2`` but ``D(x) > alpha * eps'``. A sequence is
independent when every element is, for one common ``eps' >= epsilon``.

Internally thresholds are handled as ``e2 = eps'^2`` and history sums are
left folds in ascending probe order, so the greedy estimator and the exact
oracle make bit-identical comparisons. Dimension estimates on a finite probe
set are lower bounds of the dimension over the full domain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classes import GaussianMeanClass, ModelClass
from .core.distances import gaussian_hellinger, hellinger_distance, tv_distance
from .errors import PreconditionError, SizeError, UnsupportedFamilyError

MAX_BRUTE_PROBES = 10
MAX_BRUTE_FUNCTIONS = 8
GRID_RATIO = 1.25
GRID_STEPS = 16
BEAM_WIDTH = 4


@dataclass(frozen=True)
class EluderProblem:
    dist: np.ndarray  # (F, F, X)
    alpha: float = 1.0
    epsilon: float = 0.1
    C: float = 1.0
    distance: str = "tv"
    probes: tuple = ()

    def __post_init__(self):
        d = np.array(self.dist, dtype=np.float64)
        if d.ndim != 3 or d.shape[0] != d.shape[1]:
            raise PreconditionError(f"dist must be (F, F, X), got {d.shape}")
        if d.shape[2] < 1:
            raise PreconditionError("probe set must be nonempty")
        if self.alpha < 1:
            raise PreconditionError("alpha must be >= 1")
        if self.epsilon <= 0:
            raise PreconditionError("epsilon must be > 0")
        d.setflags(write=False)
        object.__setattr__(self, "dist", d)
        if not self.probes:
            object.__setattr__(self, "probes", tuple(range(d.shape[2])))

    @property
    def n_functions(self) -> int:
        return self.dist.shape[0]

    @property
    def n_probes(self) -> int:
        return self.dist.shape[2]

    @classmethod
    def from_distributions(cls, values, distance: str = "tv", alpha: float = 1.0,
                           epsilon: float = 0.1, probes=()) -> "EluderProblem":
        """``values[i, x]`` is the distribution ``f_i(x)``: array ``(F, X, S)``."""
        v = np.asarray(values, dtype=np.float64)
        if distance == "tv":
            dist = tv_distance(v[:, None], v[None, :])
        elif distance == "hellinger":
            dist = hellinger_distance(v[:, None], v[None, :])
        else:
            raise PreconditionError(f"unknown distance {distance!r}")
        return cls(np.asarray(dist), alpha, epsilon, 1.0, distance, tuple(probes))

    @classmethod
    def from_gaussian_means(cls, means, sigma: float, alpha: float = 1.0, epsilon: float = 0.1,
                            probes=()) -> "EluderProblem":
        """``means[i, x]`` is the mean vector of model ``i`` at probe ``x``: ``(F, X, d)``."""
        m = np.asarray(means, dtype=np.float64)
        dist = gaussian_hellinger(m[:, None], m[None, :], sigma)
        return cls(np.asarray(dist), alpha, epsilon, 1.0, "hellinger", tuple(probes))


@dataclass(frozen=True)
class IndependentSequence:
    points: tuple  # probe indices in sequence order
    witnesses: tuple  # per point (i, j, eps_prime)
    eps_prime: float | None = None
    e2: float | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)


# --- core predicate --------------------------------------------------------

def _fold(d2: np.ndarray, members) -> np.ndarray:
    """Left-fold sum of ``d2[..., x]`` over ``members`` in ascending order."""
    out = np.zeros(d2.shape[:-1])
    for x in sorted(members):
        out = out + d2[..., x]
    return out


def _witness(p: EluderProblem, x: int, history, e2: float):
    d2 = p.dist * p.dist
    sums = _fold(d2, set(history))
    thr = p.alpha * math.sqrt(e2)
    ok = (sums <= e2) & (p.dist[:, :, x] > thr)
    hits = np.argwhere(ok)  # row-major = lexicographic over ordered pairs
    if hits.size == 0:
        return None
    return int(hits[0, 0]), int(hits[0, 1])


def independence_test(p: EluderProblem, x: int, history, eps_prime: float):
    """First ordered pair ``(f1, f2)`` certifying independence of ``x``, else None."""
    if eps_prime < p.epsilon:
        raise PreconditionError("eps_prime must be >= epsilon")
    return _witness(p, int(x), list(history), float(eps_prime) ** 2)


def verify_sequence(p: EluderProblem, seq: IndependentSequence) -> bool:
    """Re-check every witness inequality from scratch."""
    if not seq.points:
        return True
    e2 = seq.e2 if seq.e2 is not None else seq.eps_prime ** 2
    if e2 < p.epsilon ** 2:
        return False
    d2 = p.dist * p.dist
    thr = p.alpha * math.sqrt(e2)
    for t, (x, (i, j, _)) in enumerate(zip(seq.points, seq.witnesses)):
        if _fold(d2[i, j], set(seq.points[:t])) > e2 or not p.dist[i, j, x] > thr:
            return False
    return True


def default_grid(epsilon: float) -> np.ndarray:
    return epsilon * GRID_RATIO ** np.arange(GRID_STEPS + 1)


# --- greedy lower bound ------------------------------------------------------

def _pair_rows(p: EluderProblem):
    """Off-diagonal ordered pairs in lexicographic order and their distance rows."""
    F = p.n_functions
    ii, jj = np.nonzero(~np.eye(F, dtype=bool))
    rows = p.dist[ii, jj]  # (pairs, X), lexicographic order
    return ii, jj, rows


def _scan(p: EluderProblem, e2s: np.ndarray) -> np.ndarray:
    """In-order scan, vectorized over thresholds: insertion ranks ``(E, X)``, -1 = skipped."""
    _, _, rows = _pair_rows(p)
    d2 = rows * rows
    E, X = e2s.size, p.n_probes
    big = rows[None, :, :] > (p.alpha * np.sqrt(e2s))[:, None, None]  # (E, pairs, X)
    rank = np.full((E, X), -1)
    count = np.zeros(E, dtype=np.int64)
    sums = np.zeros((E, rows.shape[0]))
    for x in range(X):
        take = ((sums <= e2s[:, None]) & big[:, :, x]).any(axis=1)
        rank[take, x] = count[take]
        count += take
        sums = np.where(take[:, None], sums + d2[None, :, x], sums)
    return rank


def _beam(p: EluderProblem, e2s: np.ndarray, width: int) -> np.ndarray:
    """Beam search over probe sets, vectorized over thresholds.

    Each layer extends every kept set by one independent probe and keeps the
    ``width`` extensions that leave the most pairs under budget. Sets are
    deduplicated by a random 64-bit hash; history sums are refolded exactly
    (ascending order) for the kept sets.
    """
    _, _, rows = _pair_rows(p)
    d2 = rows * rows
    E, X, R, B = e2s.size, p.n_probes, rows.shape[0], width
    big = rows[None, :, :] > (p.alpha * np.sqrt(e2s))[:, None, None]  # (E, R, X)
    w = np.random.Generator(np.random.Philox(0)).integers(1, 2 ** 63, size=X, dtype=np.int64).astype(np.uint64)
    member = np.zeros((E, B, X), dtype=bool)
    rank = np.full((E, B, X), -1)
    hashes = np.zeros((E, B), dtype=np.uint64)
    valid = np.zeros((E, B), dtype=bool)
    valid[:, 0] = True
    sums = np.zeros((E, B, R))
    best = np.full((E, X), -1)
    ei = np.arange(E)[:, None]
    for step in range(X):
        alive = sums <= e2s[:, None, None]
        indep = (alive[..., None] & big[:, None]).any(axis=2) & ~member & valid[..., None]  # (E, B, X)
        if not indep.any():
            break
        after = ((sums[..., None] + d2[None, None]) <= e2s[:, None, None, None]).sum(axis=2)
        score = np.where(indep, after, -1).reshape(E, B * X)
        h = (hashes[..., None] + w[None, None]).reshape(E, B * X)
        # drop duplicate sets, keeping the best-scoring copy
        order = np.lexsort((-score, h), axis=-1)
        hs, ss = np.take_along_axis(h, order, 1), np.take_along_axis(score, order, 1)
        dup = np.zeros_like(ss, dtype=bool)
        dup[:, 1:] = (hs[:, 1:] == hs[:, :-1]) & (ss[:, :-1] >= 0)
        ss = np.where(dup, -1, ss)
        pick_sorted = np.lexsort((hs, -ss), axis=-1)[:, :B]
        pick = np.take_along_axis(order, pick_sorted, 1)  # (E, B) flat candidate index
        new_valid = np.take_along_axis(ss, pick_sorted, 1) >= 0
        parent, x = np.divmod(pick, X)
        member = member[ei, parent]
        rank = rank[ei, parent]
        member[ei, np.arange(B)[None], x] |= new_valid
        rank[ei, np.arange(B)[None], x] = np.where(new_valid, step, rank[ei, np.arange(B)[None], x])
        hashes = np.take_along_axis(h, pick, 1)
        valid = new_valid
        sums = np.zeros((E, B, R))
        for y in range(X):
            sums = sums + np.where(member[:, :, y:y + 1], d2[None, None, :, y], 0.0)
        grew = valid[:, 0]
        best[grew] = rank[grew, 0]
    return best


def _sequence_from_rank(p: EluderProblem, rank: np.ndarray, e2: float) -> IndependentSequence:
    """Rebuild the ordered sequence and lexicographic witnesses for one run."""
    taken = np.nonzero(rank >= 0)[0]
    order = [int(x) for x in taken[np.argsort(rank[taken], kind="stable")]]
    eps = math.sqrt(e2)
    wit = []
    for t, x in enumerate(order):
        w = _witness(p, x, order[:t], e2)
        wit.append((w[0], w[1], eps))
    return IndependentSequence(tuple(order), tuple(wit), eps, e2)


def greedy_dim(p: EluderProblem, eps_grid=None, *, e2_grid=None) -> IndependentSequence:
    """Longest independent sequence found greedily over a finite threshold grid.

    Two searches run per threshold: a single in-order scan that appends every
    independent probe, and a width-4 beam search; the longer result wins.

    ``eps_grid`` lists candidate ``eps'`` values (default ``epsilon * 1.25**j``,
    ``j = 0..16``); ``e2_grid`` passes squared thresholds directly, e.g. the
    exact set from :func:`achievable_thresholds`. Values below ``epsilon`` are
    rejected. Always a valid lower bound on the dimension.
    """
    if e2_grid is None:
        grid = default_grid(p.epsilon) if eps_grid is None else np.asarray(eps_grid, dtype=np.float64)
        if np.any(grid < p.epsilon):
            raise PreconditionError("grid values must be >= epsilon")
        e2s = grid * grid
    else:
        e2s = np.asarray(e2_grid, dtype=np.float64)
        if np.any(e2s < p.epsilon ** 2):
            raise PreconditionError("squared grid values must be >= epsilon^2")
    if e2s.size == 0 or p.n_functions < 2:
        return IndependentSequence((), (), None, None)
    best = None
    for ranks in (_scan(p, e2s), _beam(p, e2s, BEAM_WIDTH)):
        lengths = (ranks >= 0).sum(axis=1)
        k = int(np.argmax(lengths))  # first (smallest listed) threshold at the max
        if best is None or lengths[k] > best[0]:
            best = (int(lengths[k]), ranks[k], float(e2s[k]))
    if best[0] == 0:
        return IndependentSequence((), (), None, None)
    return _sequence_from_rank(p, best[1], best[2])


def greedy_sweep(p: EluderProblem, epsilons) -> list:
    """Greedy lengths for each ``epsilon`` in ``epsilons``, nonincreasing in epsilon.

    The default grids of different epsilons are not nested, so independent
    calls can rise with epsilon. Here every epsilon searches the union of all
    default grids restricted to values ``>= epsilon``: a superset of its own
    default grid, and nested across the sweep. Each threshold is searched
    independently, so lengths can only drop as epsilon grows.
    """
    eps = np.asarray(epsilons, dtype=np.float64)
    pool = np.unique(np.concatenate([default_grid(e) for e in eps]))
    out = []
    for e in eps:
        q = EluderProblem(p.dist, p.alpha, float(e), p.C, p.distance, p.probes)
        out.append(len(greedy_dim(q, pool[pool >= e])))
    return out


# --- exact oracle --------------------------------------------------------------

def _subset_sums(d2rows: np.ndarray) -> np.ndarray:
    """``sums[r, S]`` = ascending left fold of ``d2rows[r]`` over bitmask ``S``."""
    R, X = d2rows.shape
    sums = np.zeros((R, 1 << X))
    for x in range(X):
        lo = 1 << x
        # subsets whose highest bit is x extend subsets of the lower bits
        sums[:, lo:2 * lo] = sums[:, :lo] + d2rows[:, x:x + 1]
    return sums


def _check_size(p: EluderProblem):
    if p.n_probes > MAX_BRUTE_PROBES or p.n_functions > MAX_BRUTE_FUNCTIONS:
        raise SizeError(f"brute force limited to {MAX_BRUTE_PROBES} probes and "
                        f"{MAX_BRUTE_FUNCTIONS} functions, got {p.n_probes} and {p.n_functions}")


def achievable_thresholds(p: EluderProblem) -> np.ndarray:
    """Every squared threshold that can be optimal: ``epsilon^2`` plus all
    history sums ``>= epsilon^2`` that still leave some distance above
    ``alpha * eps'``. Sorted ascending."""
    _check_size(p)
    _, _, rows = _pair_rows(p)
    if rows.size == 0:
        return np.array([p.epsilon ** 2])
    sums = _subset_sums(rows * rows).ravel()
    e2min = p.epsilon ** 2
    cand = np.unique(np.concatenate([[e2min], sums[sums >= e2min]]))
    top = rows.max()
    keep = p.alpha * np.sqrt(cand) < top
    return cand[keep] if keep.any() else cand[:1]


def brute_force_dim(p: EluderProblem, return_thresholds: bool = False):
    """Exact longest independent sequence length over the probe set.

    Independence of a probe depends only on the set of earlier probes, and
    a repeated probe is never independent, so a dynamic program over probe
    subsets is exact. It is run for every achievable squared threshold.
    """
    _check_size(p)
    e2s = achievable_thresholds(p)
    if p.n_functions < 2:
        return (0, e2s) if return_thresholds else 0
    _, _, rows = _pair_rows(p)
    rows, _ = np.unique(rows, axis=0, return_index=True)
    d2 = rows * rows
    X = p.n_probes
    N = 1 << X
    sums = _subset_sums(d2)  # (R, N)
    popcount = np.array([bin(s).count("1") for s in range(N)])
    best = 0
    for lo in range(0, e2s.size, 256):
        e2 = e2s[lo:lo + 256]
        E = e2.size
        ok = sums[None] <= e2[:, None, None]  # (E, R, N)
        big = rows[None] > (p.alpha * np.sqrt(e2))[:, None, None]  # (E, R, X)
        indep = np.einsum("ern,erx->enx", ok.astype(np.int32), big.astype(np.int32)) > 0
        reach = np.zeros((E, N), dtype=bool)
        reach[:, 0] = True
        for layer in range(X):
            at = popcount == layer
            for x in range(X):
                bit = 1 << x
                src = np.nonzero(at & ((np.arange(N) & bit) == 0))[0]
                if src.size == 0:
                    continue
                reach[:, src | bit] |= reach[:, src] & indep[:, src, x]
        lens = np.where(reach, popcount[None], 0).max(axis=1)
        best = max(best, int(lens.max()))
    return (best, e2s) if return_thresholds else best


# --- model classes -----------------------------------------------------------------

@dataclass(frozen=True)
class ProbeSpec:
    """Probe densities: every simplex vertex, the uniform density, and
    ``n_random`` Dirichlet(1) draws, crossed with every ``(s, a)``."""

    n_random: int = 8
    seed: int = 0

    def densities(self, S: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(self.seed))
        rand = rng.dirichlet(np.ones(S), size=self.n_random) if self.n_random else np.zeros((0, S))
        return np.vstack([np.eye(S), np.full((1, S), 1.0 / S), rand])


@dataclass(frozen=True)
class MBEDReport:
    per_h: tuple  # dicts {h, tv_dim, hellinger_dim}
    estimate: int
    probes: int
    seed: int

    def to_dict(self) -> dict:
        return {"per_h": [dict(r) for r in self.per_h], "mf_mbed": self.estimate,
                "probes": self.probes, "seed": self.seed}


def _step_values(c: ModelClass, h: int, mus: np.ndarray) -> np.ndarray:
    """Conditionals ``(F, X, S)`` with probes ordered as ``(mu, s, a)``."""
    out = []
    for m in c.models:
        K = m.transition.kernel_batch(h, mus)  # (P, S, A, S)
        out.append(K.reshape(-1, m.S))
    return np.stack(out)


def mf_mbed(c, alpha: float, epsilon: float, probes: ProbeSpec | None = None,
            distances=("tv", "hellinger"), eps_grid=None) -> MBEDReport:
    """Per-step greedy estimates under each distance; min over distances, max over steps.

    Gaussian-mean classes support only the Hellinger distance.
    """
    probes = probes or ProbeSpec()
    gaussian = isinstance(c, GaussianMeanClass)
    if gaussian:
        if any(d != "hellinger" for d in distances):
            raise UnsupportedFamilyError("Gaussian-mean classes support only the Hellinger distance")
        S, A, H = c.S, c.A, c.H
    else:
        S, A, H = c.shape
        for m in c.models:
            if not m.discrete:
                raise UnsupportedFamilyError("use a GaussianMeanClass for Gaussian-mean models")
    mus = probes.densities(S)
    labels = [(s, a, mu) for mu in mus for s in range(S) for a in range(A)]
    rows = []
    for h in range(H):
        row = {"h": h, "tv_dim": None, "hellinger_dim": None}
        if gaussian:
            p = EluderProblem.from_gaussian_means(c.means(h, labels), c.sigma, alpha, epsilon)
            row["hellinger_dim"] = len(greedy_dim(p, eps_grid))
        else:
            vals = _step_values(c, h, mus)
            for dname in distances:
                p = EluderProblem.from_distributions(vals, dname, alpha, epsilon)
                row["tv_dim" if dname == "tv" else "hellinger_dim"] = len(greedy_dim(p, eps_grid))
        rows.append(row)
    per_h_dims = [min(v for k, v in r.items() if k != "h" and v is not None) for r in rows]
    return MBEDReport(tuple(rows), int(max(per_h_dims)), len(labels), probes.seed)


# --- analytic bounds and sequence bounds --------------------------------------------

def linear_dim_bound(d: int, C_phi: float, C_const: float, epsilon: float) -> int:
    """Largest ``n`` with ``1.5**n <= (1 + n C_phi^2 C_const^2 / (d eps^2))**d``.

    The feasible set is an interval ``[0, n*]`` (linear vs concave in ``n``
    on the log scale), found by doubling then bisection.
    """
    if min(d, C_phi, C_const, epsilon) <= 0:
        raise PreconditionError("all parameters must be > 0")
    k = (C_phi * C_const / epsilon) ** 2 / d
    ln15 = math.log(1.5)

    def ok(n):
        return n * ln15 <= d * math.log1p(n * k)

    hi = 1
    while ok(hi):
        hi *= 2
    lo = hi // 2 if hi > 1 else 0
    if not ok(lo):
        return 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class SequenceBoundReport:
    dim: int
    violations: int
    violation_bound: float
    violation_ok: bool
    total: float
    total_bound: float
    total_ok: bool

    @property
    def passed(self) -> bool:
        return self.violation_ok and self.total_ok


def regret_bound_check(sequence, f_star: int, beta: float, p: EluderProblem,
                       dim: int | None = None) -> SequenceBoundReport:
    """Check the violation-count and summed-distance bounds on a sequence.

    ``sequence`` holds ``(f_k, x_k)`` index pairs. The premise
    ``sum_{i<k} D^2(f_k, f*)(x_i) <= beta`` is verified for every ``k``.
    ``dim`` defaults to :func:`brute_force_dim`.
    """
    seq = [(int(f), int(x)) for f, x in sequence]
    D = p.dist
    for k, (f, _) in enumerate(seq):
        prior = math.fsum(D[f, f_star, x] ** 2 for _, x in seq[:k])
        if prior > beta:
            raise PreconditionError(f"premise violated at k={k}: {prior} > beta={beta}")
    if dim is None:
        dim = brute_force_dim(p)
    K = len(seq)
    vals = [float(D[f, f_star, x]) for f, x in seq]
    eps, alpha = p.epsilon, p.alpha
    violations = sum(v > alpha * eps for v in vals)
    vbound = (beta / eps ** 2 + 1.0) * dim
    total = math.fsum(vals)
    tbound = alpha * K * eps + (dim + 1) * p.C + 2.0 * math.sqrt(beta * K * dim)
    return SequenceBoundReport(dim, violations, vbound, violations <= vbound,
                               total, tbound, total <= tbound)
