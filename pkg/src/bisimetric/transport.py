"""Distances between finite distributions.

Total variation, the Kantorovich (earth mover's) distance solved as a
transportation problem by network simplex, warm starts from a saved basis,
and the assignment-problem approximation over sampled supports.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from numba import njit

PROB_TOL = 1e-9
OPT_TOL = 1e-8
SOLVER_VERSION = "nsimplex-1"


class TransportError(ValueError):
    pass


def as_distribution(p, name: str = "p") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise TransportError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise TransportError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise TransportError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def total_variation(p, q) -> float:
    """Half the L1 distance between two distributions on the same support."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise TransportError(f"support size mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


# --- network simplex on the bipartite transportation graph -------------------

@dataclass(frozen=True)
class BasisHint:
    """Spanning-tree basis of a solved transportation problem.

    ``cells`` index into the supports ``rows`` x ``cols``; a later problem
    may reuse the hint only if its supports are the same.
    """

    version: str
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    cells: tuple[tuple[int, int], ...]


@dataclass
class TransportPlan:
    flow: np.ndarray
    cost: float
    basis_hint: BasisHint | None = None
    pivots: int = 0
    warm_started: bool = False
    fallback: bool = False
    fallback_reason: str | None = None


@dataclass
class _Solution:
    cost: float
    cells: list[tuple[int, int]]
    flows: list[float]
    pivots: int = 0


def _northwest_corner(a, b) -> list[tuple[int, int]]:
    m, n = len(a), len(b)
    ra, rb = list(a), list(b)
    i = j = 0
    cells = []
    while True:
        cells.append((i, j))
        if i == m - 1 and j == n - 1:
            return cells
        x = min(ra[i], rb[j])
        ra[i] -= x
        rb[j] -= x
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1


def _tree_adjacency(cells, m, n):
    adj = [[] for _ in range(m + n)]
    for k, (i, j) in enumerate(cells):
        adj[i].append((m + j, k))
        adj[m + j].append((i, k))
    return adj


def _tree_flows(cells, a, b):
    """Flows on a spanning-tree basis, determined by the marginals alone.

    Returns ``None`` if the cells do not form a spanning tree.
    """
    m, n = len(a), len(b)
    if len(cells) != m + n - 1:
        return None
    adj = _tree_adjacency(cells, m, n)
    excess = list(a) + [-x for x in b]
    degree = [len(x) for x in adj]
    flows = [0.0] * len(cells)
    done = [False] * len(cells)
    leaves = deque(v for v in range(m + n) if degree[v] == 1)
    settled = 0
    while leaves:
        v = leaves.popleft()
        if degree[v] != 1:
            continue
        for w, k in adj[v]:
            if not done[k]:
                break
        else:
            continue
        # leaf v pushes its whole excess through edge k
        f = excess[v] if v < m else -excess[v]
        flows[k] = f
        done[k] = True
        settled += 1
        if v < m:
            excess[w] += f
        else:
            excess[w] -= f
        excess[v] = 0.0
        degree[v] -= 1
        degree[w] -= 1
        if degree[w] == 1:
            leaves.append(w)
    if settled != len(cells):
        return None
    return flows


def _duals(cells, cost, m, n):
    adj = _tree_adjacency(cells, m, n)
    pot = [None] * (m + n)
    pot[0] = 0.0
    stack = [0]
    while stack:
        v = stack.pop()
        for w, k in adj[v]:
            if pot[w] is None:
                i, j = cells[k]
                # u_i + v_j = c_ij
                pot[w] = cost[i, j] - pot[v]
                stack.append(w)
    return np.array(pot[:m]), np.array(pot[m:])


def _tree_path(cells, m, n, src, dst):
    """Edge indices on the tree path from node ``src`` to node ``dst``."""
    adj = _tree_adjacency(cells, m, n)
    prev = {src: None}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        if v == dst:
            break
        for w, k in adj[v]:
            if w not in prev:
                prev[w] = (v, k)
                queue.append(w)
    path = []
    v = dst
    while prev[v] is not None:
        v, k = prev[v]
        path.append(k)
    path.reverse()
    return path


def _network_simplex(cost: np.ndarray, a, b, cells=None, flows=None, max_pivots: int | None = None) -> _Solution:
    """Solve min <cost, flow> with row sums ``a`` and column sums ``b``.

    ``cells`` is an optional feasible spanning-tree basis to start from
    (``flows`` its tree flows, if already known).
    Entering arc by most negative reduced cost (lowest index on ties); after
    many pivots the rule switches to Bland's to rule out cycling.
    """
    m, n = cost.shape
    if cells is None:
        cells = _northwest_corner(a, b)
    cells = list(cells)
    if flows is None:
        flows = _tree_flows(cells, a, b)
    else:
        flows = list(flows)
    if flows is None:
        raise TransportError("basis is not a spanning tree")
    scale = 1.0 + float(np.max(np.abs(cost))) if cost.size else 1.0
    eps = 1e-12 * scale
    bland_after = 20 * (m + n) * (m + n)
    if max_pivots is None:
        max_pivots = 50 * bland_after
    pivots = 0
    while True:
        if m == 1 or n == 1:
            break
        u, v = _duals(cells, cost, m, n)
        reduced = cost - u[:, None] - v[None, :]
        if pivots < bland_after:
            e = int(np.argmin(reduced))
            if reduced.flat[e] >= -eps:
                break
        else:
            neg = np.flatnonzero(reduced < -eps)
            if neg.size == 0:
                break
            e = int(neg[0])
        if pivots >= max_pivots:
            raise TransportError("network simplex did not converge")
        ei, ej = divmod(e, n)
        path = _tree_path(cells, m, n, ei, m + ej)
        # path edges alternate: first leaves row ei (donor), then receiver, ...
        donors = path[0::2]
        theta = min(flows[k] for k in donors)
        leave = min((k for k in donors if flows[k] <= theta),
                    key=lambda k: cells[k][0] * n + cells[k][1])
        for pos, k in enumerate(path):
            flows[k] += -theta if pos % 2 == 0 else theta
        cells[leave] = (ei, ej)
        flows[leave] = theta
        pivots += 1
    total = float(sum(f * cost[i, j] for (i, j), f in zip(cells, flows)))
    return _Solution(cost=total, cells=cells, flows=flows, pivots=pivots)


def _balanced(p_sub: np.ndarray, q_sub: np.ndarray):
    a = [float(x) for x in p_sub]
    b = [float(x) for x in q_sub]
    gap = sum(b) - sum(a)
    if gap:
        k = max(range(len(a)), key=a.__getitem__)
        a[k] += gap
    return a, b


def _solve_supported(h: np.ndarray, p: np.ndarray, q: np.ndarray, hint: BasisHint | None):
    rows = tuple(int(x) for x in np.flatnonzero(p > 0))
    cols = tuple(int(x) for x in np.flatnonzero(q > 0))
    sub = h[np.ix_(rows, cols)]
    a, b = _balanced(p[list(rows)], q[list(cols)])
    start = flows = reason = None
    if hint is not None:
        start, flows, reason = _hint_cells(hint, rows, cols, a, b)
    sol = _network_simplex(sub, a, b, start, flows)
    return rows, cols, sol, (hint is not None and start is None), reason


def _hint_cells(hint, rows: tuple, cols: tuple, a, b):
    """Validate ``hint`` for supports ``rows`` x ``cols``: ``(cells, flows, reason)``."""
    if not isinstance(hint, BasisHint) or hint.version != SOLVER_VERSION:
        return None, None, "hint from a different solver version"
    if hint.rows != rows or hint.cols != cols:
        return None, None, "hint supports do not match the distributions"
    m, n = len(rows), len(cols)
    try:
        ok = all(0 <= i < m and 0 <= j < n for i, j in hint.cells)
        flows = _tree_flows(hint.cells, a, b) if ok else None
    except (TypeError, ValueError):
        flows = None
    if flows is None:
        return None, None, "hint cells are not a spanning tree of the supports"
    if min(flows) < -1e-10:
        return None, None, "hint basis is infeasible for these marginals"
    return hint.cells, flows, None


def _plan(h, rows, cols, sol: _Solution) -> TransportPlan:
    flow = np.zeros(h.shape)
    for (i, j), f in zip(sol.cells, sol.flows):
        flow[rows[i], cols[j]] += max(f, 0.0)
    hint = BasisHint(SOLVER_VERSION, rows, cols, tuple(sol.cells))
    return TransportPlan(flow=flow, cost=sol.cost, basis_hint=hint, pivots=sol.pivots)


def _check_inputs(h, p, q):
    p = as_distribution(p, "p")
    q = as_distribution(q, "q")
    h = np.asarray(h, dtype=float)
    if h.shape != (p.size, q.size):
        raise TransportError(f"cost shape {h.shape} does not match supports ({p.size}, {q.size})")
    if not np.all(np.isfinite(h)) or np.any(h < 0):
        raise TransportError("cost matrix must be finite and nonnegative")
    return h, p, q


def kantorovich(h, p, q) -> TransportPlan:
    """Optimal coupling of ``p`` and ``q`` under ground cost ``h``."""
    h, p, q = _check_inputs(h, p, q)
    rows, cols, sol, _, _ = _solve_supported(h, p, q, None)
    return _plan(h, rows, cols, sol)


def kantorovich_warm(h, p, q, hint: BasisHint | None) -> TransportPlan:
    """Like :func:`kantorovich`, starting pivots from a previously optimal basis.

    The basis of an earlier solve on the same marginals stays primal feasible
    under any new cost, so only reduced costs need repair. A hint that does
    not fit is dropped and the problem is solved cold; the plan says so.
    """
    h, p, q = _check_inputs(h, p, q)
    rows, cols, sol, fell_back, reason = _solve_supported(h, p, q, hint)
    plan = _plan(h, rows, cols, sol)
    plan.warm_started = hint is not None and not fell_back
    plan.fallback = fell_back or hint is None
    plan.fallback_reason = reason if hint is not None else "no hint"
    return plan


def transport_cost(h: np.ndarray, p_idx, p_w, q_idx, q_w, hint: BasisHint | None = None):
    """Fast path used by the metric iterations.

    Distributions are given as (support index tuple, weights) and are assumed
    valid. Returns ``(cost, hint)``; ``hint`` is ``None`` when the coupling
    is forced (a point mass on either side).
    """
    if len(p_idx) == 1:
        return float(np.dot(h[p_idx[0], list(q_idx)], q_w)), None
    if len(q_idx) == 1:
        return float(np.dot(h[list(p_idx), q_idx[0]], p_w)), None
    sub = h[np.ix_(p_idx, q_idx)]
    a, b = _balanced(p_w, q_w)
    start = flows = None
    if hint is not None:
        start, flows, _ = _hint_cells(hint, p_idx, q_idx, a, b)
    sol = _network_simplex(sub, a, b, start, flows)
    return sol.cost, BasisHint(SOLVER_VERSION, p_idx, q_idx, tuple(sol.cells))


# --- assignment ----------------------------------------------------------------

@njit(cache=True)
def _assign(c):
    # 1-based potentials; owner[j] is the row matched to column j, 0 if none
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, np.int64)
    way = np.zeros(n + 1, np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, np.bool_)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    perm = np.empty(n, np.int64)
    for j in range(1, n + 1):
        perm[owner[j] - 1] = j - 1
    return perm


@njit(cache=True)
def _matched_means(h, xs, ys):
    k, size = xs.shape
    out = np.empty(k)
    sub = np.empty((size, size))
    for r in range(k):
        for a in range(size):
            for b in range(size):
                sub[a, b] = h[xs[r, a], ys[r, b]]
        perm = _assign(sub)
        total = 0.0
        for a in range(size):
            total += sub[a, perm[a]]
        out[r] = total / size
    return out


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting paths with row/column potentials, O(n^3).
    Returns ``(perm, total)`` where row ``k`` is matched to column ``perm[k]``.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise TransportError(f"cost must be a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise TransportError("cost matrix has non-finite entries")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    perm = _assign(np.ascontiguousarray(c))
    total = 0.0
    for k in range(n):
        total += float(c[k, perm[k]])
    return perm, total


# --- sampling ------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    draws: np.ndarray
    seed: tuple = field(default=())

    def __len__(self):
        return len(self.draws)

    def empirical(self, size: int) -> np.ndarray:
        return np.bincount(self.draws, minlength=size) / len(self.draws)


def sample_empirical(p, i: int, rng: np.random.Generator) -> SampleSet:
    """Draw ``i`` i.i.d. indices from ``p``."""
    if i < 1:
        raise ValueError(f"sample size must be positive, got {i}")
    p = np.asarray(p, dtype=float)
    support = np.flatnonzero(p > 0)
    if support.size == 1:
        draws = np.full(i, support[0], dtype=np.intp)
    else:
        w = p[support] / p[support].sum()
        draws = support[rng.choice(support.size, size=i, p=w)]
    ss = getattr(rng.bit_generator, "seed_seq", None)
    seed = (ss.entropy, tuple(ss.spawn_key)) if ss is not None else ()
    return SampleSet(np.asarray(draws, dtype=np.intp), seed)


def _draws(xs) -> np.ndarray:
    return np.asarray(xs.draws if isinstance(xs, SampleSet) else xs, dtype=np.intp)


def empirical_kantorovich(h, xs, ys) -> float:
    """Mean matched cost of the best pairing of two equal-size samples."""
    x, y = _draws(xs), _draws(ys)
    if x.size != y.size:
        raise TransportError(f"sample sizes differ: {x.size} vs {y.size}")
    h = np.asarray(h, dtype=float)
    _, total = hungarian(h[np.ix_(x, y)])
    return total / x.size



def empirical_kantorovich_many(h, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`empirical_kantorovich` over rows of two (k, i) draw arrays."""
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    if xs.shape != ys.shape or xs.ndim != 2:
        raise TransportError(f"draw arrays must share a (k, i) shape, got {xs.shape} and {ys.shape}")
    if xs.shape[0] == 0:
        return np.zeros(0)
    return _matched_means(np.ascontiguousarray(h, dtype=float), xs, ys)
