"""Greedy state aggregation from a distance matrix, and value-error evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bisim import Partition
from .mdp import Mdp, value_iteration

# distances closer than this (relative to the largest entry) count as ties
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Merge:
    """Two blocks joined at ``distance``; blocks are named by their smallest state."""

    i: int
    j: int
    distance: float


@dataclass
class AggregationResult:
    partition: Partition
    trace: list[Merge] = field(default_factory=list)
    method: str = "to_k"
    parameter: float = 0

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "parameter": self.parameter,
            "blocks": [list(b) for b in self.partition.blocks],
            "merge_trace": [{"i": m.i, "j": m.j, "distance": m.distance} for m in self.trace],
        }


def _matrix(dist) -> np.ndarray:
    d = np.asarray(getattr(dist, "d", dist), dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    return d


def single_linkage(dist) -> list[Merge]:
    """Full single-linkage merge sequence from singletons to one block.

    Each step merges the closest pair of blocks; among (near-)ties the
    lexicographically lowest pair of block positions wins, blocks being
    ordered by their smallest state.
    """
    d = _matrix(dist)
    n = d.shape[0]
    atol = TIE_RTOL * max(1.0, float(np.max(np.abs(d), initial=0.0)))
    reps = list(range(n))
    link = d.astype(float).copy()
    np.fill_diagonal(link, np.inf)
    trace = []
    while len(reps) > 1:
        iu, ju = np.triu_indices(len(reps), 1)
        vals = link[iu, ju]
        pick = int(np.flatnonzero(vals <= vals.min() + atol)[0])
        i, j = int(iu[pick]), int(ju[pick])
        trace.append(Merge(reps[i], reps[j], float(link[i, j])))
        merged = np.minimum(link[i], link[j])
        link[i, :] = merged
        link[:, i] = merged
        link[i, i] = np.inf
        link = np.delete(np.delete(link, j, axis=0), j, axis=1)
        del reps[j]
    return trace


def _replay(n: int, trace) -> Partition:
    owner = list(range(n))

    def find(x):
        while owner[x] != x:
            owner[x] = owner[owner[x]]
            x = owner[x]
        return x

    for m in trace:
        a, b = find(m.i), find(m.j)
        owner[max(a, b)] = min(a, b)
    return Partition.from_labels([find(s) for s in range(n)])


def aggregate_to_k(dist, k: int) -> AggregationResult:
    """Merge the two closest blocks (single linkage) until ``k`` remain."""
    n = _matrix(dist).shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    trace = single_linkage(dist)[: n - k]
    return AggregationResult(_replay(n, trace), trace, "to_k", k)


def aggregate_epsilon(dist, epsilon: float) -> AggregationResult:
    """Greedy threshold aggregation.

    States are visited in index order; each joins the first block holding a
    state closer than ``epsilon``, else starts a new block. Blocks whose
    closest cross pair is under ``epsilon`` are then merged until none are.
    """
    d = _matrix(dist)
    n = d.shape[0]
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    blocks: list[list[int]] = []
    trace = []
    for s in range(n):
        for b in blocks:
            gap = float(d[s, b].min())
            if gap < epsilon:
                trace.append(Merge(b[0], s, gap))
                b.append(s)
                break
        else:
            blocks.append([s])
    merged = True
    while merged:
        merged = False
        for x in range(len(blocks)):
            for y in range(x + 1, len(blocks)):
                gap = float(d[np.ix_(blocks[x], blocks[y])].min())
                if gap < epsilon:
                    trace.append(Merge(min(blocks[x]), min(blocks[y]), gap))
                    blocks[x].extend(blocks.pop(y))
                    merged = True
                    break
            if merged:
                break
    return AggregationResult(Partition(tuple(tuple(b) for b in blocks)), trace, "epsilon", epsilon)


def build_aggregate_mdp(mdp: Mdp, part: Partition) -> Mdp:
    """Block-level MDP with rewards and block-transition masses averaged over members."""
    if part.n_states != mdp.n_states:
        raise ValueError(f"partition covers {part.n_states} states, MDP has {mdp.n_states}")
    ind = part.indicator()
    sizes = ind.sum(axis=0)
    reward = (ind.T @ mdp.reward) / sizes[:, None]
    mass = np.einsum("sat,tb->sab", mdp.transition, ind)
    transition = np.einsum("sb,sac->bac", ind, mass) / sizes[:, None, None]
    labels = None
    if mdp.labels is not None:
        labels = tuple("+".join(mdp.labels[s] for s in b) for b in part.blocks)
    return Mdp(reward, transition, labels)


def linf_error(mdp: Mdp, part: Partition, gamma: float, tol: float = 1e-8) -> float:
    """max_s |V*(s) - V*_agg(block of s)| with both value functions by value iteration."""
    v = value_iteration(mdp, gamma, tol).values
    v_agg = value_iteration(build_aggregate_mdp(mdp, part), gamma, tol).values
    return float(np.max(np.abs(v - v_agg[part.block_of])))
