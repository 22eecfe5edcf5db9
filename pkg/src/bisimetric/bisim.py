"""Exact bisimulation partitions and total variation between block masses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Mdp

EQ_TOL = 1e-9


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Disjoint blocks covering states ``0..n-1``.

    Blocks are stored sorted and ordered by their smallest member.
    """

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(sorted((tuple(sorted(int(s) for s in b)) for b in self.blocks), key=lambda b: b[0] if b else -1))
        if any(len(b) == 0 for b in blocks):
            raise PartitionError("empty block")
        members = [s for b in blocks for s in b]
        if sorted(members) != list(range(len(members))):
            raise PartitionError("blocks must partition 0..n-1 exactly")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def from_labels(cls, labels) -> Partition:
        groups: dict = {}
        for s, lab in enumerate(labels):
            groups.setdefault(lab, []).append(s)
        return cls(tuple(groups.values()))

    @classmethod
    def singletons(cls, n: int) -> Partition:
        return cls(tuple((s,) for s in range(n)))

    @property
    def n_states(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def block_of(self) -> np.ndarray:
        out = np.empty(self.n_states, dtype=int)
        for k, b in enumerate(self.blocks):
            out[list(b)] = k
        return out

    def indicator(self) -> np.ndarray:
        """(states, blocks) 0/1 membership matrix."""
        m = np.zeros((self.n_states, self.n_blocks))
        m[np.arange(self.n_states), self.block_of] = 1.0
        return m

    def same_block(self) -> np.ndarray:
        b = self.block_of
        return b[:, None] == b[None, :]

    def refines(self, other: Partition) -> bool:
        """True if every block of ``self`` lies inside a block of ``other``."""
        ob = other.block_of
        return all(len({ob[s] for s in b}) == 1 for b in self.blocks)

    def to_json(self) -> dict:
        return {"blocks": [list(b) for b in self.blocks]}

    @classmethod
    def from_json(cls, data: dict) -> Partition:
        try:
            return cls(tuple(tuple(b) for b in data["blocks"]))
        except (KeyError, TypeError) as exc:
            raise PartitionError(f"malformed partition: {exc}") from None


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(x / EQ_TOL).astype(np.int64)


def refine(mdp: Mdp, part: Partition) -> Partition:
    """One splitting pass: states stay together only if they share a block,
    rewards, and per-action mass into every current block."""
    ind = part.indicator()
    mass = np.einsum("sat,tb->sab", mdp.transition, ind)
    rq = _quantize(mdp.reward)
    mq = _quantize(mass)
    block = part.block_of
    keys = [
        (int(block[s]), rq[s].tobytes(), mq[s].tobytes())
        for s in range(mdp.n_states)
    ]
    return Partition.from_labels(keys)


def bisimulation_partition(mdp: Mdp) -> Partition:
    """Coarsest partition whose blocks agree on rewards and block-transition mass.

    Iterated refinement from the one-block partition until nothing splits.
    """
    part = Partition((tuple(range(mdp.n_states)),))
    while True:
        nxt = refine(mdp, part)
        if nxt.n_blocks == part.n_blocks:
            return nxt
        part = nxt


def is_bisimulation(mdp: Mdp, part: Partition, tol: float = EQ_TOL) -> bool:
    """Check that ``part`` is self-consistent: every block is reward- and mass-uniform."""
    mass = np.einsum("sat,tb->sab", mdp.transition, part.indicator())
    for b in part.blocks:
        idx = list(b)
        if np.ptp(mdp.reward[idx], axis=0).max(initial=0.0) > tol:
            return False
        if np.ptp(mass[idx], axis=0).max(initial=0.0) > tol:
            return False
    return True


def class_tv(p, q, part: Partition) -> float:
    """Total variation between the block masses of ``p`` and ``q``."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape or p.shape[0] != part.n_states:
        raise PartitionError(
            f"distributions of size {p.shape} / {q.shape} do not match a partition of {part.n_states} states"
        )
    ind = part.indicator()
    return float(0.5 * np.abs(p @ ind - q @ ind).sum())
