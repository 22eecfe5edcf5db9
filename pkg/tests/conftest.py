import sys
from pathlib import Path

import numpy as np
import pytest

from bisimetric.mdp import Mdp

sys.path.insert(0, str(Path(__file__).parent))


def chain_mdp(rewards):
    """Absorbing states with the given single-action rewards."""
    n = len(rewards)
    return Mdp(np.array(rewards, dtype=float)[:, None], np.eye(n)[:, None, :])


def quotient_mdp(rng, n_classes, sizes, n_actions=2):
    """Random MDP whose states come in bisimilar groups of the given sizes."""
    r_cls = rng.integers(0, 3, size=(n_classes, n_actions)).astype(float)
    p_cls = rng.integers(1, 4, size=(n_classes, n_actions, n_classes)).astype(float)
    p_cls /= p_cls.sum(axis=2, keepdims=True)
    owner = np.repeat(np.arange(n_classes), sizes)
    n = owner.size
    reward = r_cls[owner]
    transition = np.zeros((n, n_actions, n))
    for s in range(n):
        for a in range(n_actions):
            for k in range(n_classes):
                members = np.flatnonzero(owner == k)
                # split the class mass over its members in a state-specific way
                w = rng.integers(1, 3, size=members.size).astype(float)
                transition[s, a, members] = p_cls[owner[s], a, k] * w / w.sum()
    return Mdp(reward, transition), owner


@pytest.fixture
def two_state():
    return chain_mdp([0.0, 1.0])
