"""Finite MDP model, validation, JSON I/O, benchmark generators and value iteration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA = "mdp-v1"
ROW_TOL = 1e-9


class MdpError(ValueError):
    """Raised when an MDP violates its invariants or a file is malformed."""


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP.

    ``reward[s, a]`` is the reward for taking action ``a`` in state ``s`` and
    ``transition[s, a, t]`` the probability of moving from ``s`` to ``t``.
    """

    reward: np.ndarray
    transition: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        transition = np.array(self.transition, dtype=float)
        reward.setflags(write=False)
        transition.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (
            self.reward.shape == other.reward.shape
            and self.transition.shape == other.transition.shape
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.transition, other.transition)
            and self.labels == other.labels
        )

    __hash__ = None


@dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    gamma: float
    residual: float
    iterations: int = 0

    def greedy_policy(self, mdp: Mdp) -> np.ndarray:
        q = mdp.reward + self.gamma * mdp.transition @ self.values
        return np.argmax(q, axis=1)


def validate_mdp(mdp: Mdp) -> None:
    """Raise :class:`MdpError` describing the first violated invariant."""
    r, p = mdp.reward, mdp.transition
    if r.ndim != 2 or r.shape[0] < 1 or r.shape[1] < 1:
        raise MdpError(f"reward must be a non-empty (states, actions) matrix, got shape {r.shape}")
    n, m = r.shape
    if p.shape != (n, m, n):
        raise MdpError(f"transition shape {p.shape} does not match ({n}, {m}, {n})")
    if mdp.labels is not None and len(mdp.labels) != n:
        raise MdpError(f"expected {n} labels, got {len(mdp.labels)}")
    bad = np.argwhere(~np.isfinite(r))
    if len(bad):
        s, a = bad[0]
        raise MdpError(f"non-finite reward at state {s}, action {a}")
    bad = np.argwhere(~np.isfinite(p))
    if len(bad):
        s, a, t = bad[0]
        raise MdpError(f"non-finite probability at state {s}, action {a}, next state {t}")
    bad = np.argwhere(p < 0)
    if len(bad):
        s, a, t = bad[0]
        raise MdpError(f"negative probability {p[s, a, t]!r} at state {s}, action {a}, next state {t}")
    sums = p.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
    if len(bad):
        s, a = bad[0]
        raise MdpError(f"row not stochastic at state {s}, action {a}: sums to {sums[s, a]!r}")


def value_iteration(mdp: Mdp, gamma: float, tol: float = 1e-8, max_iter: int | None = None) -> ValueFunction:
    """Optimal values by successive Bellman backups from ``V = 0``.

    Stops once consecutive iterates differ by at most ``tol`` in sup-norm and
    returns the last iterate together with its own Bellman residual.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    r, p = mdp.reward, mdp.transition
    v = np.zeros(mdp.n_states)
    it = 0
    while True:
        v_new = np.max(r + gamma * (p @ v), axis=1)
        it += 1
        diff = np.max(np.abs(v_new - v))
        v = v_new
        if diff <= tol or (max_iter is not None and it >= max_iter):
            break
    residual = float(np.max(np.abs(np.max(r + gamma * (p @ v), axis=1) - v)))
    return ValueFunction(values=v, gamma=gamma, residual=residual, iterations=it)


# --- benchmarks -------------------------------------------------------------

HEADINGS = "NESW"
_STEP = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}

FORWARD, ROTATE = 0, 1


def gridworld_state(n: int, row: int, col: int, heading: int) -> int:
    return (row * n + col) * 4 + heading


def make_gridworld(n: int) -> Mdp:
    """Square room of side ``n`` with actions forward and rotate (clockwise).

    The state is (cell, heading); forward at a wall leaves the agent in place.
    Both actions earn 1.0 from any state in the center cell.
    """
    if n < 1 or n % 2 == 0:
        raise ValueError(f"gridworld side must be odd and positive, got {n}")
    size = 4 * n * n
    reward = np.zeros((size, 2))
    transition = np.zeros((size, 2, size))
    labels = []
    center = n // 2
    for row in range(n):
        for col in range(n):
            for h in range(4):
                s = gridworld_state(n, row, col, h)
                labels.append(f"r{row}c{col}{HEADINGS[h]}")
                dr, dc = _STEP[h]
                nr, nc = row + dr, col + dc
                if not (0 <= nr < n and 0 <= nc < n):
                    nr, nc = row, col
                transition[s, FORWARD, gridworld_state(n, nr, nc, h)] = 1.0
                transition[s, ROTATE, gridworld_state(n, row, col, (h + 1) % 4)] = 1.0
                if row == center and col == center:
                    reward[s, :] = 1.0
    return Mdp(reward, transition, tuple(labels))


COFFEE_FEATURES = ("at_cafe", "has_umbrella", "robot_wet", "raining", "robot_has_coffee", "user_has_coffee")
COFFEE_ACTIONS = ("go", "buy_coffee", "get_umbrella", "deliver_coffee")


def _coffee_outcomes(f: dict[str, bool], action: str) -> list[tuple[float, dict[str, bool]]]:
    def with_(**kw):
        g = dict(f)
        g.update(kw)
        return g

    if action == "go":
        wet = f["robot_wet"] or (f["raining"] and not f["has_umbrella"])
        return [(0.9, with_(at_cafe=not f["at_cafe"], robot_wet=wet)), (0.1, with_(robot_wet=wet))]
    if action == "buy_coffee":
        if f["at_cafe"]:
            return [(0.9, with_(robot_has_coffee=True)), (0.1, dict(f))]
        return [(1.0, dict(f))]
    if action == "get_umbrella":
        if not f["at_cafe"]:
            return [(0.9, with_(has_umbrella=True)), (0.1, dict(f))]
        return [(1.0, dict(f))]
    if action == "deliver_coffee":
        if not f["at_cafe"] and f["robot_has_coffee"]:
            return [
                (0.8, with_(user_has_coffee=True, robot_has_coffee=False)),
                (0.2, with_(robot_has_coffee=False)),
            ]
        return [(1.0, dict(f))]
    raise KeyError(action)


def _coffee_index(f: dict[str, bool]) -> int:
    return sum(1 << k for k, name in enumerate(COFFEE_FEATURES) if f[name])


def make_coffee_robot() -> Mdp:
    """Flattened 64-state, 4-action coffee delivery domain.

    Reward per step is 0.9 when the user has coffee plus 0.1 when the robot
    is dry, independent of the action.
    """
    size = 1 << len(COFFEE_FEATURES)
    reward = np.zeros((size, len(COFFEE_ACTIONS)))
    transition = np.zeros((size, len(COFFEE_ACTIONS), size))
    labels = []
    for s in range(size):
        f = {name: bool(s >> k & 1) for k, name in enumerate(COFFEE_FEATURES)}
        labels.append("".join(name[0].upper() if f[name] else name[0] for name in COFFEE_FEATURES))
        reward[s, :] = 0.9 * f["user_has_coffee"] + 0.1 * (not f["robot_wet"])
        for a, action in enumerate(COFFEE_ACTIONS):
            for prob, g in _coffee_outcomes(f, action):
                transition[s, a, _coffee_index(g)] += prob
    return Mdp(reward, transition, tuple(labels))


BUILTINS = {"gridworld": make_gridworld, "coffee": make_coffee_robot}


# --- file format --------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_array(a: np.ndarray) -> str:
    if a.ndim == 1:
        return "[" + ", ".join(_fmt(x) for x in a) + "]"
    return "[" + ", ".join(_fmt_array(x) for x in a) + "]"


def save_mdp(mdp: Mdp, path) -> None:
    validate_mdp(mdp)
    parts = [
        f'"schema": {json.dumps(SCHEMA)}',
        f'"n_states": {mdp.n_states}',
        f'"n_actions": {mdp.n_actions}',
        f'"rewards": {_fmt_array(mdp.reward)}',
        f'"transitions": {_fmt_array(mdp.transition)}',
    ]
    if mdp.labels is not None:
        parts.append(f'"labels": {json.dumps(list(mdp.labels))}')
    Path(path).write_text("{" + ",\n ".join(parts) + "}\n", encoding="utf-8")


def mdp_from_dict(data: dict) -> Mdp:
    if not isinstance(data, dict):
        raise MdpError("MDP file must hold a JSON object")
    if data.get("schema") != SCHEMA:
        raise MdpError(f"unsupported schema {data.get('schema')!r}, expected {SCHEMA!r}")
    for key in ("n_states", "n_actions", "rewards", "transitions"):
        if key not in data:
            raise MdpError(f"missing key {key!r}")
    n, m = data["n_states"], data["n_actions"]
    if not (isinstance(n, int) and isinstance(m, int) and n >= 1 and m >= 1):
        raise MdpError("n_states and n_actions must be positive integers")
    try:
        reward = np.array(data["rewards"], dtype=float)
        transition = np.array(data["transitions"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MdpError(f"malformed numeric arrays: {exc}") from None
    if reward.shape != (n, m):
        raise MdpError(f"rewards shape {reward.shape} != ({n}, {m})")
    if transition.shape != (n, m, n):
        raise MdpError(f"transitions shape {transition.shape} != ({n}, {m}, {n})")
    mdp = Mdp(reward, transition, data.get("labels"))
    validate_mdp(mdp)
    return mdp


def load_mdp(path) -> Mdp:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MdpError(f"{path}: not valid JSON ({exc})") from None
    return mdp_from_dict(data)


def reward_spread(mdp: Mdp) -> float:
    """Largest reward gap between two states under a common action."""
    r = mdp.reward
    return float(np.max(r.max(axis=0) - r.min(axis=0)))


def value_bounds(mdp: Mdp, gamma: float) -> tuple[float, float]:
    return float(mdp.reward.min()) / (1 - gamma), float(mdp.reward.max()) / (1 - gamma)


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator, *, sparsity: float = 0.0,
               reward_levels: int | None = None) -> Mdp:
    """Random MDP for tests and experiments.

    ``sparsity`` is the chance that an entry of a transition row is zeroed
    (one entry always survives); ``reward_levels`` draws rewards from an
    integer grid so that ties occur.
    """
    if reward_levels:
        reward = rng.integers(0, reward_levels, size=(n_states, n_actions)).astype(float)
    else:
        reward = rng.random((n_states, n_actions))
    w = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        mask = rng.random(w.shape) < sparsity
        keep = rng.integers(0, n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = False
        w[mask] = 0.0
    transition = w / w.sum(axis=2, keepdims=True)
    return Mdp(reward, transition)


__all__ = [
    "Mdp", "MdpError", "ValueFunction", "validate_mdp", "value_iteration", "make_gridworld",
    "make_coffee_robot", "save_mdp", "load_mdp", "mdp_from_dict", "reward_spread", "random_mdp",
    "gridworld_state", "BUILTINS", "FORWARD", "ROTATE", "COFFEE_FEATURES", "COFFEE_ACTIONS",
]
