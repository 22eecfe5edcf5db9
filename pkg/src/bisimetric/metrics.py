"""State-similarity metrics built on the Kantorovich operator.

Five methods are offered: the exact fixed point (``fix``), the same fixed
point with per-cell warm starts (``fix-reopt``), the sampled fixed point
averaged over independent runs (``sample``), and the one-shot total
variation bounds ``tv`` and ``bisim``.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bisim import bisimulation_partition
from .mdp import Mdp, reward_spread
from .transport import empirical_kantorovich_many, sample_empirical, transport_cost

METHODS = ("fix", "fix-reopt", "sample", "tv", "bisim")
BACKENDS = ("cold", "warm")


class TimeBudgetExceeded(RuntimeError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class DistanceMatrix:
    d: np.ndarray
    c: float
    method: str
    iterations: int = 0
    bound: float = 0.0
    tol: float | None = None
    seed: int | None = None

    @property
    def n_states(self) -> int:
        return self.d.shape[0]

    def metadata(self) -> dict:
        return {
            "method": self.method,
            "c": self.c,
            "tol": self.tol,
            "iterations": self.iterations,
            "certified_bound": self.bound,
            "seed": self.seed,
            "n_states": self.n_states,
        }


@dataclass(frozen=True)
class MetricRunConfig:
    c: float
    tol: float = 1e-4
    backend: str = "cold"
    samples: int = 10
    runs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise MetricError(f"c must lie in (0, 1), got {self.c}")
        if not self.tol > 0:
            raise MetricError(f"tol must be positive, got {self.tol}")
        if self.backend not in BACKENDS:
            raise MetricError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if int(self.samples) < 1 or int(self.runs) < 1:
            raise MetricError("samples and runs must be positive")


def pseudometric_violation(d: np.ndarray) -> float:
    """Largest violation of symmetry, zero diagonal, nonnegativity or the triangle inequality."""
    d = np.asarray(d, dtype=float)
    worst = max(
        float(np.max(np.abs(d - d.T), initial=0.0)),
        float(np.max(np.abs(np.diag(d)), initial=0.0)),
        float(np.max(-d, initial=0.0)),
    )
    for k in range(d.shape[0]):
        # d[i, j] <= d[i, k] + d[k, j]
        gap = d - (d[:, k][:, None] + d[k, :][None, :])
        worst = max(worst, float(gap.max(initial=0.0)))
    return worst


def _check_deadline(deadline):
    if deadline is not None and time.monotonic() >= deadline:
        raise TimeBudgetExceeded("time budget exhausted")


def iterations_needed(c: float, first_step: float, tol: float) -> int:
    """Smallest n >= 1 with c**n / (1 - c) * first_step <= tol."""
    n = 1
    while c**n / (1 - c) * first_step > tol:
        n += 1
    return n


class _Cells:
    """Per-(state, action) supports of the transition rows, and the state pairs to evaluate."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        n, m = mdp.n_states, mdp.n_actions
        self.support = [[None] * m for _ in range(n)]
        self.point = np.full((n, m), -1, dtype=int)
        for s in range(n):
            for a in range(m):
                idx = np.flatnonzero(mdp.transition[s, a] > 0)
                self.support[s][a] = (tuple(int(x) for x in idx), [float(x) for x in mdp.transition[s, a, idx]])
                if idx.size == 1:
                    self.point[s, a] = idx[0]
        self.reward_gap = np.abs(mdp.reward[:, None, :] - mdp.reward[None, :, :])  # (s, t, a)

    def pairs(self, h: np.ndarray):
        n = self.mdp.n_states
        if np.array_equal(h, h.T) and not np.any(np.diag(h)):
            s, t = np.triu_indices(n, 1)
            return s, t, True
        s, t = np.indices((n, n))
        return s.ravel(), t.ravel(), False


def _assemble(cells: _Cells, s, t, sym, kant: np.ndarray, c: float) -> np.ndarray:
    # kant: (pairs, actions)
    n = cells.mdp.n_states
    vals = np.max(cells.reward_gap[s, t, :] + c * kant, axis=1)
    out = np.zeros((n, n))
    out[s, t] = vals
    if sym:
        out[t, s] = vals
    return out


def apply_F(h, mdp: Mdp, c: float, backend: str = "cold", hints: dict | None = None,
            cells: _Cells | None = None, deadline: float | None = None) -> np.ndarray:
    """One application of the bisimulation operator to the distance function ``h``.

    With ``backend="warm"`` each (s, t, a) transport problem starts from the
    basis stored in ``hints`` by the previous call, and stores its new one.
    """
    h = np.asarray(h, dtype=float)
    n = mdp.n_states
    if h.shape != (n, n):
        raise MetricError(f"h has shape {h.shape}, expected ({n}, {n})")
    bound = reward_spread(mdp) / (1 - c)
    if not np.all(np.isfinite(h)) or np.max(np.abs(h), initial=0.0) > bound * (1 + 1e-12) + 1e-12:
        raise MetricError(f"h leaves the admissible set: entries must be bounded by {bound}")
    if backend not in BACKENDS:
        raise MetricError(f"unknown backend {backend!r}")
    if backend == "warm" and hints is None:
        hints = {}
    cells = cells or _Cells(mdp)
    s_idx, t_idx, sym = cells.pairs(h)
    kant = np.zeros((s_idx.size, mdp.n_actions))
    for a in range(mdp.n_actions):
        ps, pt = cells.point[s_idx, a], cells.point[t_idx, a]
        easy = (ps >= 0) & (pt >= 0)
        kant[easy, a] = h[ps[easy], pt[easy]]
        for k in np.flatnonzero(~easy):
            _check_deadline(deadline)
            s, t = int(s_idx[k]), int(t_idx[k])
            (pi, pw), (qi, qw) = cells.support[s][a], cells.support[t][a]
            if backend == "warm":
                key = (s, t, a)
                kant[k, a], hint = transport_cost(h, pi, pw, qi, qw, hints.get(key))
                if hint is not None:
                    hints[key] = hint
            else:
                kant[k, a], _ = transport_cost(h, pi, pw, qi, qw)
    return _assemble(cells, s_idx, t_idx, sym, kant, c)


def _iterate(step, c: float, tol: float, n_states: int, deadline):
    h = np.zeros((n_states, n_states))
    h = step(h)
    first = float(np.max(h, initial=0.0))
    n = 1
    bound = c / (1 - c) * first
    while bound > tol:
        _check_deadline(deadline)
        h = step(h)
        n += 1
        bound = c**n / (1 - c) * first
    return h, n, bound


def fixed_point_metric(mdp: Mdp, cfg: MetricRunConfig, deadline: float | None = None) -> DistanceMatrix:
    """Iterate the operator from zero until the a-priori bound certifies ``cfg.tol``."""
    method = "fix-reopt" if cfg.backend == "warm" else "fix"
    _check_deadline(deadline)
    n = mdp.n_states
    if reward_spread(mdp) == 0:
        return DistanceMatrix(np.zeros((n, n)), cfg.c, method, 0, 0.0, cfg.tol)
    cells = _Cells(mdp)
    hints: dict = {}

    def step(h):
        return apply_F(h, mdp, cfg.c, cfg.backend, hints, cells, deadline)

    d, iters, bound = _iterate(step, cfg.c, cfg.tol, n, deadline)
    return DistanceMatrix(d, cfg.c, method, iters, bound, cfg.tol)


def draw_samples(mdp: Mdp, i: int, rng: np.random.Generator) -> np.ndarray:
    """(states, actions, i) array of next-state draws, one sample set per (s, a)."""
    out = np.empty((mdp.n_states, mdp.n_actions, i), dtype=np.int64)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            out[s, a] = sample_empirical(mdp.transition[s, a], i, rng).draws
    return out


def apply_F_sampled(h: np.ndarray, mdp: Mdp, c: float, draws: np.ndarray, cells: _Cells | None = None) -> np.ndarray:
    """The operator with each transition row replaced by its fixed sample set."""
    cells = cells or _Cells(mdp)
    s_idx, t_idx, sym = cells.pairs(h)
    constant = np.all(draws == draws[:, :, :1], axis=2)
    kant = np.zeros((s_idx.size, mdp.n_actions))
    for a in range(mdp.n_actions):
        easy = constant[s_idx, a] & constant[t_idx, a]
        kant[easy, a] = h[draws[s_idx[easy], a, 0], draws[t_idx[easy], a, 0]]
        hard = ~easy
        kant[hard, a] = empirical_kantorovich_many(h, draws[s_idx[hard], a], draws[t_idx[hard], a])
    return _assemble(cells, s_idx, t_idx, sym, kant, c)


def sampled_runs(mdp: Mdp, cfg: MetricRunConfig, deadline: float | None = None) -> list[DistanceMatrix]:
    """Per-run sampled fixed points; run ``r`` draws from child stream ``r`` of the root seed."""
    _check_deadline(deadline)
    n = mdp.n_states
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.runs)
    cells = _Cells(mdp)
    spread = reward_spread(mdp)
    out = []
    for stream in streams:
        rng = np.random.default_rng(stream)
        draws = draw_samples(mdp, cfg.samples, rng)
        if spread == 0:
            out.append(DistanceMatrix(np.zeros((n, n)), cfg.c, "sample", 0, 0.0, cfg.tol, cfg.seed))
            continue

        def step(h, draws=draws):
            return apply_F_sampled(h, mdp, cfg.c, draws, cells)

        d, iters, bound = _iterate(step, cfg.c, cfg.tol, n, deadline)
        out.append(DistanceMatrix(d, cfg.c, "sample", iters, bound, cfg.tol, cfg.seed))
    return out


def sampled_metric(mdp: Mdp, cfg: MetricRunConfig, deadline: float | None = None) -> DistanceMatrix:
    runs = sampled_runs(mdp, cfg, deadline)
    d = np.mean([r.d for r in runs], axis=0)
    return DistanceMatrix(d, cfg.c, "sample", runs[0].iterations, max(r.bound for r in runs), cfg.tol, cfg.seed)


def _one_shot(mdp: Mdp, c: float, mass: np.ndarray, method: str) -> DistanceMatrix:
    if not 0.0 < c < 1.0:
        raise MetricError(f"c must lie in (0, 1), got {c}")
    n = mdp.n_states
    spread = reward_spread(mdp)
    if spread == 0:
        return DistanceMatrix(np.zeros((n, n)), c, method, 0, 0.0)
    scale = c * spread / (1 - c)
    d = np.zeros((n, n))
    for a in range(mdp.n_actions):
        r = mdp.reward[:, a]
        ma = mass[:, a, :]
        tv = 0.5 * np.abs(ma[:, None, :] - ma[None, :, :]).sum(axis=2)
        np.maximum(d, np.abs(r[:, None] - r[None, :]) + scale * tv, out=d)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d, c, method, 1, 0.0)


def tv_metric(mdp: Mdp, c: float) -> DistanceMatrix:
    """Reward gap plus scaled total variation of the next-state distributions."""
    return _one_shot(mdp, c, mdp.transition, "tv")


def bisim_tv_metric(mdp: Mdp, c: float) -> DistanceMatrix:
    """As :func:`tv_metric`, with distributions lumped onto bisimulation classes."""
    part = bisimulation_partition(mdp)
    mass = np.einsum("sat,tb->sab", mdp.transition, part.indicator())
    return _one_shot(mdp, c, mass, "bisim")


def compute_metric(mdp: Mdp, method: str, cfg: MetricRunConfig, deadline: float | None = None) -> DistanceMatrix:
    if method == "fix":
        return fixed_point_metric(mdp, _with_backend(cfg, "cold"), deadline)
    if method == "fix-reopt":
        return fixed_point_metric(mdp, _with_backend(cfg, "warm"), deadline)
    _check_deadline(deadline)
    if method == "sample":
        return sampled_metric(mdp, cfg, deadline)
    if method == "tv":
        dm = tv_metric(mdp, cfg.c)
    elif method == "bisim":
        dm = bisim_tv_metric(mdp, cfg.c)
    else:
        raise MetricError(f"unknown method {method!r}; choose from {METHODS}")
    dm.tol = cfg.tol
    return dm


def _with_backend(cfg: MetricRunConfig, backend: str) -> MetricRunConfig:
    return MetricRunConfig(cfg.c, cfg.tol, backend, cfg.samples, cfg.runs, cfg.seed)


# --- files -----------------------------------------------------------------------

def save_distance(dm: DistanceMatrix, prefix) -> tuple[Path, Path]:
    """Write ``PREFIX.csv`` (strict lower triangle) and ``PREFIX.json`` metadata."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    meta_path = prefix.with_name(prefix.name + ".json")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_i", "state_j", "distance"])
        for i in range(dm.n_states):
            for j in range(i):
                w.writerow([i, j, repr(float(dm.d[i, j]))])
    meta_path.write_text(json.dumps(dm.metadata(), indent=2) + "\n")
    return csv_path, meta_path


def load_distance(path) -> DistanceMatrix:
    path = Path(path)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["state_i", "state_j", "distance"]:
            raise MetricError(f"{path}: expected header state_i,state_j,distance")
        for row in reader:
            rows.append((int(row["state_i"]), int(row["state_j"]), float(row["distance"])))
    n = meta.get("n_states") or (1 + max((max(i, j) for i, j, _ in rows), default=0))
    d = np.zeros((n, n))
    for i, j, x in rows:
        d[i, j] = d[j, i] = x
    return DistanceMatrix(
        d, meta.get("c", float("nan")), meta.get("method", "unknown"), meta.get("iterations", 0),
        meta.get("certified_bound", 0.0), meta.get("tol"), meta.get("seed"),
    )


