"""Experiment runner: metrics x discount values, both aggregation sweeps, value errors."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .aggregate import aggregate_epsilon, aggregate_to_k, build_aggregate_mdp
from .mdp import BUILTINS, Mdp, load_mdp, value_iteration
from .metrics import METHODS, DistanceMatrix, MetricRunConfig, TimeBudgetExceeded, compute_metric

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mdp: dict
    methods: list[str]
    c_values: list[float] = field(default_factory=lambda: [0.1, 0.5, 0.9])
    tol: float = 1e-4
    samples: int = 10
    runs: int = 30
    seed: int = 0
    k_values: list[int] = field(default_factory=list)
    epsilon_values: list[float] = field(default_factory=list)
    gamma: float | None = None  # None: evaluate each metric at gamma = c
    vi_tol: float = 1e-8
    time_budget: float = 600.0
    output_dir: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
        if not self.c_values:
            raise ConfigError("c_values must not be empty")
        for c in self.c_values:
            if not 0 < c < 1:
                raise ConfigError(f"c values must lie in (0, 1), got {c}")
        if self.gamma is not None and not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.tol <= 0 or self.vi_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.samples < 1 or self.runs < 1:
            raise ConfigError("samples and runs must be positive")
        if self.time_budget < 0:
            raise ConfigError("time_budget must be nonnegative")
        if any(e < 0 for e in self.epsilon_values):
            raise ConfigError("epsilon values must be nonnegative")
        if not isinstance(self.mdp, dict) or not ({"builtin", "path"} & set(self.mdp)):
            raise ConfigError('mdp must be {"builtin": name, ...} or {"path": file}')

    @classmethod
    def from_json(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(data)

    def run_config(self, c: float) -> MetricRunConfig:
        return MetricRunConfig(c=c, tol=self.tol, samples=self.samples, runs=self.runs, seed=self.seed)


def resolve_mdp(source: dict, base: Path | None = None) -> tuple[str, Mdp]:
    if "builtin" in source:
        name = source["builtin"]
        if name not in BUILTINS:
            raise ConfigError(f"unknown builtin MDP {name!r}; choose from {sorted(BUILTINS)}")
        if name == "gridworld":
            n = source.get("n", 3)
            return f"gridworld{n}x{n}", BUILTINS[name](n)
        return name, BUILTINS[name]()
    path = Path(source["path"])
    if base is not None and not path.is_absolute():
        path = base / path
    return path.stem, load_mdp(path)


@dataclass
class ExperimentReport:
    mdp: dict
    metrics: list[dict] = field(default_factory=list)
    k_sweep: list[dict] = field(default_factory=list)
    epsilon_sweep: list[dict] = field(default_factory=list)
    checks: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def without_timings(self) -> dict:
        data = self.to_json()
        for row in data["metrics"]:
            row.pop("seconds", None)
        return data

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def _ordering_checks(results: dict, c_values) -> list[dict]:
    chain = ("fix", "bisim", "tv")
    out = []
    for c in c_values:
        for lo, hi, slack in ((chain[0], chain[1], 1e-8), (chain[1], chain[2], 1e-8), (chain[0], chain[2], 2e-8)):
            if (lo, c) in results and (hi, c) in results:
                excess = float(np.max(results[lo, c].d - results[hi, c].d))
                out.append({"c": c, "lower": lo, "upper": hi, "max_excess": excess, "holds": excess <= slack})
    return out


def run_experiment(cfg: ExperimentConfig, base: Path | None = None) -> ExperimentReport:
    """Compute every configured metric and evaluate both aggregation sweeps.

    A metric that overruns ``cfg.time_budget`` seconds is recorded as failed,
    along with every sweep cell that depends on it.
    """
    name, mdp = resolve_mdp(cfg.mdp, base)
    report = ExperimentReport(mdp={"name": name, "n_states": mdp.n_states, "n_actions": mdp.n_actions})
    results: dict[tuple[str, float], DistanceMatrix] = {}
    reference: dict[float, np.ndarray] = {}
    agg_cache: dict[tuple, np.ndarray] = {}

    def values(gamma):
        if gamma not in reference:
            reference[gamma] = value_iteration(mdp, gamma, cfg.vi_tol).values
        return reference[gamma]

    def error(part, gamma):
        key = (part.blocks, gamma)
        if key not in agg_cache:
            agg_cache[key] = value_iteration(build_aggregate_mdp(mdp, part), gamma, cfg.vi_tol).values
        return float(np.max(np.abs(values(gamma) - agg_cache[key][part.block_of])))

    for method in cfg.methods:
        for c in cfg.c_values:
            gamma = cfg.gamma if cfg.gamma is not None else c
            row = {"method": method, "c": c}
            start = time.monotonic()
            try:
                dm = compute_metric(mdp, method, cfg.run_config(c), start + cfg.time_budget)
            except TimeBudgetExceeded:
                row.update(status="failed", reason=f"exceeded time budget of {cfg.time_budget} s",
                           seconds=time.monotonic() - start)
                log.warning("%s c=%s failed: time budget", method, c)
            else:
                row.update(status="ok", reason=None, seconds=time.monotonic() - start,
                           iterations=dm.iterations, certified_bound=dm.bound)
                results[method, c] = dm
            report.metrics.append(row)
            dm = results.get((method, c))
            for k in cfg.k_values:
                cell = {"method": method, "c": c, "gamma": gamma, "k": k}
                if dm is None:
                    cell.update(status="failed", reason="metric failed", n_blocks=None, linf=None)
                elif not 1 <= k <= mdp.n_states:
                    cell.update(status="failed", reason=f"k outside [1, {mdp.n_states}]", n_blocks=None, linf=None)
                else:
                    part = aggregate_to_k(dm, k).partition
                    cell.update(status="ok", reason=None, n_blocks=part.n_blocks, linf=error(part, gamma))
                report.k_sweep.append(cell)
            for eps in cfg.epsilon_values:
                cell = {"method": method, "c": c, "gamma": gamma, "epsilon": eps}
                if dm is None:
                    cell.update(status="failed", reason="metric failed", n_blocks=None, linf=None)
                else:
                    part = aggregate_epsilon(dm, eps).partition
                    cell.update(status="ok", reason=None, n_blocks=part.n_blocks, linf=error(part, gamma))
                report.epsilon_sweep.append(cell)
    report.checks = _ordering_checks(results, cfg.c_values)
    return report


K_COLUMNS = ["method", "c", "gamma", "k", "n_blocks", "linf"]
EPS_COLUMNS = ["method", "c", "gamma", "epsilon", "linf", "n_blocks"]


def _cell(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def emit_plot_data(report: ExperimentReport, outdir) -> list[Path]:
    """Write ``k_sweep.csv`` and ``epsilon_sweep.csv``; failed cells are left out."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fname, columns, rows in (
        ("k_sweep.csv", K_COLUMNS, report.k_sweep),
        ("epsilon_sweep.csv", EPS_COLUMNS, report.epsilon_sweep),
    ):
        path = outdir / fname
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                if row.get("status") == "ok":
                    w.writerow([_cell(row[c]) for c in columns])
        written.append(path)
    return written
