"""Command line interface.

Exit status is 0 on success, 1 for bad arguments, configs or input files,
and 2 when a computation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .aggregate import aggregate_epsilon, aggregate_to_k, linf_error
from .bisim import Partition, PartitionError
from .harness import ConfigError, ExperimentConfig, emit_plot_data, run_experiment
from .mdp import MdpError, load_mdp, make_coffee_robot, make_gridworld, save_mdp
from .metrics import METHODS, MetricError, MetricRunConfig, compute_metric, load_distance, save_distance

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bisimetric", description="Bisimulation metrics and state aggregation for finite MDPs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a benchmark MDP")
    g.add_argument("kind", choices=["gridworld", "coffee"])
    g.add_argument("--n", type=int, default=3, help="gridworld side (odd)")
    g.add_argument("--out", required=True)

    c = sub.add_parser("compute", help="compute a distance matrix")
    c.add_argument("--mdp", required=True)
    c.add_argument("--method", required=True, choices=METHODS)
    c.add_argument("--c", type=float, required=True)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--samples", type=int, default=10)
    c.add_argument("--runs", type=int, default=30)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")

    a = sub.add_parser("aggregate", help="partition states from a distance CSV")
    a.add_argument("--dist", required=True)
    mode = a.add_mutually_exclusive_group(required=True)
    mode.add_argument("--k", type=int)
    mode.add_argument("--epsilon", type=float)
    a.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="L-infinity value error of an aggregation")
    e.add_argument("--mdp", required=True)
    e.add_argument("--partition", required=True)
    e.add_argument("--gamma", type=float, required=True)
    e.add_argument("--tol", type=float, default=1e-8)
    e.add_argument("--out", required=True)

    x = sub.add_parser("experiment", help="run a full experiment from a JSON config")
    x.add_argument("--config", required=True)
    x.add_argument("--out", required=True, help="output directory")
    return p


class _ComputeFailure(RuntimeError):
    pass


def _gen(args):
    mdp = make_gridworld(args.n) if args.kind == "gridworld" else make_coffee_robot()
    save_mdp(mdp, args.out)


def _compute(args):
    mdp = load_mdp(args.mdp)
    cfg = MetricRunConfig(c=args.c, tol=args.tol, samples=args.samples, runs=args.runs, seed=args.seed)
    start = time.monotonic()
    try:
        dm = compute_metric(mdp, args.method, cfg)
    except MetricError:
        raise
    except Exception as exc:
        raise _ComputeFailure(str(exc)) from exc
    logging.info("%s: %d iterations in %.3f s", args.method, dm.iterations, time.monotonic() - start)
    save_distance(dm, args.out)


def _aggregate(args):
    dist = load_distance(args.dist)
    res = aggregate_to_k(dist, args.k) if args.k is not None else aggregate_epsilon(dist, args.epsilon)
    Path(args.out).write_text(json.dumps(res.to_json(), indent=2) + "\n")


def _eval(args):
    mdp = load_mdp(args.mdp)
    try:
        part = Partition.from_json(json.loads(Path(args.partition).read_text()))
    except json.JSONDecodeError as exc:
        raise PartitionError(f"{args.partition}: {exc}") from None
    err = linf_error(mdp, part, args.gamma, args.tol)
    out = {"linf": err, "gamma": args.gamma, "tol": args.tol, "n_blocks": part.n_blocks}
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")


def _experiment(args):
    cfg = ExperimentConfig.load(args.config)
    outdir = Path(args.out)
    try:
        report = run_experiment(cfg, base=Path(args.config).parent)
    except (ConfigError, MdpError, OSError):
        raise
    except Exception as exc:
        raise _ComputeFailure(str(exc)) from exc
    outdir.mkdir(parents=True, exist_ok=True)
    report.save(outdir / "report.json")
    emit_plot_data(report, outdir)
    if any(row["status"] != "ok" for row in report.metrics):
        logging.warning("some metrics failed; see report.json")


COMMANDS = {"gen": _gen, "compute": _compute, "aggregate": _aggregate, "eval": _eval, "experiment": _experiment}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, MdpError, MetricError, PartitionError, ValueError, OSError) as exc:
        print(f"bisimetric: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"bisimetric: computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
