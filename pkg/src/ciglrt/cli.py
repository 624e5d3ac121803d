"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 numerical divergence, 3 infeasible bounds
with ``--strict``.  Errors go to stderr as ``ERROR <code>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import harness, selftest
from .bounds import write_bounds_json
from .config import DEFAULT_SEED, ExperimentConfig, apply_overrides, dump_config, load_config
from .errors import CiglrtError, NumericalDivergence
from .network import min_consensus_rounds, spectral_gap_numeric, write_edge_list, write_matrix_csv

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR invalid-input: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="experiment config (JSON)")
    p.add_argument("--output", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help=f"master seed (default {DEFAULT_SEED})")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="trial-level parallelism (default: cores)")
    p.add_argument("--stride", type=int, default=None, help="estimate recording stride")
    p.add_argument("--strict", action="store_true", help="exit 3 when the bounds are infeasible")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ciglrt", description="Distributed consensus+innovations GLRT simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="run a Monte Carlo experiment"), config_required=True)
    _common(sub.add_parser("bounds", help="evaluate thresholds and exponent bounds"), config_required=True)
    rp = sub.add_parser("reproduce", help="run a reference experiment")
    rp.add_argument("name", help="nl_vib or l_vic")
    rp.add_argument("--smoke", action="store_true", help="reduced trial count")
    _common(rp)
    gp = sub.add_parser("graph-info", help="spectrum and mixing weights of a graph")
    _common(gp)
    sub.add_parser("selftest", help="run the built-in closed-form checks")
    return parser


def effective_config(args, base: ExperimentConfig) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.trials is not None:
        overrides.append(f"trials={args.trials}")
    if args.stride is not None:
        overrides.append(f"stride={args.stride}")
    return apply_overrides(base, overrides)


def _infeasible(b) -> bool:
    return (not getattr(b, "feasible", getattr(b, "theta_feasible", True))
            or not getattr(b, "eta_in_range", True)
            or getattr(b, "miss_bound_undefined", False))


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def cmd_simulate(args) -> int:
    cfg = effective_config(args, load_config(args.config))
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    b = harness.experiment_bounds(cfg)
    result = harness.run_experiment(cfg, _threads(args))
    harness.write_outputs(result, out, b)
    print(f"wrote {out}/ (eta={result.eta:.6g}, trials={cfg.trials})")
    return EXIT_INFEASIBLE if args.strict and _infeasible(b) else EXIT_OK


def cmd_bounds(args) -> int:
    cfg = effective_config(args, load_config(args.config))
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    b = harness.experiment_bounds(cfg)
    write_bounds_json(b, out / "bounds.json")
    print(json.dumps(b.to_dict(), indent=2, sort_keys=True))
    return EXIT_INFEASIBLE if args.strict and _infeasible(b) else EXIT_OK


def cmd_reproduce(args) -> int:
    base = harness.canned_config(args.name, args.smoke)
    cfg = effective_config(args, base)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    out = Path(args.output)
    bundle = harness.reproduce_reference_experiments(args.name, threads=_threads(args), out_dir=out, cfg=cfg)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    print(f"{args.name}: {bundle.status}; wrote {out}/")
    if bundle.result is None:
        print(f"ERROR numerical-divergence: {bundle.status}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_INFEASIBLE if args.strict and _infeasible(bundle.bounds) else EXIT_OK


def cmd_graph_info(args) -> int:
    base = load_config(args.config) if args.config else ExperimentConfig()
    cfg = effective_config(args, base)
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return EXIT_OK
    s = harness.setup(cfg)
    n = s.graph.n_agents
    info = {
        "n_agents": n,
        "n_edges": len(s.graph.edges),
        "lambda2": s.spec.lambda2,
        "lambda_max": s.spec.lambda_max,
        "delta": s.weights.delta,
        "r": s.weights.r,
        "r_numeric": spectral_gap_numeric(s.weights.w),
        "k_min": min_consensus_rounds(n, s.weights.r) if 0 < s.weights.r < 1 else 1,
    }
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(s.graph, out / "edges.txt")
    write_matrix_csv(s.spec.laplacian, out / "laplacian.csv")
    write_matrix_csv(s.weights.w, out / "weights.csv")
    (out / "graph_info.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(info, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "bounds": cmd_bounds, "reproduce": cmd_reproduce,
            "graph-info": cmd_graph_info}


def _code(e: Exception) -> str:
    name = type(e).__name__
    return "".join("-" + c.lower() if c.isupper() else c for c in name).lstrip("-")


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "selftest":
        return selftest.run()
    try:
        return COMMANDS[args.command](args)
    except NumericalDivergence as e:
        print(f"ERROR numerical-divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CiglrtError, OSError) as e:
        print(f"ERROR {_code(e)}: {e}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
