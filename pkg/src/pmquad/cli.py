"""Command-line entry point: ``pmquad <subcommand> [flags]``.

Exit status is 0 on success, 1 on a usage error and 2 when the requested
computation fails. Data output never contains timestamps, so a fixed
``--seed`` reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from typing import Sequence

import numpy as np

from . import experiments as E
from . import limit as L
from . import mu2 as M
from . import trees as T
from .constants import constants, limit_moments, mean_curve, moment_recurrence, recurrence_c2
from .rng import DEFAULT_SEED, stream, stream_key

SCHEMA_VERSION = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(obj):
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(f"{x:.15g}") if math.isfinite(x) else str(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _fmt(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_fmt(v) for v in obj]
    return obj


def _emit_json(payload: dict, out) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **payload}
    json.dump(_fmt(doc), out, indent=2, sort_keys=True)
    out.write("\n")


@contextmanager
def _sink(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of reals, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(float(x)) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_constants(args) -> int:
    c = constants()
    payload = c.as_dict()
    payload["c2_recurrence"] = recurrence_c2()
    payload["beta_residual"] = c.beta_exp**2 + 3 * c.beta_exp - 2
    payload["contraction_factor"] = M.contraction_factor()
    payload["moments_recurrence"] = list(moment_recurrence(args.moments).values)
    payload["moments_limit"] = list(limit_moments(args.moments).values)
    with _sink(args.out) as fh:
        _emit_json(payload, fh)
    return 0


def _points(args) -> np.ndarray:
    if args.points:
        return T.read_points_csv(args.points)
    g = stream(args.seed, 0)
    n = T.poisson_point_count(args.n, g) if args.poisson else args.n
    return T.sample_uniform_points(n, g)


def _tree(args) -> T.SearchTree:
    pts = _points(args)
    return T.build(pts, args.kind, rng=stream(args.seed, 1))


def cmd_build_demo(args) -> int:
    tree = _tree(args)
    worst, at = T.worst_query_cost(tree)
    prof = T.cost_profile(tree)
    payload = {
        "kind": tree.kind.value,
        "size": tree.size,
        "max_depth": int(tree.depth.max()) if tree.size else 0,
        "mean_depth": float(tree.depth.mean()) if tree.size else 0.0,
        "profile_pieces": int(len(prof.values)),
        "profile_integral": prof.integral(),
        "worst_cost": worst,
        "worst_at": at,
        "nodes": [
            {"x": float(tree.xs[i]), "y": float(tree.ys[i]), "depth": int(tree.depth[i]),
             "region": [float(tree.x_lo[i]), float(tree.x_hi[i]), float(tree.y_lo[i]), float(tree.y_hi[i])]}
            for i in range(min(tree.size, args.show))
        ],
    }
    with _sink(args.out) as fh:
        _emit_json(payload, fh)
    return 0


def cmd_cost(args) -> int:
    tree = _tree(args)
    costs = [T.partial_match_cost(tree, s) for s in args.s]
    payload = {
        "kind": tree.kind.value,
        "n": tree.size,
        "seed": args.seed,
        "s": args.s,
        "cost": costs[0] if len(costs) == 1 else costs,
    }
    with _sink(args.out) as fh:
        _emit_json(payload, fh)
    return 0


def cmd_profile(args) -> int:
    tree = _tree(args)
    with _sink(args.out) as fh:
        T.write_profile_csv(T.cost_profile(tree), fh)
    return 0


def _experiment_config(args) -> E.ExperimentConfig:
    overrides = {
        "tree_kind": args.kind,
        "n_values": tuple(args.n) if args.n else None,
        "s_values": tuple(args.s) if args.s is not None else None,
        "replicates": args.replicates,
        "master_seed": args.seed,
        "poissonized": True if args.poissonized else None,
        "uniform_query": False if args.no_uniform_query else None,
        "threads": args.threads,
    }
    if args.config:
        return E.load_config(args.config, **overrides)
    defaults = {
        "tree_kind": "quadtree",
        "n_values": (1024, 4096, 16384),
        "s_values": (0.5,),
        "replicates": 100,
        "master_seed": DEFAULT_SEED,
    }
    return E.ExperimentConfig(**{**defaults, **{k: v for k, v in overrides.items() if v is not None}})


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    res = E.run_cost_experiment(cfg)
    if args.json:
        with _sink(args.json) as fh:
            E.write_result_json(res, fh, E.compare_to_theory(res) if cfg.tree_kind is T.TreeKind.QUADTREE else None)
    if args.csv or not args.json:
        with _sink(args.csv) as fh:
            E.write_result_csv(res, fh)
    return 0


def cmd_limit_sim(args) -> int:
    if args.mode == "path":
        path = L.simulate_Zn(args.depth, args.grid, stream_key(args.seed, 0))
        with _sink(args.out) as fh:
            L.write_path_csv(path, fh)
        return 0
    if args.mode == "sup":
        est = L.estimate_sup(args.depth, args.grid, args.replicates, args.seed, threads=args.threads)
        payload = {"sup": est.as_dict(), "k1_times_mean": constants().k1 * est.mean}
    elif args.mode == "martingale":
        pts = np.array(args.s if args.s else [0.1, 0.5, 0.9])
        z = L.sample_Zn(args.depth, pts, args.replicates, args.seed, threads=args.threads)
        se = z.std(axis=0, ddof=1) / math.sqrt(args.replicates)
        h = np.array([mean_curve(s) for s in pts])
        payload = {
            "depth": args.depth,
            "replicates": args.replicates,
            "s": pts.tolist(),
            "mean": z.mean(axis=0).tolist(),
            "stderr": se.tolist(),
            "h": h.tolist(),
            "z_score": ((z.mean(axis=0) - h) / se).tolist(),
        }
    else:  # moments
        m2, se = L.second_moment_ratio(args.depth, args.replicates, args.seed, threads=args.threads)
        payload = {
            "depth": args.depth,
            "replicates": args.replicates,
            "second_moment_ratio": m2,
            "stderr": se,
            "c2_integral_equation": constants().c2,
            "c2_recurrence": recurrence_c2(),
        }
    with _sink(args.out) as fh:
        _emit_json(payload, fh)
    return 0


def cmd_mu2(args) -> int:
    cfg = M.QuadratureConfig(
        nodes=args.nodes, grid_size=args.grid, tolerance=args.tol, max_iters=args.max_iters
    )
    sol = M.solve_fixed_point(cfg)
    analytic = M.analytic_mu2(cfg.grid_size)
    cand_res = float(np.max(np.abs(M.apply_K(analytic, cfg).values - analytic.values)))
    payload = {
        "c2": constants().c2,
        "iterations": sol.iterations,
        "residual": sol.residual,
        "analytic_residual": cand_res,
        "max_diff_from_analytic": float(np.max(np.abs(sol.solution.values - analytic.values))),
        "contraction_ratio": sol.ratios[-1] if sol.ratios else None,
        "contraction_factor": M.contraction_factor(),
    }
    if args.csv:
        with _sink(args.csv) as fh:
            M.write_mu2_csv(sol.solution, fh)
    with _sink(args.out) as fh:
        _emit_json(payload, fh)
    return 0


def cmd_report(args) -> int:
    with open(args.input) as fh:
        res = E.result_from_dict(json.load(fh))
    sup = None
    if args.sup_replicates > 0:
        est = L.estimate_sup(args.sup_depth, args.sup_grid, args.sup_replicates, args.seed)
        sup = (est.mean, est.stderr)
    rows = E.compare_to_theory(res, sup_limit=sup)
    with _sink(args.out) as fh:
        _emit_json({"rows": [r.as_dict() for r in rows]}, fh)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _tree_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=1000, help="number of uniform points")
    p.add_argument("--kind", choices=[k.value for k in T.TreeKind], default="quadtree", help="tree variant")
    p.add_argument("--points", default=None, help="CSV of x,y points to use instead of random ones")
    p.add_argument("--poisson", action="store_true", help="use a Poisson(n) number of points")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(
        prog="pmquad", description="Partial match cost in random 2-d search trees and its limit process."
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=fmt)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master random seed")
        p.add_argument("--out", default=None, help="output file (default: standard output)")
        p.set_defaults(func=func)
        return p

    p = add("constants", cmd_constants, "print the asymptotic constants as JSON")
    p.add_argument("--moments", type=int, default=4, help="number of marginal moments to list")

    p = add("build-demo", cmd_build_demo, "build one tree and summarise it")
    _tree_flags(p)
    p.add_argument("--show", type=int, default=10, help="number of nodes to list")

    p = add("cost", cmd_cost, "partial match cost of one query line")
    _tree_flags(p)
    p.add_argument("--s", type=_floats, default=[0.5], help="query position(s) in [0,1]")

    p = add("profile", cmd_profile, "write the cost profile s_left,s_right,cost as CSV")
    _tree_flags(p)

    p = add("experiment", cmd_experiment, "replicated cost measurements")
    p.add_argument("--config", default=None, help="key = value config file; flags override it")
    p.add_argument("--kind", choices=[k.value for k in T.TreeKind], default=None,
                   help="tree variant (default quadtree)")
    p.add_argument("--n", type=_ints, default=None, help="sizes, e.g. 1024,4096 (default 1024,4096,16384)")
    p.add_argument("--s", type=_floats, default=None, help="fixed query positions (default 0.5)")
    p.add_argument("--replicates", type=int, default=None, help="replicates per size (default 100)")
    p.add_argument("--poissonized", action="store_true", help="Poisson(n) points per tree")
    p.add_argument("--no-uniform-query", action="store_true", help="skip the uniform random query")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")
    p.add_argument("--csv", default=None, help="CSV output file")
    p.add_argument("--json", default=None, help="JSON output file (with fits and theory rows)")

    p = add("limit-sim", cmd_limit_sim, "simulate the limit process Z_n")
    p.add_argument("--mode", choices=["path", "sup", "martingale", "moments"], default="path",
                   help="one path as CSV, sup estimate, martingale check or second moment")
    p.add_argument("--depth", type=int, default=L.DEFAULT_DEPTH, help="depth n of Z_n")
    p.add_argument("--grid", type=int, default=L.DEFAULT_GRID, help="grid size G")
    p.add_argument("--replicates", type=int, default=100, help="Monte Carlo replicates")
    p.add_argument("--s", type=_floats, default=None, help="points for --mode martingale (default 0.1,0.5,0.9)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (0 = all cores)")

    p = add("mu2", cmd_mu2, "solve the second-moment integral equation")
    p.add_argument("--tol", type=float, default=1e-8, help="sup-norm stopping tolerance")
    p.add_argument("--grid", type=int, default=1024, help="grid size G")
    p.add_argument("--nodes", type=int, default=64, help="quadrature nodes per cell")
    p.add_argument("--max-iters", type=int, default=200, help="iteration cap")
    p.add_argument("--csv", default=None, help="write the solution as s,mu2 CSV")

    p = add("report", cmd_report, "compare an experiment JSON with the asymptotics")
    p.add_argument("--input", required=True, help="JSON written by `experiment --json`")
    p.add_argument("--sup-depth", type=int, default=L.DEFAULT_DEPTH, help="depth for the sup reference")
    p.add_argument("--sup-grid", type=int, default=L.DEFAULT_GRID, help="grid for the sup reference")
    p.add_argument("--sup-replicates", type=int, default=0, help="replicates for the sup reference (0 = skip)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"pmquad {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
