"""Command line front end.

Three subcommands: solve writes one policy file, run evaluates one
method on one benchmark, table1 sweeps every in-scope benchmark row
across all methods. Solved policies are cached under MCAS_CACHE_DIR
(default ~/.cache/mcas) keyed by model and solver-parameter hashes.

Exit codes: 0 success, 2 configuration error, 3 solver timeout under
--strict.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import McasError, StaleCacheError
from .harness import (
    METHODS,
    MethodSpec,
    emit_results,
    prepare_bundle,
    run_experiment,
)
from .coordination import McasConfig
from .model import build_agent_view, build_mmdp
from .modelfile import parse_model
from .problems import PROBLEMS, BenchmarkSpec, build_benchmark
from .solver import (
    PolicyStore,
    SolverParams,
    mdp_policy,
    save_policy,
    solve_pomdp,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TIMEOUT = 3

# Benchmark rows this package reproduces, in report order.
TABLE1_ROWS = (
    ("dec-tiger", 2, ()),
    ("dec-tiger", 3, ()),
    ("dec-tiger", 4, ()),
    ("broadcast", 2, ()),
    ("broadcast", 3, ("DP", "WP")),
    ("meet-2x2", 2, ()),
    ("meet-2x2", 2, ("SS",)),
    ("meet-2x2", 2, ("UI", "WP")),
    ("meet-3x3", 2, ()),
    ("meet-3x3", 2, ("AG", "UI", "WP")),
    ("meet-3x3", 3, ("AG", "UI", "WP")),
    ("box-push", 2, ()),
)


class CliError(Exception):
    """Configuration problem reported without a traceback."""


def _cache_dir(flag_value):
    if flag_value:
        return flag_value
    env = os.environ.get("MCAS_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "mcas")


def _parse_problem_spec(text):
    """`name[:agents[:Q1,Q2]]`, e.g. meet-3x3:2:AG,UI,WP."""
    parts = text.split(":")
    if len(parts) > 3 or not parts[0]:
        raise CliError(f"bad problem spec {text!r}")
    name = parts[0]
    try:
        agents = int(parts[1]) if len(parts) > 1 else 2
    except ValueError:
        raise CliError(f"bad agent count in {text!r}") from None
    quals = frozenset(q for q in parts[2].split(",") if q) if len(parts) > 2 else frozenset()
    try:
        return BenchmarkSpec(name, agents, quals)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_dec(model_arg):
    if os.path.exists(model_arg):
        with open(model_arg, encoding="utf-8") as fh:
            return parse_model(fh.read())
    return build_benchmark(_parse_problem_spec(model_arg))


def _solver_params(args):
    return SolverParams(
        precision_target=args.precision,
        max_time=args.max_time,
        max_belief_points=args.max_points,
    )


def _add_solver_flags(sub):
    sub.add_argument("--precision", type=float, default=1e-3,
                     help="value precision target (default 1e-3)")
    sub.add_argument("--max-time", type=float, default=300.0,
                     help="per-solve time budget in seconds (default 300)")
    sub.add_argument("--max-points", type=int, default=100_000,
                     help="belief point budget (default 100000)")
    sub.add_argument("--strict", action="store_true",
                     help="exit 3 when any needed solve hit its time budget")


def _add_cache_flags(sub):
    sub.add_argument("--cache-dir", default=None,
                     help="policy cache directory (default $MCAS_CACHE_DIR or ~/.cache/mcas)")
    sub.add_argument("--allow-stale", action="store_true",
                     help="use cached policies whose index entry is stale")


def cmd_solve(args):
    dec = _load_dec(args.model)
    params = _solver_params(args)
    if args.mmdp:
        policy = mdp_policy(build_mmdp(dec))
    elif args.agent_view is not None:
        if not 0 <= args.agent_view < dec.num_agents:
            raise CliError(
                f"agent {args.agent_view} out of range for {dec.num_agents} agents"
            )
        policy = solve_pomdp(build_agent_view(dec, args.agent_view), params)
    else:
        policy = solve_pomdp(dec.joint, params)
    save_policy(policy, args.out)
    print(f"wrote {len(policy)} vectors to {args.out}")
    if policy.timed_out:
        print("solver hit its time budget; policy may be loose", file=sys.stderr)
        if args.strict:
            return EXIT_TIMEOUT
    return EXIT_OK


def _method_spec(args):
    if args.method in ("mcas", "mcas-alpha"):
        implied = "alpha" if args.method == "mcas-alpha" else "action"
        mode = args.message_mode or implied
        if mode != implied:
            raise CliError(
                f"--message-mode {mode} contradicts --method {args.method}"
            )
        cfg = McasConfig(
            delta_single=args.delta_single,
            delta_joint=args.delta_joint,
            max_beliefs=args.max_beliefs,
            message_mode=mode,
        )
        return MethodSpec(args.method, mcas_config=cfg, leader=args.leader)
    if args.message_mode:
        raise CliError(f"--message-mode is meaningless for {args.method}")
    return MethodSpec(args.method, leader=args.leader)


def _bundle_timed_out(bundle):
    policies = list(bundle.view_policies.values())
    if bundle.joint_policy is not None:
        policies.append(bundle.joint_policy)
    return any(p.timed_out for p in policies)


def _evaluate_rows(rows, args, method_specs):
    store = PolicyStore(_cache_dir(args.cache_dir), allow_stale=args.allow_stale)
    params = _solver_params(args)
    results = []
    timed_out = False
    for name, agents, quals in rows:
        spec = BenchmarkSpec(name, agents, frozenset(quals))
        dec = build_benchmark(spec)
        for method_spec in method_specs:
            label = f"{name} n={agents} {'+'.join(sorted(quals)) or '-'} {method_spec.method}"
            print(f"[{label}] solving...", file=sys.stderr, flush=True)
            bundle = prepare_bundle(dec, method_spec, params=params, store=store)
            timed_out |= _bundle_timed_out(bundle)
            print(f"[{label}] simulating...", file=sys.stderr, flush=True)
            results.append(
                run_experiment(
                    spec,
                    method_spec,
                    n_runs=args.runs,
                    horizon=args.steps,
                    base_seed=args.seed,
                    jobs=args.jobs,
                    dec=dec,
                    bundle=bundle,
                )
            )
    return results, timed_out


def _write_results(results, out_path):
    csv_text, table = emit_results(results)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
        print(table, end="")
        print(f"wrote {out_path}")
    else:
        print(csv_text, end="")


def cmd_run(args):
    quals = frozenset(q for q in (args.qualifiers or "").split(",") if q)
    try:
        spec = BenchmarkSpec(args.problem, args.agents, quals)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    method_spec = _method_spec(args)
    results, timed_out = _evaluate_rows(
        [(spec.name, spec.num_agents, tuple(sorted(spec.qualifiers)))],
        args,
        [method_spec],
    )
    _write_results(results, args.out)
    if timed_out and args.strict:
        return EXIT_TIMEOUT
    return EXIT_OK


def cmd_table1(args):
    rows = TABLE1_ROWS
    if args.only:
        rows = tuple(r for r in rows if r[0] in set(args.only))
        if not rows:
            raise CliError(f"--only matched no rows: {args.only}")
    method_specs = [MethodSpec(m) for m in METHODS]
    results, timed_out = _evaluate_rows(rows, args, method_specs)
    _write_results(results, args.out)
    if timed_out and args.strict:
        return EXIT_TIMEOUT
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mcas",
        description="Plan centrally, act on suggested joint actions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one model and write the policy")
    p_solve.add_argument("--model", required=True,
                         help="model file path or problem spec name[:agents[:Q1,Q2]]")
    target = p_solve.add_mutually_exclusive_group()
    target.add_argument("--joint", action="store_true",
                        help="solve the joint-observation model (default)")
    target.add_argument("--agent-view", type=int, default=None, metavar="I",
                        help="solve agent I's view (own observations only)")
    target.add_argument("--mmdp", action="store_true",
                        help="solve the fully observable relaxation")
    p_solve.add_argument("--out", required=True, help="policy file to write")
    _add_solver_flags(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_run = sub.add_parser("run", help="evaluate one method on one benchmark")
    p_run.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    p_run.add_argument("--agents", type=int, default=2)
    p_run.add_argument("--qualifiers", default="",
                       help="comma separated, e.g. UI,WP")
    p_run.add_argument("--method", required=True, choices=METHODS)
    p_run.add_argument("--runs", type=int, default=2000)
    p_run.add_argument("--steps", type=int, default=50)
    p_run.add_argument("--seed", type=int, default=1)
    p_run.add_argument("--delta-single", type=float, default=1e-5)
    p_run.add_argument("--delta-joint", type=float, default=1e-5)
    p_run.add_argument("--max-beliefs", type=int, default=200)
    p_run.add_argument("--message-mode", choices=("action", "alpha"), default=None)
    p_run.add_argument("--leader", type=int, default=0,
                       help="agent whose view drives mpomdp-i")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel simulation workers")
    p_run.add_argument("--out", default=None, help="CSV output path")
    _add_solver_flags(p_run)
    _add_cache_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_t1 = sub.add_parser("table1", help="reproduce every in-scope benchmark row")
    p_t1.add_argument("--runs", type=int, default=2000)
    p_t1.add_argument("--steps", type=int, default=50)
    p_t1.add_argument("--seed", type=int, default=1)
    p_t1.add_argument("--jobs", type=int, default=1)
    p_t1.add_argument("--only", action="append", default=None, metavar="PROBLEM",
                      help="restrict to one problem (repeatable)")
    p_t1.add_argument("--out", default=None, help="CSV output path")
    _add_solver_flags(p_t1)
    _add_cache_flags(p_t1)
    p_t1.set_defaults(func=cmd_table1)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mcas: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StaleCacheError as exc:
        print(f"mcas: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except McasError as exc:
        print(f"mcas: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
