"""Command-line interface: gen, solve-ref, run, compare, describe.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 partial seed
failure (some seeds of an experiment failed and were excluded).
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from .experiment import (
    ExperimentSpec,
    default_config,
    describe,
    emit_figure,
    run_experiment,
)
from .metrics import csv_export
from .problem import gen_qcqp, gen_qp, load_instance, save_instance
from .reference import ReferenceError, solve_centralized
from .solver import SolverError, solve

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

_CONFIG_FLAGS = {
    "kappa": float,
    "rho": float,
    "delta": float,
    "c_alpha": float,
    "c_beta": float,
    "c_varsigma": float,
    "c_gamma": float,
    "zeta": float,
}


def _add_config_flags(parser):
    for name, cast in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=cast, default=None)
    parser.add_argument("--stable-curvature", action="store_true")


def _add_instance_flags(parser):
    parser.add_argument("--instance", help="stored instance file (.npz)")
    parser.add_argument("--problem", choices=("qcqp", "qp"))
    parser.add_argument("--n", type=int, default=20)
    parser.add_argument("--nodes", type=int, default=12)
    parser.add_argument("--edges", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--graph-seed", type=int, default=None)


def _resolve_instance(args):
    if args.instance:
        return load_instance(args.instance)
    if not args.problem:
        raise ValueError("pass --instance or --problem")
    generator = gen_qcqp if args.problem == "qcqp" else gen_qp
    return generator(args.n, args.nodes, args.seed, args.edges, args.graph_seed)


def _resolve_config(args, family, algo):
    config = default_config(family, algo)
    overrides = {
        name: getattr(args, name)
        for name in _CONFIG_FLAGS
        if getattr(args, name) is not None
    }
    if args.stable_curvature:
        overrides["stable_curvature"] = True
    return replace(config, **overrides)


def _cmd_gen(args):
    instance = _resolve_instance(args)
    save_instance(instance, args.out)
    print(f"wrote {args.out}: {instance.generator_tag}")
    return EXIT_OK


def _cmd_solve_ref(args):
    instance = load_instance(args.instance)
    ref = solve_centralized(instance, tol=args.tol)
    print(
        f"phi_star={ref.phi_star:.12g} kkt_residual={ref.kkt_residual:.3e} "
        f"iterations={ref.iterations} method={ref.method_tag}"
    )
    if args.write:
        instance.phi_star = ref.phi_star
        instance.phi_star_method = ref.method_tag
        instance.phi_star_tol = ref.tolerance
        save_instance(instance, args.instance)
        print(f"cached phi_star into {args.instance}")
    return EXIT_OK


def _cmd_run(args):
    instance = _resolve_instance(args)
    if args.ref_tol is not None and instance.phi_star is None:
        ref = solve_centralized(instance, tol=args.ref_tol)
        instance.phi_star = ref.phi_star
        instance.phi_star_method = ref.method_tag
        instance.phi_star_tol = ref.tolerance
    config = _resolve_config(args, instance.family, args.algo)
    trace = solve(
        instance,
        config,
        args.iters,
        algo=args.algo,
        metric_stride=args.metric_stride,
        checkpoint_every=args.checkpoint_every,
        checkpoint_dir=args.checkpoint_dir,
    )
    csv_export(trace, args.out)
    final = {name: trace[name][-1] for name in ("log_rel_subopt", "rel_consensus_err")}
    print(
        f"wrote {args.out}: {len(trace)} rows, "
        f"total_backtracks={trace.total_backtracks}, "
        f"final log_rel_subopt={final['log_rel_subopt']:.6g}, "
        f"final consensus={final['rel_consensus_err']:.3e}"
    )
    return EXIT_OK


def _cmd_describe(args):
    spec = ExperimentSpec.from_file(args.spec)
    print(describe(spec))
    return EXIT_OK


def _cmd_compare(args):
    spec = ExperimentSpec.from_file(args.spec)
    result = run_experiment(spec)
    for algo, stats in result.summary.items():
        print(
            f"[{algo}] median final log_rel_subopt="
            f"{stats['final_log_rel_subopt_median']:.6g} "
            f"median final consensus={stats['final_consensus_median']:.3e} "
            f"median backtracks={stats['total_backtracks_median']:g}"
        )
    if args.plot:
        emit_figure(spec, args.plot)
        print(f"wrote figure {args.plot}")
    if result.failed_seeds:
        for seed, err in result.failed_seeds:
            print(f"seed {seed} failed: {err}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dapdb",
        description="Decentralized adaptive primal-dual consensus optimization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate and store a random instance")
    _add_instance_flags(p_gen)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen)

    p_ref = sub.add_parser("solve-ref", help="compute the centralized reference optimum")
    p_ref.add_argument("--instance", required=True)
    p_ref.add_argument("--tol", type=float, default=1e-10)
    p_ref.add_argument("--write", action="store_true", help="cache phi_star in the file")
    p_ref.set_defaults(func=_cmd_solve_ref)

    p_run = sub.add_parser("run", help="run one algorithm on one instance")
    _add_instance_flags(p_run)
    p_run.add_argument("--algo", choices=("dapdb", "dapdb0", "dapd"), default="dapdb")
    p_run.add_argument("--iters", type=int, default=1000)
    p_run.add_argument("--metric-stride", type=int, default=1)
    p_run.add_argument("--checkpoint-every", type=int, default=None)
    p_run.add_argument("--checkpoint-dir", default=None)
    p_run.add_argument(
        "--ref-tol",
        type=float,
        default=None,
        help="solve the reference first (enables suboptimality metrics)",
    )
    p_run.add_argument("--out", default=os.environ.get("DAPDB_OUTPUT_DIR", ".") + "/trace.csv")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_desc = sub.add_parser("describe", help="print the resolved experiment plan")
    p_desc.add_argument("--spec", required=True)
    p_desc.set_defaults(func=_cmd_describe)

    p_cmp = sub.add_parser("compare", help="run a spec over all seeds and aggregate")
    p_cmp.add_argument("--spec", required=True)
    p_cmp.add_argument("--plot", default=None, help="emit a mean/std band figure (svg/pdf)")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ReferenceError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
