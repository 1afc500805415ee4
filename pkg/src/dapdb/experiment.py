"""Multi-seed experiment orchestration: generate, reference-solve, run, aggregate.

A spec names a problem family, sizes, a seed list, and the algorithms to
compare; running it produces one trace CSV per (seed, algorithm), aggregate
CSVs (mean and standard deviation per iteration row, and separately on a
shared gradient-call grid), and an optional figure with mean plus
standard-deviation bands.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import RunTrace, csv_export, csv_import
from .problem import gen_qcqp, gen_qp, save_instance
from .reference import solve_centralized
from .solver import AlgorithmConfig, reference_steps, solve

__all__ = [
    "ExperimentSpec",
    "ExperimentResult",
    "default_config",
    "run_experiment",
    "describe",
    "compare_at_equal_budget",
]

_GENERATORS = {"qcqp": gen_qcqp, "qp": gen_qp}
_CONFIG_KEYS = (
    "delta",
    "c_alpha",
    "c_beta",
    "c_varsigma",
    "c_gamma",
    "rho",
    "zeta",
    "kappa",
    "stable_curvature",
)


def default_config(family, algo):
    """Per-family defaults mirroring the reproduced experiment protocol.

    QCQP: ``zeta=1``, ``c_alpha=c_beta=c_varsigma=delta=0.1``, ``rho=0.9``,
    ``kappa=20`` for the adaptive method and safe steps for the baseline.
    QP: ``c_alpha=c_varsigma=0.4``, ``c_beta=0``, ``delta=0.1``, ``rho=0.9``,
    ``kappa=5``. ``c_gamma`` is left to its maximal admissible default.
    """
    if family == "qcqp":
        if algo not in ("dapdb", "dapd"):
            raise ValueError(f"algorithm {algo!r} not applicable to family 'qcqp'")
        return AlgorithmConfig(kappa=20.0 if algo == "dapdb" else 1.0)
    if family == "qp":
        if algo not in ("dapdb0", "dapd"):
            raise ValueError(f"algorithm {algo!r} not applicable to family 'qp'")
        return AlgorithmConfig(
            c_alpha=0.4,
            c_beta=0.0,
            c_varsigma=0.4,
            kappa=5.0 if algo == "dapdb0" else 1.0,
        )
    raise ValueError(f"unknown family {family!r}")


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one multi-seed comparison."""

    family: str = "qcqp"
    n: int = 20
    num_nodes: int = 12
    num_edges: int = 24
    seeds: tuple = tuple(range(20))
    algorithms: tuple = ()
    iters: int = 1000
    output_dir: str = ""
    configs: dict = field(default_factory=dict)
    metric_stride: int = 1
    ref_tol: float = 1e-8
    workers: int = 1

    def __post_init__(self):
        if not self.algorithms:
            self.algorithms = ("dapdb", "dapd") if self.family == "qcqp" else ("dapdb0", "dapd")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.algorithms = tuple(self.algorithms)
        if not self.output_dir:
            self.output_dir = os.environ.get("DAPDB_OUTPUT_DIR", "dapdb-out")

    def validate(self):
        if self.family not in _GENERATORS:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.seeds:
            raise ValueError("seed list must not be empty")
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if self.family == "qcqp" and "dapdb0" in self.algorithms:
            raise ValueError("dapdb0 applies only to unconstrained families")
        for algo in self.algorithms:
            self.resolved_config(algo)

    def resolved_config(self, algo):
        base = default_config(self.family, algo)
        overrides = self.configs.get(algo, {})
        if isinstance(overrides, AlgorithmConfig):
            return overrides
        unknown = set(overrides) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"unknown config keys for {algo}: {sorted(unknown)}")
        return replace(base, **overrides)

    def to_dict(self):
        out = asdict(self)
        out["seeds"] = list(self.seeds)
        out["algorithms"] = list(self.algorithms)
        return out

    @classmethod
    def from_dict(cls, payload):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path):
        with open(path) as handle:
            return cls.from_dict(json.load(handle))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    run_paths: dict
    aggregate_paths: dict
    failed_seeds: list
    summary: dict


def _instance_for_seed(spec, seed):
    return _GENERATORS[spec.family](spec.n, spec.num_nodes, seed, spec.num_edges)


def _run_seed(spec, seed):
    """Generate, reference-solve, and run every algorithm for one seed."""
    instance = _instance_for_seed(spec, seed)
    ref = solve_centralized(instance, tol=spec.ref_tol)
    instance.phi_star = ref.phi_star
    instance.phi_star_method = ref.method_tag
    instance.phi_star_tol = ref.tolerance
    outdir = Path(spec.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_instance(instance, outdir / f"{spec.family}_seed{seed}.npz")
    paths = {}
    for algo in spec.algorithms:
        config = spec.resolved_config(algo)
        trace = solve(
            instance,
            config,
            spec.iters,
            algo=algo,
            metric_stride=spec.metric_stride,
        )
        path = outdir / f"{spec.family}_seed{seed}_{algo}.csv"
        csv_export(trace, path)
        paths[algo] = str(path)
    return paths


def run_experiment(spec):
    """Execute the full spec; aggregate across the seeds that succeeded.

    A failed seed is recorded and excluded from aggregates; the caller maps a
    nonempty failure list to a nonzero exit status.
    """
    spec.validate()
    results, failures = {}, []
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = {seed: pool.submit(_run_seed, spec, seed) for seed in spec.seeds}
            for seed, fut in futures.items():
                try:
                    results[seed] = fut.result()
                except Exception as exc:  # noqa: BLE001 - records any seed failure
                    failures.append((seed, repr(exc)))
    else:
        for seed in spec.seeds:
            try:
                results[seed] = _run_seed(spec, seed)
            except Exception as exc:  # noqa: BLE001
                failures.append((seed, repr(exc)))

    aggregate_paths = {}
    summary = {}
    outdir = Path(spec.output_dir)
    for algo in spec.algorithms:
        runs = [csv_import(results[seed][algo]) for seed in results]
        if not runs:
            continue
        agg_path = outdir / f"{spec.family}_{algo}_aggregate.csv"
        _write_aggregate(runs, agg_path)
        calls_path = outdir / f"{spec.family}_{algo}_by_calls.csv"
        _write_call_aligned(runs, calls_path)
        aggregate_paths[algo] = str(agg_path)
        summary[algo] = {
            "final_log_rel_subopt_median": float(
                np.median([run["log_rel_subopt"][-1] for run in runs])
            ),
            "final_consensus_median": float(
                np.median([run["rel_consensus_err"][-1] for run in runs])
            ),
            "total_backtracks_median": float(
                np.median([run["total_backtracks"][-1] for run in runs])
            ),
        }
    return ExperimentResult(
        spec=spec,
        run_paths=results,
        aggregate_paths=aggregate_paths,
        failed_seeds=failures,
        summary=summary,
    )


_AGG_METRICS = ("log_rel_subopt", "rel_consensus_err", "rel_infeasibility")


def _write_aggregate(runs, path):
    """Per-row mean/std across seeds, aligned by iteration index."""
    rows = min(len(run) for run in runs)
    cols = {"k": runs[0]["k"][:rows]}
    cols["avg_grad_calls_per_node_mean"] = np.mean(
        [run["avg_grad_calls_per_node"][:rows] for run in runs], axis=0
    )
    cols["neighbor_rounds"] = runs[0]["neighbor_rounds"][:rows]
    for name in _AGG_METRICS:
        stack = np.array([run[name][:rows] for run in runs])
        cols[f"{name}_mean"] = stack.mean(axis=0)
        cols[f"{name}_std"] = stack.std(axis=0)
    _write_csv(path, cols)


def _write_call_aligned(runs, path, grid_size=200):
    """Mean/std on a shared cumulative-gradient-call grid (step interpolation)."""
    budgets = [run["avg_grad_calls_per_node"] for run in runs]
    lo = max(b[0] for b in budgets)
    hi = min(b[-1] for b in budgets)
    grid = np.linspace(lo, hi, grid_size)
    cols = {"avg_grad_calls_per_node": grid}
    for name in _AGG_METRICS:
        vals = []
        for run, budget in zip(runs, budgets):
            series = run[name]
            idx = np.clip(np.searchsorted(budget, grid, side="right") - 1, 0, len(series) - 1)
            vals.append(series[idx])
        stack = np.array(vals)
        cols[f"{name}_mean"] = stack.mean(axis=0)
        cols[f"{name}_std"] = stack.std(axis=0)
    _write_csv(path, cols)


def _write_csv(path, cols):
    names = list(cols)
    length = len(next(iter(cols.values())))
    with open(path, "w", newline="") as handle:
        handle.write(",".join(names) + "\n")
        for idx in range(length):
            handle.write(
                ",".join(format(float(cols[name][idx]), ".17g") for name in names)
                + "\n"
            )


def compare_at_equal_budget(runs_a, runs_b, column="log_rel_subopt"):
    """Pairwise comparison at the largest shared gradient-call budget.

    For each seed pair, reads the metric of both runs at the same budget (the
    largest both reached) via step interpolation. Returns medians and the
    number of seeds where the first run is strictly lower.
    """
    vals_a, vals_b = [], []
    for run_a, run_b in zip(runs_a, runs_b):
        budget = min(
            run_a["avg_grad_calls_per_node"][-1], run_b["avg_grad_calls_per_node"][-1]
        )
        vals_a.append(_value_at_budget(run_a, budget, column))
        vals_b.append(_value_at_budget(run_b, budget, column))
    vals_a, vals_b = np.array(vals_a), np.array(vals_b)
    return {
        "median_a": float(np.median(vals_a)),
        "median_b": float(np.median(vals_b)),
        "wins_a": int(np.sum(vals_a < vals_b)),
        "seeds": len(vals_a),
    }


def _value_at_budget(run, budget, column):
    calls = run["avg_grad_calls_per_node"]
    idx = int(np.clip(np.searchsorted(calls, budget, side="right") - 1, 0, len(calls) - 1))
    return float(run[column][idx])


def describe(spec):
    """Human-readable resolved plan (no computation beyond one instance draw)."""
    spec.validate()
    sample = _instance_for_seed(spec, spec.seeds[0])
    lines = [
        f"family={spec.family} n={spec.n} nodes={spec.num_nodes} edges={spec.num_edges}",
        f"seeds={list(spec.seeds)}",
        f"iterations per run: {spec.iters}",
        f"output directory: {spec.output_dir}",
        f"reference tolerance: {spec.ref_tol:g}",
        f"default c_gamma: 1/(2*{spec.num_edges}) = {1 / (2 * spec.num_edges):.6g}",
    ]
    for algo in spec.algorithms:
        config = spec.resolved_config(algo)
        steps = reference_steps(sample, config)
        tau_bar = config.kappa * steps if algo != "dapd" else steps
        lines.append(
            f"[{algo}] delta={config.delta} c_alpha={config.c_alpha} "
            f"c_beta={config.c_beta} c_varsigma={config.c_varsigma} "
            f"rho={config.rho} kappa={config.kappa} "
            f"safe steps in [{steps.min():.4g}, {steps.max():.4g}] "
            f"initial steps in [{tau_bar.min():.4g}, {tau_bar.max():.4g}]"
        )
    return "\n".join(lines)


def emit_figure(spec, path):
    """Mean plus standard-deviation band figure from the aggregate CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(spec.output_dir)
    constrained = spec.family == "qcqp"
    panels = (
        ("log_rel_subopt", "log relative suboptimality"),
        ("rel_consensus_err", "relative consensus error"),
    ) + ((("rel_infeasibility", "relative constraint violation"),) if constrained else ())
    fig, axes = plt.subplots(1, len(panels), figsize=(5.2 * len(panels), 3.6))
    axes = np.atleast_1d(axes)
    for algo in spec.algorithms:
        table = _read_csv(outdir / f"{spec.family}_{algo}_by_calls.csv")
        x = table["avg_grad_calls_per_node"]
        for ax, (name, label) in zip(axes, panels):
            mean, std = table[f"{name}_mean"], table[f"{name}_std"]
            ax.plot(x, mean, label=algo)
            ax.fill_between(x, mean - std, mean + std, alpha=0.25)
            ax.set_xlabel("average gradient calls per node")
            ax.set_ylabel(label)
            if name != "log_rel_subopt":
                ax.set_yscale("log")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _read_csv(path):
    with open(path) as handle:
        lines = [ln.strip() for ln in handle if ln.strip()]
    names = lines[0].split(",")
    data = np.array([[float(cell) for cell in ln.split(",")] for ln in lines[1:]])
    return {name: data[:, idx] for idx, name in enumerate(names)}
