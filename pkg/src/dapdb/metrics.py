"""Run metrics, trace recording, CSV export, and consensus diagnostics.

Three headline quantities are tracked per iteration, all evaluated at the
plain node mean of the current iterates: log relative suboptimality,
relative consensus error, and relative constraint violation. The t-weighted
ergodic averages (a different object: per-node running averages) are
exported under separate ``*_erg`` column names to avoid conflating the two.
"""

import io
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import incidence_apply

__all__ = [
    "RunTrace",
    "log_rel_suboptimality",
    "rel_consensus_error",
    "rel_infeasibility",
    "csv_export",
    "csv_import",
    "lambda_reconstruction",
]

COLUMNS = (
    "k",
    "t_k",
    "eta_k",
    "gamma_k",
    "log_rel_subopt",
    "rel_consensus_err",
    "rel_infeasibility",
    "avg_grad_calls_per_node",
    "neighbor_rounds",
    "flood_rounds",
    "total_backtracks",
    "log_rel_subopt_erg",
    "rel_infeas_erg",
    "consensus_residual_erg",
)
_INT_COLUMNS = {"k", "neighbor_rounds", "flood_rounds", "total_backtracks"}


@dataclass
class RunTrace:
    """Per-iteration metric rows plus terminal ergodic quantities."""

    instance: object = None
    algo: str = ""
    phi_star: Optional[float] = None
    rows: dict = field(default_factory=lambda: {name: [] for name in COLUMNS})
    ergodic_snapshots: dict = field(default_factory=dict)
    final_x: Optional[np.ndarray] = None
    final_theta: Optional[list] = None
    ergodic_x: Optional[np.ndarray] = None
    ergodic_theta: Optional[list] = None
    ledger: object = None
    total_backtracks: int = 0
    grad_calls_per_node: Optional[np.ndarray] = None

    def append(self, row):
        for name in COLUMNS:
            self.rows[name].append(row.get(name, np.nan))

    def column(self, name):
        dtype = np.int64 if name in _INT_COLUMNS else np.float64
        return np.asarray(self.rows[name], dtype=dtype)

    def __getitem__(self, name):
        return self.column(name)

    def __len__(self):
        return len(self.rows["k"])

    def to_csv(self, path):
        csv_export(self, path)

    def equals(self, other):
        if len(self) != len(other):
            return False
        for name in COLUMNS:
            a, b = self.column(name), other.column(name)
            if not np.array_equal(a, b, equal_nan=True):
                return False
        return True


def _format_cell(name, value):
    if name in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".17g")


def csv_export(trace, path):
    """Write one header row plus one row per recorded iteration.

    Floats carry 17 significant digits so the export round-trips exactly;
    byte output is deterministic for identical traces.
    """
    buf = io.StringIO()
    buf.write(",".join(COLUMNS) + "\n")
    for idx in range(len(trace)):
        buf.write(
            ",".join(
                _format_cell(name, trace.rows[name][idx]) for name in COLUMNS
            )
            + "\n"
        )
    try:
        with open(path, "w", newline="") as handle:
            handle.write(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot export trace to {path}: {exc}") from exc


def csv_import(path):
    """Parse a trace exported by :func:`csv_export` (field-exact round trip)."""
    try:
        with open(path, newline="") as handle:
            lines = [ln.strip() for ln in handle if ln.strip()]
    except OSError as exc:
        raise OSError(f"cannot read trace from {path}: {exc}") from exc
    header = tuple(lines[0].split(","))
    if header != COLUMNS:
        raise ValueError(f"unexpected trace header in {path}")
    trace = RunTrace()
    for line in lines[1:]:
        cells = line.split(",")
        trace.append(
            {
                name: (int(cell) if name in _INT_COLUMNS else float(cell))
                for name, cell in zip(COLUMNS, cells)
            }
        )
    return trace


def log_rel_suboptimality(x_nodes, instance, phi_star):
    """``log(|phi(mean_i x_i) - phi*| / |phi*| + 1)``.

    The full objective (smooth plus nonsmooth terms of every node) is
    evaluated at the unweighted node mean. With ``phi_star == 0`` the metric
    degrades to ``log(gap + 1)`` on the absolute gap, with a warning.
    """
    x_mean = np.asarray(x_nodes, dtype=np.float64).mean(axis=0)
    return _log_gap(instance.total_objective(x_mean), phi_star)


def log_rel_suboptimality_pernode(x_pernode, instance, phi_star):
    """Same metric for per-node points: ``sum_i [phi_i + f_i](x_i)`` vs optimum."""
    value = sum(
        node.local_objective(np.asarray(x_pernode)[i])
        for i, node in enumerate(instance.nodes)
    )
    return _log_gap(value, phi_star)


def _log_gap(value, phi_star):
    if phi_star is None or not np.isfinite(value):
        return np.nan
    gap = abs(value - phi_star)
    if phi_star == 0:
        warnings.warn("phi_star is zero; reporting log(1 + absolute gap)")
        return float(np.log1p(gap))
    return float(np.log1p(gap / abs(phi_star)))


def rel_consensus_error(states, guard=1e-12):
    """``sum_i ||x_i - x_mean||^2 / (N * ||x_mean||^2)``.

    Falls back to the absolute variance ``sum_i ||x_i - x_mean||^2 / N``
    (with a warning) when the mean is numerically zero.
    """
    arr = np.asarray(states, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    mean = arr.mean(axis=0)
    spread = float(np.sum((arr - mean) ** 2)) / arr.shape[0]
    scale = float(mean @ mean)
    if scale <= guard**2:
        warnings.warn("node mean is numerically zero; reporting absolute variance")
        return spread
    return spread / scale


def infeasibility_norm(x_point, instance):
    """``max_i ||(g_i(x))_+||`` at a single shared point (0 when unconstrained)."""
    worst = 0.0
    for node in instance.nodes:
        if node.m:
            violation = np.maximum(node.g_value(np.asarray(x_point)), 0.0)
            worst = max(worst, float(np.linalg.norm(violation)))
    return worst


def max_violation_pernode(x_pernode, instance):
    """``max_i ||(g_i(x_i))_+||`` for per-node points."""
    worst = 0.0
    arr = np.asarray(x_pernode)
    for i, node in enumerate(instance.nodes):
        if node.m:
            violation = np.maximum(node.g_value(arr[i]), 0.0)
            worst = max(worst, float(np.linalg.norm(violation)))
    return worst


def rel_infeasibility(x_bar, instance, baseline):
    """Positive-part violation at the node mean, normalized by the start value.

    ``baseline`` is ``max_i ||(g_i(x_bar^0))_+||``; when it vanishes the
    absolute violation is reported instead.
    """
    current = infeasibility_norm(x_bar, instance)
    if baseline is None or baseline <= 0:
        return current
    return current / baseline


def consensus_residual(graph, x_pernode):
    """``||A x||``: root of the summed squared edge differences."""
    diffs = incidence_apply(graph, np.asarray(x_pernode, dtype=np.float64))
    return float(np.sqrt(np.sum(diffs**2)))


def lambda_reconstruction(graph, s_states):
    """Diagnostic reconstruction of the consensus dual: edge stack of ``A s``.

    The algorithm never materializes this variable; tests use it to validate
    the consensus-state elimination.
    """
    return incidence_apply(graph, np.asarray(s_states, dtype=np.float64))
