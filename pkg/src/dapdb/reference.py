"""Independent ground truth: centralized solves, grid search, KKT residuals.

The centralized reference aggregates all agents into one composite problem
and drives it with the same primal-dual kernel steps but a standalone loop
(no graph, no consensus state), stopping on a KKT residual. The grid oracle
is a brute-force scan for tiny dimensions. Cross-checking the two guards the
reference against inheriting distributed-loop bugs.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import project_nonneg_ball, soft_threshold_box

__all__ = [
    "ReferenceSolution",
    "ReferenceError",
    "solve_centralized",
    "brute_force_grid",
    "kkt_residual",
]


class ReferenceError(RuntimeError):
    """Reference computation failed to reach its tolerance."""


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    phi_star: float
    theta_star: list
    kkt_residual: float
    method_tag: str
    tolerance: float
    iterations: int


def _aggregate_structure(instance):
    """l1 weight, box radius, and per-node dual blocks of the aggregated problem."""
    weights = [node.l1_weight for node in instance.nodes]
    boxes = [node.box_radius for node in instance.nodes]
    if any(w is None or b is None for w, b in zip(weights, boxes)):
        raise ValueError(
            "centralized reference needs nodes with l1-plus-box structure"
        )
    return float(sum(weights)), float(min(boxes))


def _total_smooth(instance):
    """Aggregated smooth oracle; collapses quadratic data when available."""
    data = instance.data
    if data is not None and "quad" in data:
        quad = np.asarray(data["quad"]).sum(axis=0)
        lin = (
            np.asarray(data["lin"]).sum(axis=0)
            if "lin" in data
            else np.zeros(instance.dim)
        )
        const = float(np.sum(data["const"])) if "const" in data else 0.0

        def value(x):
            return 0.5 * float(x @ quad @ x) + float(lin @ x) + const

        def grad(x):
            return quad @ x + lin

        return value, grad

    def value(x):
        return sum(float(node.f_value(x)) for node in instance.nodes)

    def grad(x):
        out = np.zeros(instance.dim)
        for node in instance.nodes:
            out += node.f_grad(x)
        return out

    return value, grad


def _stack_constraints(instance, x):
    return [node.g_value(x) if node.m else None for node in instance.nodes]


def _stack_jacobians(instance, x):
    return [node.g_jac(x) if node.m else None for node in instance.nodes]


def _jac_T_theta(instance, jacs, thetas):
    out = np.zeros(instance.dim)
    for node, jac, theta in zip(instance.nodes, jacs, thetas):
        if node.m:
            out += jac.T @ theta
    return out


def solve_centralized(
    instance,
    tol=1e-10,
    max_iters=2_000_000,
    check_every=50,
    delta=0.1,
    c_alpha=0.1,
    c_beta=0.1,
    c_varsigma=0.1,
    rho=0.9,
    zeta=1.0,
    tau_init=1.0,
    polish=True,
):
    """High-accuracy optimum of the aggregated problem.

    Runs the single-node specialization of the adaptive primal-dual loop on
    ``min_x sum_i [phi_i + f_i](x)  s.t.  g_i(x) <= 0`` until the KKT
    residual drops below ``tol`` (checked every ``check_every`` iterations).
    Shares the prox/projection kernels with the distributed path but none of
    its state handling.

    The first-order loop stalls around 1e-7/1e-8 residuals, so once it gets
    within polishing range an active-set Newton step refines the iterate to
    full accuracy; the polished point is accepted only if the independent
    KKT residual confirms it. Disable with ``polish=False``.
    """
    l1_total, box = _aggregate_structure(instance)
    f_value, f_grad = _total_smooth(instance)
    constrained = [node.m > 0 for node in instance.nodes]
    c_sum = c_alpha + c_beta + c_varsigma
    if delta + c_sum >= 1:
        raise ValueError("need delta + c_alpha + c_beta + c_varsigma < 1")

    x = instance.x0[0].astype(np.float64).copy()
    thetas = [np.zeros(node.m) for node in instance.nodes]
    jacs = _stack_jacobians(instance, x)
    r = _jac_T_theta(instance, jacs, thetas)
    r_prev = r.copy()
    tau = tau_init
    best = np.inf
    iterations = 0
    polish_gate = 1e-3
    polished = False

    for k in range(max_iters):
        iterations = k + 1
        grad = f_grad(x)
        f_x = f_value(x)
        tau_prev = tau
        tau_tilde = tau_prev
        for trial in range(4000):
            eta = tau_prev / tau_tilde
            p = r + eta * (r - r_prev)
            x_new = soft_threshold_box(
                x - tau_tilde * (grad + p), tau_tilde * l1_total, box
            )
            dx = x_new - x
            dx_sq = float(dx @ dx)
            lam = f_value(x_new) - f_x - float(grad @ dx)
            value = 2.0 * lam - (1.0 - c_sum) / tau_tilde * dx_sq
            threshold = -(delta / tau_tilde) * dx_sq
            new_thetas, new_jacs = [], []
            dth_terms = 0.0
            for node, theta in zip(instance.nodes, thetas):
                if not node.m:
                    new_thetas.append(theta)
                    new_jacs.append(None)
                    continue
                sigma_tilde = zeta * tau_tilde
                theta_new = project_nonneg_ball(
                    theta + sigma_tilde * node.g_value(x_new), node.dual_bound
                )
                jac_new = node.g_jac(x_new)
                dth = theta_new - theta
                dth_sq = float(dth @ dth)
                value -= dth_sq / sigma_tilde
                value += 2.0 * tau_tilde / c_alpha * float(np.sum((jac_new.T @ dth) ** 2))
                threshold -= (delta / sigma_tilde) * dth_sq
                new_thetas.append(theta_new)
                new_jacs.append(jac_new)
                dth_terms += dth_sq
            if any(constrained):
                drift = _jac_diff_T_theta(instance, new_jacs, jacs, thetas)
                value += tau_tilde / c_beta * drift
            if value <= threshold:
                break
            tau_tilde = rho * tau_tilde
        else:
            raise ReferenceError("centralized line search failed to terminate")

        x, thetas, jacs = x_new, new_thetas, new_jacs
        r_prev = r
        r = _jac_T_theta(instance, jacs, thetas)
        tau = tau_tilde
        if not np.all(np.isfinite(x)):
            raise ReferenceError(f"centralized iterates diverged at iteration {k}")
        if (k + 1) % check_every == 0:
            res = kkt_residual(instance, x, thetas)
            best = min(best, res)
            if res <= tol:
                break
            if polish and res <= max(tol, polish_gate):
                refined = _active_set_polish(instance, x, thetas, tol)
                if refined is not None:
                    x, thetas = refined
                    polished = True
                    break
                polish_gate *= 0.1
    else:
        raise ReferenceError(
            f"no convergence within {max_iters} iterations; best residual {best:.3e}"
        )

    res = kkt_residual(instance, x, thetas)
    method = "centralized-adaptive-primal-dual"
    if polished:
        method += "+active-set-polish"
    return ReferenceSolution(
        x_star=x,
        phi_star=float(instance.total_objective(x)),
        theta_star=[t.copy() for t in thetas],
        kkt_residual=res,
        method_tag=f"{method}(tol={tol:g})",
        tolerance=tol,
        iterations=iterations,
    )


def _jac_diff_T_theta(instance, jacs_new, jacs_old, thetas):
    total = 0.0
    for node, jac_new, jac_old, theta in zip(instance.nodes, jacs_new, jacs_old, thetas):
        if node.m:
            total += float(np.sum(((jac_new - jac_old).T @ theta) ** 2))
    return total


def _lagrangian_grad(instance, f_grad, x, theta_flat, blocks):
    out = f_grad(x).copy()
    for (node, sl) in blocks:
        out += node.g_jac(x).T @ theta_flat[sl]
    return out


def _lagrangian_hessian(instance, f_grad, x, theta_flat, blocks):
    """Central-difference Hessian of the Lagrangian (inexact Newton is fine)."""
    n = len(x)
    hess = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        hess[:, j] = (
            _lagrangian_grad(instance, f_grad, xp, theta_flat, blocks)
            - _lagrangian_grad(instance, f_grad, xm, theta_flat, blocks)
        ) / (2 * h)
    return 0.5 * (hess + hess.T)


def _active_set_polish(instance, x_hat, thetas_hat, tol, newton_iters=40):
    """Newton refinement on the active manifold identified at ``x_hat``.

    Coordinates are pinned at zero (l1 kink) or the box boundary, remaining
    constraints with nonnegligible duals or near-zero values are treated as
    equalities, and Newton's method solves the reduced stationarity system.
    Returns ``(x, thetas)`` only when the refined point passes the full KKT
    residual at ``tol``; any misclassification returns ``None``.
    """
    l1_total, box = _aggregate_structure(instance)
    f_value, f_grad = _total_smooth(instance)
    n = instance.dim
    gate = 1e-4

    zero = np.abs(x_hat) < gate
    if np.isfinite(box):
        upper = (box - x_hat) < gate
        lower = (x_hat + box) < gate
    else:
        upper = lower = np.zeros(n, dtype=bool)
    free = ~(zero | upper | lower)
    signs = np.sign(x_hat)

    blocks = []
    offset = 0
    active_rows = []
    theta_hat_flat = []
    for node, theta in zip(instance.nodes, thetas_hat):
        if node.m:
            gval = node.g_value(x_hat)
            sl = slice(offset, offset + node.m)
            blocks.append((node, sl))
            theta_hat_flat.append(theta)
            for local in range(node.m):
                if theta[local] > gate or gval[local] > -gate:
                    active_rows.append(offset + local)
            offset += node.m
    theta_flat = (
        np.concatenate(theta_hat_flat) if theta_hat_flat else np.zeros(0)
    )
    active_rows = np.array(active_rows, dtype=np.int64)

    x = x_hat.copy()
    x[zero] = 0.0
    x[upper] = box
    x[lower] = -box
    theta = theta_flat.copy()
    inactive = np.setdiff1d(np.arange(offset), active_rows)
    theta[inactive] = 0.0

    free_idx = np.flatnonzero(free)
    n_free, n_act = len(free_idx), len(active_rows)
    if n_free == 0 and n_act == 0:
        return _polish_validate(instance, x, theta, blocks, tol)

    for _ in range(newton_iters):
        grad_l = _lagrangian_grad(instance, f_grad, x, theta, blocks)
        r_stat = grad_l[free_idx] + l1_total * signs[free_idx]
        r_feas = np.empty(n_act)
        jac_rows = np.zeros((n_act, n_free))
        pos = 0
        for node, sl in blocks:
            rows = [r for r in active_rows if sl.start <= r < sl.stop]
            if not rows:
                continue
            gval = node.g_value(x)
            jac = node.g_jac(x)
            for r in rows:
                r_feas[pos] = gval[r - sl.start]
                jac_rows[pos] = jac[r - sl.start, free_idx]
                pos += 1
        res_norm = max(
            float(np.max(np.abs(r_stat), initial=0.0)),
            float(np.max(np.abs(r_feas), initial=0.0)),
        )
        if res_norm < 1e-13 * max(1.0, float(np.abs(grad_l).max())):
            break
        hess = _lagrangian_hessian(instance, f_grad, x, theta, blocks)
        kkt = np.zeros((n_free + n_act, n_free + n_act))
        kkt[:n_free, :n_free] = hess[np.ix_(free_idx, free_idx)]
        kkt[:n_free, n_free:] = jac_rows.T
        kkt[n_free:, :n_free] = jac_rows
        rhs = -np.concatenate([r_stat, r_feas])
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x[free_idx] += step[:n_free]
        theta[active_rows] += step[n_free:]

    if np.any(theta < -1e-9) or np.any(np.abs(x) > box * (1 + 1e-12)):
        return None
    theta = np.maximum(theta, 0.0)
    return _polish_validate(instance, x, theta, blocks, tol)


def _polish_validate(instance, x, theta_flat, blocks, tol):
    thetas = [np.zeros(node.m) for node in instance.nodes]
    idx = 0
    for node, sl in blocks:
        while idx < len(instance.nodes) and instance.nodes[idx] is not node:
            idx += 1
        thetas[idx] = theta_flat[sl].copy()
    if kkt_residual(instance, x, thetas) <= tol:
        return x, thetas
    return None


def kkt_residual(instance, x, thetas):
    """Max of stationarity, primal feasibility, and complementarity residuals.

    Stationarity is the unit-step prox fixed-point gap
    ``||x - prox_phi(x - (grad f(x) + Jg(x)^T theta))||``; feasibility is the
    worst positive part of any constraint; complementarity the worst
    ``|<theta_i, g_i(x)>|``.
    """
    x = np.asarray(x, dtype=np.float64)
    l1_total, box = _aggregate_structure(instance)
    f_value, f_grad = _total_smooth(instance)
    direction = f_grad(x).copy()
    feas = 0.0
    comp = 0.0
    for node, theta in zip(instance.nodes, thetas):
        if not node.m:
            continue
        theta = np.asarray(theta, dtype=np.float64)
        if np.any(theta < 0):
            raise ValueError("dual blocks must be componentwise nonnegative")
        gval = node.g_value(x)
        direction += node.g_jac(x).T @ theta
        feas = max(feas, float(np.linalg.norm(np.maximum(gval, 0.0))))
        comp = max(comp, abs(float(theta @ gval)))
    station = float(
        np.linalg.norm(x - soft_threshold_box(x - direction, l1_total, box))
    )
    return max(station, feas, comp)


def _batch_objective(instance, points):
    l1_total, _ = _aggregate_structure(instance)
    total = l1_total * np.abs(points).sum(axis=1)
    for node in instance.nodes:
        if node.f_value_batch is not None:
            total += node.f_value_batch(points)
        else:
            total += np.array([node.f_value(p) for p in points])
    return total


def _batch_feasible(instance, points):
    mask = np.ones(points.shape[0], dtype=bool)
    for node in instance.nodes:
        if not node.m:
            continue
        if node.g_value_batch is not None:
            vals = node.g_value_batch(points)
        else:
            vals = np.array([node.g_value(p) for p in points])
        mask &= np.all(vals <= 0.0, axis=1)
    return mask


def brute_force_grid(instance, grid_step, chunk=2_000_000):
    """Exhaustive scan of the box on a uniform grid (dimensions up to 3).

    Evaluates the full objective at every grid point, discards infeasible
    ones, and returns the minimal feasible value. Cost grows like
    ``(2*radius/grid_step)^n``.
    """
    n = instance.dim
    if n > 3:
        raise ValueError("grid oracle supports n <= 3 only")
    _, box = _aggregate_structure(instance)
    if not np.isfinite(box):
        raise ValueError("grid oracle needs a bounded domain")
    # linspace hits the endpoints and (for the symmetric box) zero exactly
    axis = np.linspace(-box, box, int(round(2 * box / grid_step)) + 1)
    best = np.inf
    if n == 1:
        for start in range(0, len(axis), chunk):
            pts = axis[start : start + chunk, None]
            best = min(best, _chunk_min(instance, pts))
    else:
        rows_per_chunk = max(1, chunk // (len(axis) ** (n - 1)))
        tail_axes = (axis,) * (n - 1)
        tail = np.stack(
            [grid.ravel() for grid in np.meshgrid(*tail_axes, indexing="ij")], axis=1
        )
        for start in range(0, len(axis), rows_per_chunk):
            block = axis[start : start + rows_per_chunk]
            pts = np.concatenate(
                [
                    np.repeat(block, tail.shape[0])[:, None],
                    np.tile(tail, (len(block), 1)),
                ],
                axis=1,
            )
            best = min(best, _chunk_min(instance, pts))
    if not np.isfinite(best):
        raise ReferenceError("no feasible grid point found")
    return float(best)


def _chunk_min(instance, points):
    mask = _batch_feasible(instance, points)
    if not mask.any():
        return np.inf
    return float(_batch_objective(instance, points[mask]).min())
