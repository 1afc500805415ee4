"""Decentralized accelerated primal-dual methods with distributed backtracking.

Three synchronous per-agent state machines over the simulated network:

``dapdb``
    Constrained composite consensus solver. Each agent runs a local
    Armijo-type search on its primal step size, a single max-consensus flood
    synchronizes the momentum parameter, and one neighbor round exchanges the
    consensus state.
``dapdb0``
    The unconstrained specialization (``g_i == 0``): all dual machinery drops
    out and the local test reduces to a pure curvature condition.
``dapd``
    Non-adaptive baseline: identical updates with the momentum parameter
    pinned to one and step sizes frozen at their safe values.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .graph import CommLedger, max_consensus, neighbor_diff
from .problem import safe_step_size
from . import metrics as _metrics

__all__ = [
    "AlgorithmConfig",
    "AgentState",
    "IterationReport",
    "SolverError",
    "BacktrackOverflow",
    "DivergenceError",
    "backtracking_test_value",
    "backtrack_node",
    "consensus_step_size",
    "reference_steps",
    "init_agent_states",
    "prepare_run",
    "dapdb_iterate",
    "dapdb0_iterate",
    "t_weights",
    "ergodic_average",
    "solve",
    "dapd_run",
]


class SolverError(RuntimeError):
    """Algorithm-level failure (divergence, broken invariant)."""


class BacktrackOverflow(SolverError):
    """Local step-size search contracted far beyond its theoretical bound."""


class DivergenceError(SolverError):
    """Non-finite or runaway iterates detected."""


@dataclass
class AlgorithmConfig:
    """Global constants of the method plus per-node step-size parameters.

    ``c_alpha + c_beta + c_varsigma + delta`` must stay below one
    (``c_beta = 0`` for the unconstrained variant), ``c_gamma`` defaults to
    the largest admissible value ``1/(2|E|)``, and ``rho`` is the contraction
    factor of the local search. ``tau_bar`` (per-node initial step sizes)
    defaults to ``kappa`` times the per-node safe step size.
    """

    delta: float = 0.1
    c_alpha: float = 0.1
    c_beta: float = 0.1
    c_varsigma: float = 0.1
    c_gamma: Optional[float] = None
    rho: float = 0.9
    zeta: object = 1.0
    tau_bar: object = None
    kappa: float = 1.0
    max_iters: int = 1000
    stable_curvature: bool = False

    @property
    def c_sum(self):
        return self.c_alpha + self.c_beta + self.c_varsigma

    def validate(self, num_edges=None, require_zero_c_beta=False):
        if min(self.delta, self.c_alpha, self.c_varsigma) <= 0 or self.c_beta < 0:
            raise ValueError("delta, c_alpha, c_varsigma must be positive; c_beta >= 0")
        if self.delta + self.c_sum >= 1:
            raise ValueError("need c_alpha + c_beta + c_varsigma < 1 - delta")
        if require_zero_c_beta and self.c_beta != 0:
            raise ValueError("the unconstrained variant requires c_beta = 0")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if num_edges and self.c_gamma is not None and self.c_gamma > 1 / (2 * num_edges):
            raise ValueError(f"c_gamma must not exceed 1/(2*{num_edges})")
        if self.c_gamma is not None and self.c_gamma <= 0:
            raise ValueError("c_gamma must be positive")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass
class AgentState:
    """Live variables of one agent.

    ``tau``/``sigma`` hold the step sizes carried into the next iteration;
    ``jac`` caches the constraint Jacobian at the current primal point so a
    base-point Jacobian never costs a second oracle call. ``grad_calls``
    counts gradient plus Jacobian evaluations (the per-node budget metric).
    """

    x: np.ndarray
    x_prev: np.ndarray
    theta: np.ndarray
    theta_prev: np.ndarray
    s: np.ndarray
    r: np.ndarray
    r_prev: np.ndarray
    tau: float
    sigma: float
    tau_init: float
    jac: Optional[np.ndarray] = None
    backtracks_this_iter: int = 0
    total_backtracks: int = 0
    grad_calls: int = 0
    f_calls: int = 0
    g_calls: int = 0


@dataclass
class IterationReport:
    """Outcome of one outer iteration."""

    eta_k: float
    gamma_k: float
    did_contract: bool
    per_node_backtracks: list
    t_k: Optional[float] = None


def backtracking_test_value(
    node, x, theta, x_cand, theta_cand, tau_tilde, config, zeta=None
):
    """Merit value whose nonpositivity (below the accept threshold) admits a step.

    For a candidate pair produced with trial step ``tau_tilde`` this is::

        2*(f(x+) - f(x) - <grad f(x), x+ - x>)
        - (1 - (c_alpha + c_beta + c_varsigma))/tau * ||x+ - x||^2
        - 1/(zeta*tau) * ||th+ - th||^2
        + (2*tau/c_alpha) * ||Jg(x+)^T (th+ - th)||^2
        + (tau/c_beta)   * ||(Jg(x+) - Jg(x))^T th||^2

    with the constraint terms absent when the node is unconstrained. The
    candidate is accepted when the value is at most
    ``-(delta/tau)*||x+ - x||^2 - (delta/(zeta*tau))*||th+ - th||^2``.
    """
    if tau_tilde <= 0:
        raise ValueError("tau_tilde must be positive")
    if zeta is None:
        if np.ndim(config.zeta) != 0:
            raise ValueError("pass an explicit zeta when config.zeta is per-node")
        zeta = float(config.zeta)
    dx = x_cand - x
    if config.stable_curvature:
        lam = float((node.f_grad(x_cand) - node.f_grad(x)) @ dx)
    else:
        lam = float(node.f_value(x_cand)) - float(node.f_value(x)) - float(
            node.f_grad(x) @ dx
        )
    value = 2.0 * lam - (1.0 - config.c_sum) / tau_tilde * float(dx @ dx)
    if node.m:
        if config.c_beta <= 0:
            raise ValueError("constrained nodes need c_beta > 0")
        dth = theta_cand - theta
        value -= float(dth @ dth) / (zeta * tau_tilde)
        value += (
            2.0
            * tau_tilde
            / config.c_alpha
            * float(np.sum(node.g_jac_T_apply(x_cand, dth) ** 2))
        )
        value += (
            tau_tilde
            / config.c_beta
            * float(np.sum(node.g_jac_diff_T_apply(x_cand, x, theta) ** 2))
        )
    return value


def _accept_threshold(delta, tau_tilde, sigma_tilde, dx_sq, dth_sq):
    thr = -(delta / tau_tilde) * dx_sq
    if sigma_tilde is not None:
        thr -= (delta / sigma_tilde) * dth_sq
    return thr


@dataclass
class _Candidate:
    tau: float
    eta: float
    x: np.ndarray
    theta: np.ndarray
    contractions: int
    grad: np.ndarray
    jac: Optional[np.ndarray]


def _contraction_cap(config, tau_bar, tau_hat):
    if tau_hat is None or not np.isfinite(tau_hat) or tau_hat <= 0:
        return 500
    ratio = max(tau_bar / tau_hat, 1.0)
    return 10 * (math.ceil(math.log(ratio) / math.log(1.0 / config.rho)) + 1)


def _node_search(node, state, config, zeta_i, adaptive, cap):
    """Local Armijo-type search; returns the accepted candidate tuple."""
    from .kernels import project_nonneg_ball

    x, theta = state.x, state.theta
    grad = node.f_grad(x)
    state.grad_calls += 1
    f_x = None
    if adaptive and not config.stable_curvature:
        f_x = float(node.f_value(x))
        state.f_calls += 1
    tau_prev = state.tau
    tau_tilde = tau_prev
    contractions = 0
    while True:
        eta_i = tau_prev / tau_tilde
        p_tilde = state.r + eta_i * (state.r - state.r_prev)
        x_tilde = node.prox_phi(x - tau_tilde * (grad + p_tilde), tau_tilde)
        if node.m:
            sigma_tilde = zeta_i * tau_tilde
            g_tilde = node.g_value(x_tilde)
            state.g_calls += 1
            theta_tilde = project_nonneg_ball(
                theta + sigma_tilde * g_tilde, node.dual_bound
            )
        else:
            sigma_tilde = None
            theta_tilde = theta
        if not adaptive:
            return _Candidate(tau_tilde, eta_i, x_tilde, theta_tilde, 0, grad, None)

        dx = x_tilde - x
        dx_sq = float(dx @ dx)
        if config.stable_curvature:
            lam = float((node.f_grad(x_tilde) - grad) @ dx)
            state.grad_calls += 1
        else:
            lam = float(node.f_value(x_tilde)) - f_x - float(grad @ dx)
            state.f_calls += 1
        value = 2.0 * lam - (1.0 - config.c_sum) / tau_tilde * dx_sq
        jac_tilde = None
        dth_sq = 0.0
        if node.m:
            jac_tilde = node.g_jac(x_tilde)
            state.grad_calls += 1
            dth = theta_tilde - theta
            dth_sq = float(dth @ dth)
            value -= dth_sq / sigma_tilde
            value += (
                2.0 * tau_tilde / config.c_alpha * float(np.sum((jac_tilde.T @ dth) ** 2))
            )
            value += (
                tau_tilde
                / config.c_beta
                * float(np.sum(((jac_tilde - state.jac).T @ theta) ** 2))
            )
        if value <= _accept_threshold(config.delta, tau_tilde, sigma_tilde, dx_sq, dth_sq):
            return _Candidate(
                tau_tilde, eta_i, x_tilde, theta_tilde, contractions, grad, jac_tilde
            )
        tau_tilde = config.rho * tau_tilde
        contractions += 1
        if contractions > cap:
            raise BacktrackOverflow(
                f"{contractions} contractions in one iteration exceeds the "
                f"diagnostic cap {cap}; the search should terminate well before"
            )


def backtrack_node(node, state, config, zeta=None, tau_hat=None):
    """Run one agent's step-size search against its current state.

    Returns ``(tau_tilde, eta_i, x_tilde, theta_tilde, num_contractions)``.
    The accepted pair satisfies the test condition on re-evaluation. Raises
    :class:`BacktrackOverflow` if the number of contractions exceeds ten
    times the theoretical bound derived from ``tau_hat``.
    """
    if zeta is None:
        if np.ndim(config.zeta) != 0:
            raise ValueError("pass an explicit zeta when config.zeta is per-node")
        zeta = float(config.zeta)
    if node.m and config.c_beta <= 0:
        raise ValueError("constrained nodes need c_beta > 0")
    cap = _contraction_cap(config, state.tau_init, tau_hat)
    cand = _node_search(node, state, config, zeta, True, cap)
    state.backtracks_this_iter = cand.contractions
    state.total_backtracks += cand.contractions
    return cand.tau, cand.eta, cand.x, cand.theta, cand.contractions


def consensus_step_size(eta_k, tau_bar_max, config):
    """Momentum-coupled weight of the consensus-state update.

    ``(c_gamma / tau_bar_max) * (2/c_alpha + eta_k/c_varsigma)^(-1)``;
    strictly positive and nonincreasing in ``eta_k``.
    """
    if config.c_gamma is None:
        raise ValueError("c_gamma must be resolved before use")
    return (config.c_gamma / tau_bar_max) / (
        2.0 / config.c_alpha + eta_k / config.c_varsigma
    )


# spec-facing alias: the line "gamma^k <- ..." of the outer loop
gamma_update = consensus_step_size


def reference_steps(instance, config, zeta=None):
    """Per-node safe step sizes from the stored smoothness constants.

    Uses the closed-form bound; for the unconstrained QP family the
    conventional ``1/(2*L_i)`` reference is used instead (the protocol the
    instances were designed around).
    """
    zeta_arr = _resolve_zeta(instance, config, zeta)
    steps = np.empty(instance.num_nodes)
    for i, node in enumerate(instance.nodes):
        if node.lip_grad is None:
            raise ValueError(f"node {i} lacks smoothness constants")
        if instance.family == "qp" and node.m == 0:
            steps[i] = 1.0 / (2.0 * node.lip_grad)
        else:
            steps[i] = safe_step_size(
                node.lip_grad,
                node.lip_jac or 0.0,
                node.jac_bound or 0.0,
                node.dual_bound,
                config.delta,
                config.c_alpha,
                config.c_beta,
                config.c_varsigma,
                float(zeta_arr[i]),
            )
    return steps


def _resolve_zeta(instance, config, zeta=None):
    if zeta is None:
        zeta = config.zeta
    return np.broadcast_to(np.asarray(zeta, dtype=np.float64), (instance.num_nodes,))


def _resolve_tau_bar(instance, config, zeta_arr):
    if config.tau_bar is not None:
        return np.broadcast_to(
            np.asarray(config.tau_bar, dtype=np.float64), (instance.num_nodes,)
        ).copy()
    return config.kappa * reference_steps(instance, config, zeta_arr)


def init_agent_states(instance, tau_bar, zeta):
    """Initial agent states: primal at ``x0``, duals at zero, momentum cache
    seeded from the Jacobian at the start point."""
    states = []
    for i, node in enumerate(instance.nodes):
        x = instance.x0[i].astype(np.float64).copy()
        theta = np.zeros(node.m)
        if node.m:
            jac = node.g_jac(x)
            r = jac.T @ theta
        else:
            jac = None
            r = np.zeros(node.dim)
        states.append(
            AgentState(
                x=x,
                x_prev=x.copy(),
                theta=theta,
                theta_prev=theta.copy(),
                s=np.zeros(node.dim),
                r=r,
                r_prev=r.copy(),
                tau=float(tau_bar[i]),
                sigma=float(zeta[i] * tau_bar[i]),
                tau_init=float(tau_bar[i]),
                jac=jac,
                grad_calls=1 if node.m else 0,
            )
        )
    return states


def prepare_run(instance, config, algo="dapdb"):
    """Resolve per-node parameters and build initial run state.

    Returns ``(states, ledger, tau_bar_max, zeta, safe_steps)`` with the
    startup flood for the network-wide maximum initial step already charged.
    """
    config = replace(config)
    if config.c_gamma is None:
        config.c_gamma = (
            1.0 / (2.0 * instance.graph.num_edges) if instance.graph.num_edges else 1.0
        )
    zeta_arr = _resolve_zeta(instance, config)
    if algo == "dapd" and config.tau_bar is None:
        tau_bar = reference_steps(instance, config, zeta_arr)
    else:
        tau_bar = _resolve_tau_bar(instance, config, zeta_arr)
    try:
        safe_steps = reference_steps(instance, config, zeta_arr)
    except ValueError:
        safe_steps = None
    ledger = CommLedger()
    states = init_agent_states(instance, tau_bar, zeta_arr)
    tau_bar_max = max_consensus(instance.graph, tau_bar, ledger)
    return config, states, ledger, tau_bar_max, zeta_arr, safe_steps


def _iterate_core(
    instance, states, config, ledger, tau_bar_max, zeta_arr, adaptive, safe_steps
):
    from .kernels import project_nonneg_ball

    graph = instance.graph
    candidates = []
    for i, (node, state) in enumerate(zip(instance.nodes, states)):
        cap = _contraction_cap(
            config, state.tau_init, None if safe_steps is None else safe_steps[i]
        )
        cand = _node_search(node, state, config, float(zeta_arr[i]), adaptive, cap)
        state.backtracks_this_iter = cand.contractions
        state.total_backtracks += cand.contractions
        candidates.append(cand)

    eta_k = max_consensus(graph, [c.eta for c in candidates], ledger)
    gamma_k = consensus_step_size(eta_k, tau_bar_max, config)

    new_s = np.empty((graph.num_nodes, instance.dim))
    new_x, new_theta, new_jac = [], [], []
    for i, (node, state, cand) in enumerate(zip(instance.nodes, states, candidates)):
        tau_k = state.tau / eta_k
        new_s[i] = state.s + gamma_k * ((1.0 + eta_k) * state.x - eta_k * state.x_prev)
        if eta_k > 1.0:
            p = state.r + eta_k * (state.r - state.r_prev)
            x_next = node.prox_phi(state.x - tau_k * (cand.grad + p), tau_k)
            if node.m:
                sigma_k = zeta_arr[i] * tau_k
                g_next = node.g_value(x_next)
                state.g_calls += 1
                theta_next = project_nonneg_ball(
                    state.theta + sigma_k * g_next, node.dual_bound
                )
                jac_next = node.g_jac(x_next)
                state.grad_calls += 1
            else:
                theta_next = state.theta
                jac_next = None
        else:
            x_next, theta_next, jac_next = cand.x, cand.theta, cand.jac
            if node.m and jac_next is None:
                jac_next = node.g_jac(x_next)
                state.grad_calls += 1
        new_x.append(x_next)
        new_theta.append(theta_next)
        new_jac.append(jac_next)

    lap = neighbor_diff(graph, new_s, ledger)
    for i, (node, state) in enumerate(zip(instance.nodes, states)):
        r_next = lap[i].copy()
        if node.m:
            r_next += new_jac[i].T @ new_theta[i]
        state.x_prev = state.x
        state.x = new_x[i]
        state.theta_prev = state.theta
        state.theta = new_theta[i]
        state.s = new_s[i]
        state.r_prev = state.r
        state.r = r_next
        state.tau = state.tau / eta_k
        state.sigma = float(zeta_arr[i]) * state.tau
        state.jac = new_jac[i]

    return IterationReport(
        eta_k=eta_k,
        gamma_k=gamma_k,
        did_contract=eta_k > 1.0,
        per_node_backtracks=[c.contractions for c in candidates],
    )


def dapdb_iterate(
    instance,
    states,
    config,
    ledger,
    tau_bar_max,
    zeta=None,
    adaptive=True,
    safe_steps=None,
):
    """One synchronous outer iteration of the constrained method.

    Per-node backtracking, one max-consensus flood for the momentum
    parameter, the consensus-state/primal/dual updates (recomputed with the
    synchronized step when any node contracted, adopted verbatim otherwise),
    and one neighbor round to refresh the momentum cache.
    """
    if any(node.m > 0 for node in instance.nodes) and config.c_beta <= 0:
        raise ValueError("constrained instances need c_beta > 0")
    zeta_arr = _resolve_zeta(instance, config, zeta)
    return _iterate_core(
        instance, states, config, ledger, tau_bar_max, zeta_arr, adaptive, safe_steps
    )


def dapdb0_iterate(
    instance,
    states,
    config,
    ledger,
    tau_bar_max,
    zeta=None,
    adaptive=True,
    safe_steps=None,
):
    """One outer iteration of the unconstrained variant (``g_i == 0``).

    Rejects instances with constraints; with ``c_beta = 0`` the local test
    reduces to the pure curvature condition."""
    if any(node.m > 0 for node in instance.nodes):
        raise ValueError("dapdb0 requires all nodes unconstrained (m_i = 0)")
    config.validate(require_zero_c_beta=True)
    zeta_arr = _resolve_zeta(instance, config, zeta)
    return _iterate_core(
        instance, states, config, ledger, tau_bar_max, zeta_arr, adaptive, safe_steps
    )


def t_weights(eta_sequence):
    """Ergodic weights: ``t_0 = 1`` and ``t_{k+1} = t_k / eta^{k+1}``.

    The leading momentum value is not consumed (weights depend on
    ``eta^1, eta^2, ...``). All outputs lie in ``(0, 1]`` and are
    nonincreasing.
    """
    eta = np.asarray(eta_sequence, dtype=np.float64)
    if np.any(eta < 1.0):
        raise ValueError("momentum parameters must be >= 1")
    t = np.ones(len(eta))
    for k in range(1, len(eta)):
        t[k] = t[k - 1] / eta[k]
    return t


def ergodic_average(trajectory, weights, num_iters):
    """Normalized t-weighted average of the first ``num_iters`` iterates."""
    if num_iters < 1 or len(trajectory) < num_iters:
        raise ValueError("need at least num_iters recorded iterates")
    weights = np.asarray(weights, dtype=np.float64)[:num_iters]
    total = weights.sum()
    acc = None
    for w, item in zip(weights, trajectory):
        arr = np.asarray(item, dtype=np.float64)
        acc = w * arr if acc is None else acc + w * arr
    return acc / total


def _check_divergence(instance, states, k):
    for i, (node, state) in enumerate(zip(instance.nodes, states)):
        if not (np.all(np.isfinite(state.x)) and np.all(np.isfinite(state.theta))):
            raise DivergenceError(f"non-finite state at node {i}, iteration {k}")
        radius = node.domain_radius
        if np.isfinite(radius) and float(np.linalg.norm(state.x)) > 1e3 * radius:
            raise DivergenceError(
                f"iterate of node {i} left the domain scale at iteration {k}"
            )


def _check_condition(states, report, taus_before, config, degrees):
    total = sum(
        d * (2.0 * s.tau / config.c_alpha + report.eta_k * tb / config.c_varsigma)
        for d, s, tb in zip(degrees, states, taus_before)
    )
    if report.gamma_k * total > 1.0 + 1e-12:
        raise SolverError(
            f"step-size admissibility violated: gamma*sum = {report.gamma_k * total}"
        )


def solve(
    instance,
    config,
    iters,
    algo="dapdb",
    phi_star=None,
    metric_stride=1,
    ergodic_checkpoints=(),
    check_invariants=True,
    callback=None,
    checkpoint_every=None,
    checkpoint_dir=None,
):
    """Run one algorithm for ``iters`` outer iterations and record a trace.

    ``algo`` is ``dapdb``, ``dapdb0``, or ``dapd`` (the non-adaptive
    baseline: momentum pinned to one, steps frozen at the safe values).
    Metric rows are recorded every ``metric_stride`` iterations; t-weighted
    ergodic averages are snapshotted at each iteration count listed in
    ``ergodic_checkpoints``. Returns a :class:`dapdb.metrics.RunTrace`.
    """
    if algo not in ("dapdb", "dapdb0", "dapd"):
        raise ValueError(f"unknown algorithm {algo!r}")
    graph = instance.graph
    unconstrained = all(node.m == 0 for node in instance.nodes)
    if algo == "dapdb0" and not unconstrained:
        raise ValueError("dapdb0 requires an unconstrained instance")
    adaptive = algo != "dapd"
    # prepare_run charges the startup flood for the network-wide max step
    config, states, ledger, tau_bar_max, zeta_arr, safe_steps = prepare_run(
        instance, config, algo
    )
    config.validate(graph.num_edges, require_zero_c_beta=algo == "dapdb0")

    if phi_star is None:
        phi_star = instance.phi_star
    trace = _metrics.RunTrace(instance=instance, algo=algo, phi_star=phi_star)
    iterate = dapdb0_iterate if algo == "dapdb0" else dapdb_iterate

    acc_x = np.zeros_like(instance.x0)
    acc_theta = [np.zeros(node.m) for node in instance.nodes]
    acc_t = 0.0
    t_k = 1.0
    infeas_baseline = None
    tau_after_first = None

    for k in range(iters):
        record = k % metric_stride == 0
        if record:
            x_nodes = np.array([s.x for s in states])
            x_mean = x_nodes.mean(axis=0)
            if infeas_baseline is None:
                infeas_baseline = _metrics.infeasibility_norm(x_mean, instance)
            row = dict(
                k=k,
                log_rel_subopt=_metrics.log_rel_suboptimality(
                    x_nodes, instance, phi_star
                ),
                rel_consensus_err=_metrics.rel_consensus_error(x_nodes),
                rel_infeasibility=_metrics.rel_infeasibility(
                    x_mean, instance, infeas_baseline
                ),
                avg_grad_calls_per_node=sum(s.grad_calls for s in states)
                / graph.num_nodes,
                neighbor_rounds=ledger.neighbor_rounds,
                flood_rounds=ledger.flood_rounds,
                total_backtracks=sum(s.total_backtracks for s in states),
            )
        x_snapshot = [s.x for s in states]
        theta_snapshot = [s.theta for s in states]
        taus_before = [s.tau for s in states]
        report = iterate(
            instance,
            states,
            config,
            ledger,
            tau_bar_max,
            zeta=zeta_arr,
            adaptive=adaptive,
            safe_steps=safe_steps,
        )
        if k > 0:
            t_k = t_k / report.eta_k
        report.t_k = t_k
        _check_divergence(instance, states, k)
        if check_invariants:
            _check_condition(states, report, taus_before, config, graph.degrees)
            if tau_after_first is None:
                tau_after_first = [s.tau for s in states]
            else:
                drift = max(
                    abs(s.tau / t0 - t_k)
                    for s, t0 in zip(states, tau_after_first)
                )
                if drift > 1e-12:
                    raise SolverError(
                        f"step-size synchrony broken at iteration {k}: drift {drift}"
                    )
        acc_t += t_k
        for i in range(graph.num_nodes):
            acc_x[i] += t_k * x_snapshot[i]
            if instance.nodes[i].m:
                acc_theta[i] += t_k * theta_snapshot[i]
        if record:
            x_erg = acc_x / acc_t
            row.update(
                t_k=t_k,
                eta_k=report.eta_k,
                gamma_k=report.gamma_k,
                log_rel_subopt_erg=_metrics.log_rel_suboptimality_pernode(
                    x_erg, instance, phi_star
                ),
                rel_infeas_erg=_metrics.max_violation_pernode(x_erg, instance),
                consensus_residual_erg=_metrics.consensus_residual(graph, x_erg),
            )
            trace.append(row)
        if k + 1 in ergodic_checkpoints:
            trace.ergodic_snapshots[k + 1] = (
                acc_x / acc_t,
                [a / acc_t for a in acc_theta],
            )
        if checkpoint_every and (k + 1) % checkpoint_every == 0:
            _dump_checkpoint(checkpoint_dir, algo, k + 1, states)
        if callback is not None:
            callback(k, states, report)

    trace.final_x = np.array([s.x for s in states])
    trace.final_theta = [s.theta.copy() for s in states]
    trace.ergodic_x = acc_x / acc_t
    trace.ergodic_theta = [a / acc_t for a in acc_theta]
    trace.ledger = ledger
    trace.total_backtracks = sum(s.total_backtracks for s in states)
    trace.grad_calls_per_node = np.array([s.grad_calls for s in states])
    return trace


def _dump_checkpoint(directory, algo, k, states):
    import os

    directory = directory or "."
    os.makedirs(directory, exist_ok=True)
    np.savez_compressed(
        os.path.join(directory, f"{algo}_checkpoint_{k:08d}.npz"),
        x=np.array([s.x for s in states]),
        s=np.array([s.s for s in states]),
        tau=np.array([s.tau for s in states]),
        theta=np.concatenate([s.theta for s in states])
        if any(s.theta.size for s in states)
        else np.empty(0),
    )


def dapd_run(instance, config, iters, **kwargs):
    """Non-adaptive baseline run: no inner loop, steps pinned at safe values."""
    return solve(instance, config, iters, algo="dapd", **kwargs)
