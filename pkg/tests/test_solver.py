"""Algorithm state machines: local search, consensus coordination, runs."""

import math

import numpy as np
import pytest

from dapdb import (
    AlgorithmConfig,
    BacktrackOverflow,
    NetworkGraph,
    ProblemInstance,
    backtrack_node,
    backtracking_test_value,
    consensus_step_size,
    dapd_run,
    dapdb0_iterate,
    dapdb_iterate,
    ergodic_average,
    gen_qcqp,
    gen_qp,
    make_quadratic_node,
    reference_steps,
    solve,
    t_weights,
)
from dapdb.metrics import lambda_reconstruction
from dapdb.solver import prepare_run


def single_node_instance(node, x0):
    return ProblemInstance(
        nodes=[node], graph=NetworkGraph(1, []), x0=np.asarray(x0, dtype=float)[None, :]
    )


def isotropic_instance(lip, dim=3, num_nodes=3, box=50.0, x0_scale=5.0):
    """All nodes share f = 0.5*lip*||x||^2: curvature is worst-case everywhere."""
    nodes = [
        make_quadratic_node(lip * np.eye(dim), box_radius=box, lip_grad=lip)
        for _ in range(num_nodes)
    ]
    graph = NetworkGraph(num_nodes, [(i, i + 1) for i in range(num_nodes - 1)])
    rng = np.random.default_rng(0)
    x0 = np.tile(rng.uniform(-x0_scale, x0_scale, dim), (num_nodes, 1))
    return ProblemInstance(nodes=nodes, graph=graph, x0=x0)


class TestBacktrackingTestValue:
    def test_zero_at_no_move(self):
        inst = gen_qcqp(6, 3, 0)
        node = inst.nodes[0]
        x = inst.x0[0]
        theta = np.array([0.3])
        cfg = AlgorithmConfig()
        val = backtracking_test_value(node, x, theta, x.copy(), theta.copy(), 0.05, cfg)
        assert val == 0.0

    def test_scalar_quadratic_hand_value(self):
        # unconstrained scalar f(w) = w^2/2, move from 0 to 1: E = 1 - 0.7/tau
        node = make_quadratic_node(np.eye(1), box_radius=np.inf)
        cfg = AlgorithmConfig(c_alpha=0.1, c_beta=0.1, c_varsigma=0.1)
        for tau in (0.1, 0.5, 2.0):
            val = backtracking_test_value(
                node, np.zeros(1), np.zeros(0), np.ones(1), np.zeros(0), tau, cfg
            )
            assert np.isclose(val, 1.0 - 0.7 / tau)

    def test_certificate_below_safe_step(self):
        # candidates produced by the actual prox/projection steps must pass
        inst = gen_qcqp(6, 4, 2)
        cfg = AlgorithmConfig(kappa=1.0)
        steps = reference_steps(inst, cfg)
        rng = np.random.default_rng(5)
        from dapdb import project_cone_ball

        for i, node in enumerate(inst.nodes):
            for _ in range(25):
                x = node.prox_phi(rng.uniform(-12, 12, 6), 1.0)
                theta = project_cone_ball(rng.normal(scale=2.0, size=1), node.dual_bound)
                tau = float(steps[i] * rng.uniform(0.05, 1.0))
                p = rng.normal(size=6)
                x_cand = node.prox_phi(x - tau * (node.f_grad(x) + p), tau)
                theta_cand = project_cone_ball(
                    theta + tau * node.g_value(x_cand), node.dual_bound
                )
                value = backtracking_test_value(node, x, theta, x_cand, theta_cand, tau, cfg)
                threshold = -0.1 / tau * float((x_cand - x) @ (x_cand - x))
                threshold -= 0.1 / tau * float((theta_cand - theta) @ (theta_cand - theta))
                assert value <= threshold + 1e-12

    def test_constrained_needs_positive_c_beta(self):
        inst = gen_qcqp(6, 3, 0)
        cfg = AlgorithmConfig(c_beta=0.0, c_varsigma=0.2)
        with pytest.raises(ValueError, match="c_beta"):
            backtracking_test_value(
                inst.nodes[0],
                inst.x0[0],
                np.zeros(1),
                inst.x0[0] + 0.1,
                np.zeros(1),
                0.1,
                cfg,
            )


class TestBacktrackNode:
    def test_no_contraction_at_safe_step(self):
        inst = gen_qcqp(6, 3, 1)
        cfg = AlgorithmConfig(kappa=1.0)
        _, states, _, _, zeta, safe = prepare_run(inst, cfg)
        for i, (node, state) in enumerate(zip(inst.nodes, states)):
            tau, eta, x_t, th_t, contractions = backtrack_node(
                node, state, cfg, zeta[i], safe[i]
            )
            assert contractions == 0
            assert eta == 1.0
            assert tau == state.tau

    def test_accepted_pair_passes_on_reevaluation(self):
        inst = gen_qcqp(6, 3, 4)
        cfg = AlgorithmConfig(kappa=25.0)
        cfg_r, states, _, _, zeta, safe = prepare_run(inst, cfg)
        for i, (node, state) in enumerate(zip(inst.nodes, states)):
            tau, eta, x_t, th_t, _ = backtrack_node(node, state, cfg_r, zeta[i], safe[i])
            value = backtracking_test_value(
                node, state.x, state.theta, x_t, th_t, tau, cfg_r, zeta=zeta[i]
            )
            threshold = -cfg_r.delta / tau * float(np.sum((x_t - state.x) ** 2))
            threshold -= (
                cfg_r.delta / (zeta[i] * tau) * float(np.sum((th_t - state.theta) ** 2))
            )
            assert value <= threshold + 1e-12

    def test_degenerate_node_accepts_immediately(self):
        node = make_quadratic_node(np.zeros((2, 2)), box_radius=np.inf, lip_grad=0.0)
        inst = single_node_instance(node, np.array([1.0, -2.0]))
        cfg = AlgorithmConfig(tau_bar=0.7)
        _, states, _, _, zeta, _ = prepare_run(inst, cfg)
        states[0].r = np.array([0.4, 0.1])
        states[0].r_prev = states[0].r.copy()
        tau, eta, x_t, _, contractions = backtrack_node(node, states[0], cfg, zeta[0])
        assert contractions == 0 and eta == 1.0
        assert np.allclose(x_t, states[0].x - tau * states[0].r)

    def test_exact_worst_case_contraction_count(self):
        # isotropic curvature makes the acceptance threshold exactly
        # (1 - delta - c)/lip; starting 20x above it forces ceil(log) shrinks
        lip = 4.0
        inst = isotropic_instance(lip, num_nodes=1)
        cfg = AlgorithmConfig(kappa=20.0, rho=0.9)
        cfg_r, states, _, _, zeta, safe = prepare_run(inst, cfg)
        tau, eta, *_ , contractions = backtrack_node(
            inst.nodes[0], states[0], cfg_r, zeta[0], safe[0]
        )
        expected = math.ceil(math.log(20.0) / math.log(1 / 0.9))
        assert contractions == expected == 29
        assert tau <= safe[0] * (1 + 1e-12)
        assert tau > 0.9 * safe[0] * (1 - 1e-12)

    def test_overflow_guard_raises(self):
        node = make_quadratic_node(np.eye(1), box_radius=np.inf, lip_grad=1.0)
        node.f_value = lambda x: float("inf")  # broken oracle: test never passes
        inst = single_node_instance(
            make_quadratic_node(np.eye(1), box_radius=np.inf, lip_grad=1.0),
            np.array([1.0]),
        )
        cfg = AlgorithmConfig(tau_bar=1.0)
        _, states, _, _, zeta, _ = prepare_run(inst, cfg)
        with pytest.raises(BacktrackOverflow):
            backtrack_node(node, states[0], cfg, zeta[0], tau_hat=0.5)


class TestConsensusStepSize:
    def test_hand_value(self):
        cfg = AlgorithmConfig(c_alpha=0.1, c_varsigma=0.1, c_gamma=1 / 48)
        got = consensus_step_size(1.0, 1.0, cfg)
        assert np.isclose(got, 1.0 / 1440.0)

    def test_monotone_in_momentum(self):
        cfg = AlgorithmConfig(c_alpha=0.1, c_varsigma=0.1, c_gamma=1 / 48)
        values = [consensus_step_size(eta, 1.0, cfg) for eta in (1, 2, 5, 50, 5000)]
        assert all(a > b > 0 for a, b in zip(values, values[1:]))

    def test_ratio_bounded_by_next_momentum(self):
        cfg = AlgorithmConfig(c_alpha=0.17, c_varsigma=0.22, c_gamma=1 / 30)
        rng = np.random.default_rng(0)
        etas = 1.0 + rng.exponential(1.0, size=200)
        for eta_k, eta_next in zip(etas, etas[1:]):
            ratio = consensus_step_size(eta_k, 2.0, cfg) / consensus_step_size(
                eta_next, 2.0, cfg
            )
            assert ratio <= eta_next + 1e-12


class TestIterate:
    def test_single_node_gradient_descent_converges(self):
        node = make_quadratic_node(np.eye(2), box_radius=np.inf, lip_grad=1.0)
        inst = single_node_instance(node, np.array([4.0, -3.0]))
        trace = solve(inst, AlgorithmConfig(kappa=1.0), 300, algo="dapdb")
        assert float(np.linalg.norm(trace.final_x)) < 1e-8

    def test_adopts_candidate_bitwise_when_no_contraction(self):
        inst = gen_qcqp(6, 4, 3)
        cfg = AlgorithmConfig(kappa=1.0)
        cfg_r, states, ledger, tau_bar_max, zeta, safe = prepare_run(inst, cfg)
        import copy

        probe = copy.deepcopy(states[2])
        _, eta, x_t, th_t, _ = backtrack_node(inst.nodes[2], probe, cfg_r, zeta[2], safe[2])
        assert eta == 1.0
        report = dapdb_iterate(
            inst, states, cfg_r, ledger, tau_bar_max, zeta=zeta, safe_steps=safe
        )
        assert report.eta_k == 1.0
        assert not report.did_contract
        assert np.array_equal(states[2].x, x_t)
        assert np.array_equal(states[2].theta, th_t)

    def test_step_ratio_synchronized_across_nodes(self):
        inst = isotropic_instance(3.0, num_nodes=4)
        cfg = AlgorithmConfig(kappa=20.0)
        trace = solve(inst, cfg, 40, algo="dapdb", check_invariants=True)
        assert trace.total_backtracks > 0  # the synchrony check ran on real contractions

    def test_communication_accounting(self):
        inst = gen_qcqp(6, 4, 3)
        iters = 25
        trace = solve(inst, AlgorithmConfig(kappa=1.0), iters)
        assert trace.ledger.neighbor_rounds == iters
        assert trace.ledger.flood_rounds == iters + 1  # one startup flood
        assert trace.ledger.vectors_sent == iters * int(inst.graph.degrees.sum())

    def test_dual_feasibility_every_iteration(self):
        inst = gen_qcqp(6, 4, 8)
        bound = inst.nodes[0].dual_bound

        def check(k, states, report):
            for state in states:
                assert np.all(state.theta >= 0)
                assert np.linalg.norm(state.theta) <= bound * (1 + 1e-12)

        solve(inst, AlgorithmConfig(kappa=20.0), 50, callback=check)

    def test_eta_reported_only_above_one_when_contracting(self):
        inst = isotropic_instance(5.0, num_nodes=3)
        etas = []
        solve(
            inst,
            AlgorithmConfig(kappa=10.0),
            30,
            callback=lambda k, s, r: etas.append((r.eta_k, r.did_contract)),
        )
        for eta, contracted in etas:
            assert eta >= 1.0
            assert contracted == (eta > 1.0)

    def test_lambda_reconstruction_identity(self):
        # the consensus dual implied by the running state obeys its recursion
        inst = gen_qcqp(5, 4, 6)
        cfg = AlgorithmConfig(kappa=20.0)
        s_hist, x_hist, reports = [np.zeros((4, 5))], [inst.x0.copy()], []

        def record(k, states, report):
            s_hist.append(np.array([s.s for s in states]))
            x_hist.append(np.array([s.x for s in states]))
            reports.append(report)

        solve(inst, cfg, 100, callback=record)
        for k, report in enumerate(reports):
            lam_now = lambda_reconstruction(inst.graph, s_hist[k])
            lam_next = lambda_reconstruction(inst.graph, s_hist[k + 1])
            x_k = x_hist[k]
            x_prev = x_hist[k - 1] if k else x_hist[0]
            expected = report.gamma_k * (
                (1 + report.eta_k) * x_k - report.eta_k * x_prev
            )
            drift = lam_next - lam_now - lambda_reconstruction(inst.graph, expected)
            assert float(np.abs(drift).max()) <= 1e-10


class TestDapdb0:
    def test_rejects_constrained_instances(self):
        inst = gen_qcqp(6, 3, 0)
        cfg = AlgorithmConfig(c_alpha=0.4, c_beta=0.0, c_varsigma=0.4)
        with pytest.raises(ValueError, match="unconstrained"):
            solve(inst, cfg, 5, algo="dapdb0")

    def test_requires_zero_c_beta(self):
        inst = gen_qp(4, 3, 0)
        with pytest.raises(ValueError, match="c_beta"):
            solve(inst, AlgorithmConfig(c_alpha=0.4, c_beta=0.1, c_varsigma=0.4), 5, algo="dapdb0")

    def test_scalar_acceptance_threshold(self):
        # f = L x^2 / 2: accepts exactly when tau <= (1-delta-c_a-c_s)/L = 0.1/L
        lip = 8.0
        node = make_quadratic_node(lip * np.eye(1), box_radius=50.0, lip_grad=lip)
        inst = single_node_instance(node, np.array([4.0]))
        inst.family = "custom"
        base = dict(c_alpha=0.4, c_beta=0.0, c_varsigma=0.4, delta=0.1)
        below = AlgorithmConfig(tau_bar=(0.1 / lip) * 0.999, **base)
        cfg_r, states, ledger, tb, zeta, safe = prepare_run(inst, below, "dapdb0")
        dapdb0_iterate(inst, states, cfg_r, ledger, tb, zeta=zeta)
        assert states[0].total_backtracks == 0
        above = AlgorithmConfig(tau_bar=(0.1 / lip) * 1.4, **base)
        cfg_r, states, ledger, tb, zeta, safe = prepare_run(inst, above, "dapdb0")
        dapdb0_iterate(inst, states, cfg_r, ledger, tb, zeta=zeta)
        assert states[0].total_backtracks >= 1

    def test_affine_objective_immediate_accept(self):
        node = make_quadratic_node(
            np.zeros((2, 2)), lin=np.array([1.0, -2.0]), box_radius=30.0, lip_grad=0.0
        )
        graph = NetworkGraph(2, [(0, 1)])
        inst = ProblemInstance(
            nodes=[node, node], graph=graph, x0=np.ones((2, 2))
        )
        cfg = AlgorithmConfig(c_alpha=0.4, c_beta=0.0, c_varsigma=0.4, tau_bar=500.0)
        trace = solve(inst, cfg, 10, algo="dapdb0")
        assert trace.total_backtracks == 0

    def test_qp_family_contracts_then_stabilizes(self):
        inst = gen_qp(5, 4, 3)
        cfg = AlgorithmConfig(c_alpha=0.4, c_beta=0.0, c_varsigma=0.4, kappa=5.0)
        trace = solve(inst, cfg, 120, algo="dapdb0")
        etas = trace["eta_k"]
        assert trace.total_backtracks > 0
        assert np.all(etas[1:][etas[1:] > 1.0].size <= 17)  # |I| bound for kappa=5
        # once contraction stops it never resumes
        last = int(np.max(np.nonzero(etas > 1.0)[0]))
        assert np.all(etas[last + 1 :] == 1.0)


class TestDapd:
    def test_constant_gamma_and_zero_backtracks(self):
        inst = gen_qcqp(6, 4, 5)
        trace = dapd_run(inst, AlgorithmConfig(), 40)
        assert trace.total_backtracks == 0
        gammas = trace["gamma_k"]
        assert np.all(gammas == gammas[0])
        assert np.all(trace["eta_k"] == 1.0)

    def test_matches_adaptive_run_bitwise_at_safe_steps(self):
        inst = gen_qcqp(6, 4, 9)
        xs_a, xs_b = [], []
        trace_a = solve(
            inst,
            AlgorithmConfig(kappa=1.0),
            60,
            algo="dapdb",
            callback=lambda k, s, r: xs_a.append(np.array([st.x for st in s])),
        )
        trace_b = solve(
            inst,
            AlgorithmConfig(),
            60,
            algo="dapd",
            callback=lambda k, s, r: xs_b.append(np.array([st.x for st in s])),
        )
        assert trace_a.total_backtracks == 0
        for a, b in zip(xs_a, xs_b):
            assert np.array_equal(a, b)
        assert np.array_equal(trace_a.final_x, trace_b.final_x)
        for ta, tb in zip(trace_a.final_theta, trace_b.final_theta):
            assert np.array_equal(ta, tb)


class TestWeightsAndAverages:
    def test_all_ones(self):
        assert t_weights([1.0, 1.0, 1.0]).tolist() == [1.0, 1.0, 1.0]

    def test_single_halving(self):
        assert t_weights([3.0, 2.0, 1.0, 1.0]).tolist() == [1.0, 0.5, 0.5, 0.5]

    def test_rejects_below_one(self):
        with pytest.raises(ValueError):
            t_weights([1.0, 0.5])

    def test_floor_on_isotropic_run(self):
        # t_k stays above rho * min_i(safe/initial) on a real contracting run
        inst = isotropic_instance(2.0, num_nodes=3)
        cfg = AlgorithmConfig(kappa=20.0)
        trace = solve(inst, cfg, 50)
        cfg_r = AlgorithmConfig(kappa=20.0)
        safe = reference_steps(inst, cfg_r)
        floor = 0.9 * float(np.min(safe / (20.0 * safe)))
        assert np.all(trace["t_k"] >= floor - 1e-12)

    def test_ergodic_average_cases(self):
        assert ergodic_average([np.array([5.0])] * 4, [1, 1, 1, 1], 4)[0] == 5.0
        assert ergodic_average([np.array([0.0]), np.array([2.0])], [1, 1], 2)[0] == 1.0
        got = ergodic_average(
            [np.array([0.0]), np.array([2.0]), np.array([4.0])], [1.0, 0.5, 0.5], 3
        )
        assert np.isclose(got[0], 1.5)

    def test_ergodic_average_errors(self):
        with pytest.raises(ValueError):
            ergodic_average([], [1.0], 1)
