"""Topology construction and the simulated communication primitives."""

import numpy as np
import pytest

from dapdb import (
    CommLedger,
    NetworkGraph,
    build_small_world,
    incidence_apply,
    max_consensus,
    neighbor_diff,
)

TRIANGLE = NetworkGraph(3, [(0, 1), (0, 2), (1, 2)])
PATH2 = NetworkGraph(2, [(0, 1)])


class TestNetworkGraph:
    def test_edges_canonicalized_and_sorted(self):
        g = NetworkGraph(4, [(2, 0), (1, 0), (3, 2), (2, 1)])
        assert g.edges == [(0, 1), (0, 2), (1, 2), (2, 3)]
        assert g.degrees.tolist() == [2, 2, 3, 1]
        assert g.d_max == 3

    def test_degree_sum_is_twice_edges(self):
        g = build_small_world(12, 24, 5)
        assert int(g.degrees.sum()) == 2 * g.num_edges

    def test_neighbor_symmetry(self):
        g = build_small_world(9, 14, 1)
        for i in range(g.num_nodes):
            for j in g.neighbors[i]:
                assert i in g.neighbors[j]

    def test_rejects_disconnected(self):
        with pytest.raises(ValueError, match="connected"):
            NetworkGraph(4, [(0, 1), (2, 3)])

    def test_rejects_self_loop_and_duplicate(self):
        with pytest.raises(ValueError, match="self-loop"):
            NetworkGraph(3, [(1, 1), (0, 1), (0, 2)])
        with pytest.raises(ValueError, match="duplicate"):
            NetworkGraph(3, [(0, 1), (1, 0), (0, 2), (1, 2)])

    def test_text_round_trip(self):
        g = build_small_world(7, 12, 3)
        again = NetworkGraph.from_text(g.to_text())
        assert again == g
        assert again.to_text() == g.to_text()

    def test_from_text_validates_header(self):
        with pytest.raises(ValueError, match="header"):
            NetworkGraph.from_text("3 5\n0 1\n1 2\n")


class TestBuildSmallWorld:
    def test_paper_scale_graph(self):
        g = build_small_world(12, 24, seed=0)
        assert g.num_nodes == 12
        assert g.num_edges == 24

    def test_triangle_is_forced(self):
        g = build_small_world(3, 3, seed=0)
        assert g.edges == [(0, 1), (0, 2), (1, 2)]

    def test_complete_graph_forced(self):
        g = build_small_world(4, 6, seed=7)
        assert g.num_edges == 6
        assert g.degrees.tolist() == [3, 3, 3, 3]

    def test_seed_determinism(self):
        a = build_small_world(10, 21, seed=42)
        b = build_small_world(10, 21, seed=42)
        assert a.edges == b.edges
        c = build_small_world(10, 21, seed=43)
        assert a.edges != c.edges  # overwhelmingly likely

    def test_contains_hamiltonian_cycle_degrees(self):
        # every node sits on the cycle, so min degree >= 2
        for seed in range(5):
            g = build_small_world(8, 12, seed)
            assert int(g.degrees.min()) >= 2

    def test_edge_count_bounds(self):
        with pytest.raises(ValueError):
            build_small_world(5, 4, 0)
        with pytest.raises(ValueError):
            build_small_world(5, 11, 0)
        with pytest.raises(ValueError):
            build_small_world(2, 2, 0)


class TestNeighborDiff:
    def test_consensus_nullspace_exact(self):
        v = np.array([1.7, -2.3, 0.4])
        states = np.tile(v, (3, 1))
        out = neighbor_diff(TRIANGLE, states)
        assert np.all(out == 0.0)

    def test_two_node_path_scalars(self):
        out = neighbor_diff(PATH2, np.array([1.0, 0.0]))
        assert out.tolist() == [1.0, -1.0]

    def test_triangle_hand_values(self):
        out = neighbor_diff(TRIANGLE, np.array([1.0, 2.0, 4.0]))
        assert out.tolist() == [-4.0, -1.0, 5.0]
        assert out.sum() == 0.0

    def test_ledger_charges(self):
        led = CommLedger()
        neighbor_diff(TRIANGLE, np.zeros((3, 2)), led)
        neighbor_diff(TRIANGLE, np.zeros((3, 2)), led)
        assert led.neighbor_rounds == 2
        assert led.vectors_sent == 2 * 6

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="per node"):
            neighbor_diff(TRIANGLE, np.zeros((4, 2)))

    def test_matches_dense_laplacian(self):
        rng = np.random.default_rng(0)
        g = build_small_world(9, 16, 2)
        states = rng.normal(size=(9, 5))
        expected = g.laplacian_matrix() @ states
        assert np.allclose(neighbor_diff(g, states), expected, atol=1e-12)


class TestIncidenceApply:
    def test_consensus_gives_zero_edges(self):
        states = np.tile(np.array([3.0, -1.0]), (3, 1))
        assert np.all(incidence_apply(TRIANGLE, states) == 0.0)

    def test_path_difference(self):
        assert incidence_apply(PATH2, np.array([3.0, 1.0])).tolist() == [2.0]

    def test_triangle_hand_values_and_energy(self):
        x = np.array([1.0, 2.0, 4.0])
        out = incidence_apply(TRIANGLE, x)
        assert out.tolist() == [-1.0, -3.0, -2.0]
        # edge energy equals the Laplacian quadratic form: here 14
        assert np.isclose(np.sum(out**2), 14.0)

    def test_ledger_not_charged(self):
        led = CommLedger()
        incidence_apply(TRIANGLE, np.zeros((3, 2)))
        assert led.neighbor_rounds == 0 and led.vectors_sent == 0


class TestLaplacianIdentity:
    def test_edge_energy_matches_quadratic_form(self):
        rng = np.random.default_rng(7)
        g = build_small_world(10, 20, 11)
        for _ in range(100):
            x = rng.normal(scale=3.0, size=(10, 4))
            edge_energy = float(np.sum(incidence_apply(g, x) ** 2))
            quad = float(np.sum(x * neighbor_diff(g, x)))
            assert abs(edge_energy - quad) <= 1e-10 * max(1.0, abs(quad))


class TestMaxConsensus:
    def test_values(self):
        assert max_consensus(TRIANGLE, [1.0, 1.0, 1.0]) == 1.0
        assert max_consensus(TRIANGLE, [1.0, 2.5, 0.3]) == 2.5
        assert max_consensus(NetworkGraph(1, []), [7.0]) == 7.0

    def test_flood_counted(self):
        led = CommLedger()
        max_consensus(TRIANGLE, [0.0, 1.0, 2.0], led)
        assert led.flood_rounds == 1

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            max_consensus(TRIANGLE, [])
        with pytest.raises(ValueError, match="finite"):
            max_consensus(TRIANGLE, [1.0, np.nan, 0.0])
        with pytest.raises(ValueError):
            max_consensus(TRIANGLE, [1.0, 2.0])
