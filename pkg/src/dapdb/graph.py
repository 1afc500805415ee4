"""Communication topology and the two simulated network primitives.

The network is a static, connected, undirected graph. Algorithms interact
with it only through :func:`neighbor_diff` (synchronous exchange of
n-dimensional vectors with immediate neighbors) and :func:`max_consensus`
(a network-wide flood that makes the max of node-local scalars available to
every node). Both primitives charge a :class:`CommLedger` so runs can report
communication cost.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import laplacian_apply

__all__ = [
    "CommLedger",
    "NetworkGraph",
    "build_small_world",
    "neighbor_diff",
    "incidence_apply",
    "max_consensus",
]


@dataclass
class CommLedger:
    """Monotone counters for simulated communication.

    neighbor_rounds
        Synchronous rounds in which every node exchanged one n-vector with
        each of its neighbors.
    flood_rounds
        Network-wide max-consensus floodings.
    vectors_sent
        Total n-dimensional payloads sent over edges (both directions).
    """

    neighbor_rounds: int = 0
    flood_rounds: int = 0
    vectors_sent: int = 0


class NetworkGraph:
    """Undirected connected graph with canonical ``(i, j), i < j`` edges.

    Attributes
    ----------
    num_nodes : int
    edges : list[tuple[int, int]]
        Sorted lexicographically; every pair satisfies ``i < j``.
    neighbors : list[np.ndarray]
        Sorted neighbor indices per node.
    degrees : np.ndarray
    d_max : int
    """

    def __init__(self, num_nodes, edges):
        if num_nodes < 1:
            raise ValueError("graph needs at least one node")
        canon = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < num_nodes and 0 <= j < num_nodes):
                raise ValueError(f"edge ({i},{j}) out of range for {num_nodes} nodes")
            if i > j:
                i, j = j, i
            if (i, j) in canon:
                raise ValueError(f"duplicate edge ({i},{j})")
            canon.add((i, j))
        self.num_nodes = num_nodes
        self.edges = sorted(canon)
        nbrs = [[] for _ in range(num_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.neighbors = [np.array(sorted(b), dtype=np.int64) for b in nbrs]
        self.degrees = np.array([len(b) for b in self.neighbors], dtype=np.int64)
        self.d_max = int(self.degrees.max()) if num_nodes else 0
        # CSR adjacency for the Laplacian kernel
        self._indptr = np.concatenate(([0], np.cumsum(self.degrees)))
        self._indices = (
            np.concatenate(self.neighbors)
            if self.edges
            else np.empty(0, dtype=np.int64)
        )
        if not self._connected():
            raise ValueError("graph is not connected")

    def _connected(self):
        seen = np.zeros(self.num_nodes, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in self.neighbors[i]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return bool(seen.all())

    @property
    def num_edges(self):
        return len(self.edges)

    def laplacian_matrix(self):
        """Dense graph Laplacian (diagnostics only)."""
        lap = np.diag(self.degrees.astype(np.float64))
        for i, j in self.edges:
            lap[i, j] = lap[j, i] = -1.0
        return lap

    def to_text(self):
        """Edge-list format: first line ``N E``, then one ``i j`` line per edge."""
        lines = [f"{self.num_nodes} {self.num_edges}"]
        lines += [f"{i} {j}" for i, j in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or len(rows[0]) != 2:
            raise ValueError("expected header line 'N E'")
        n, e = int(rows[0][0]), int(rows[0][1])
        if len(rows) - 1 != e:
            raise ValueError(f"header declares {e} edges, found {len(rows) - 1}")
        return cls(n, [(int(a), int(b)) for a, b in rows[1:]])

    def __eq__(self, other):
        return (
            isinstance(other, NetworkGraph)
            and self.num_nodes == other.num_nodes
            and self.edges == other.edges
        )

    def __repr__(self):
        return f"NetworkGraph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def build_small_world(num_nodes, num_edges, seed):
    """Random small-world topology: a random Hamiltonian cycle plus chords.

    A uniform random permutation of the nodes is connected consecutively
    (with the wrap edge), then the remaining ``num_edges - num_nodes`` edges
    are drawn uniformly without replacement from the non-edges. Deterministic
    for a fixed seed.
    """
    if num_nodes < 3:
        raise ValueError("need at least 3 nodes for a cycle")
    max_edges = num_nodes * (num_nodes - 1) // 2
    if not (num_nodes <= num_edges <= max_edges):
        raise ValueError(
            f"num_edges must be in [{num_nodes}, {max_edges}], got {num_edges}"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(num_nodes)
    cycle = set()
    for k in range(num_nodes):
        i, j = int(perm[k]), int(perm[(k + 1) % num_nodes])
        cycle.add((min(i, j), max(i, j)))
    candidates = [
        (i, j)
        for i in range(num_nodes)
        for j in range(i + 1, num_nodes)
        if (i, j) not in cycle
    ]
    extra = num_edges - len(cycle)
    chosen = rng.choice(len(candidates), size=extra, replace=False) if extra else []
    edges = sorted(cycle) + [candidates[k] for k in np.sort(chosen)]
    return NetworkGraph(num_nodes, edges)


def _stack_states(graph, states):
    arr = np.asarray(states, dtype=np.float64)
    if arr.shape[0] != graph.num_nodes:
        raise ValueError(
            f"expected one state per node ({graph.num_nodes}), got {arr.shape[0]}"
        )
    return arr.reshape(graph.num_nodes, -1), arr.ndim == 1


def neighbor_diff(graph, states, ledger=None):
    """One neighbor-exchange round: Laplacian action on the node states.

    Returns per node ``d_i * s_i - sum_{j in N_i} s_j``. Charges one
    neighbor round and ``sum_i d_i`` vector payloads to the ledger.
    """
    arr, was_1d = _stack_states(graph, states)
    out = laplacian_apply(graph._indptr, graph._indices, arr)
    if ledger is not None:
        ledger.neighbor_rounds += 1
        ledger.vectors_sent += int(graph.degrees.sum())
    return out[:, 0] if was_1d else out


def incidence_apply(graph, states):
    """Per-edge differences ``x_i - x_j`` for edges ``(i, j), i < j``.

    Diagnostic operator (stacks the oriented incidence action); charges no
    communication.
    """
    arr, was_1d = _stack_states(graph, states)
    if not graph.edges:
        out = np.empty((0, arr.shape[1]))
        return out[:, 0] if was_1d else out
    heads = np.array([e[0] for e in graph.edges])
    tails = np.array([e[1] for e in graph.edges])
    out = arr[heads] - arr[tails]
    return out[:, 0] if was_1d else out


def max_consensus(graph, values, ledger=None):
    """Network-wide max of node-local scalars via one flooding round."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("max_consensus of empty value list")
    if vals.size != graph.num_nodes:
        raise ValueError(f"expected {graph.num_nodes} scalars, got {vals.size}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite value in max_consensus")
    if ledger is not None:
        ledger.flood_rounds += 1
    return float(vals.max())
