"""Per-agent oracles, proximal kernels, step-size bounds, instance generators.

Each agent owns a composite objective ``phi_i + f_i`` (nonsmooth + smooth)
and, optionally, a smooth scalar-or-vector constraint map ``g_i`` whose
nonpositivity (more generally, cone membership of ``-g_i``) defines the
agent's private feasible set. The solver only touches agents through the
first-order oracles collected in :class:`NodeProblem`.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import NetworkGraph, build_small_world
from .kernels import project_nonneg_ball, soft_threshold_box

__all__ = [
    "NodeProblem",
    "ProblemInstance",
    "prox_l1_box",
    "project_cone_ball",
    "safe_step_size",
    "make_quadratic_node",
    "gen_qcqp",
    "gen_qp",
    "save_instance",
    "load_instance",
]


def prox_l1_box(v, weight, radius):
    """Prox of ``weight*||.||_1`` plus the indicator of ``[-radius, radius]^n``.

    Componentwise: soft threshold then clamp, the exact minimizer of
    ``weight*|w| + 0.5*(w - v_j)^2`` over the interval.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input to prox_l1_box")
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    if radius <= 0:
        raise ValueError("radius must be positive")
    return soft_threshold_box(np.atleast_1d(v), weight, radius)


def project_cone_ball(v, bound=np.inf):
    """Euclidean projection onto ``{theta >= 0} ∩ {||theta|| <= bound}``.

    Nonnegative clipping followed by radial scaling when the clipped norm
    exceeds the bound; ``bound=inf`` disables the ball.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input to project_cone_ball")
    if bound <= 0:
        raise ValueError("bound must be positive")
    return project_nonneg_ball(np.atleast_1d(v), bound)


def safe_step_size(
    lip_grad,
    lip_jac,
    jac_bound,
    dual_bound,
    delta,
    c_alpha,
    c_beta,
    c_varsigma,
    zeta,
):
    """Largest primal step size below which the backtracking test cannot fail.

    Minimum of two branches: the positive root of
    ``(lip_jac*dual_bound)^2/c_beta * t^2 + lip_grad * t = 1 - (delta + c)``
    (degenerating to ``(1 - (delta + c))/lip_grad`` when the quadratic
    coefficient vanishes), and ``sqrt(c_alpha*(1 - delta)/(2*zeta))/jac_bound``
    (infinite when ``jac_bound == 0``).
    """
    csum = c_alpha + c_beta + c_varsigma
    if min(delta, c_alpha, c_varsigma, zeta) <= 0 or c_beta < 0:
        raise ValueError("delta, c_alpha, c_varsigma, zeta must be positive")
    if delta + csum >= 1:
        raise ValueError("need delta + c_alpha + c_beta + c_varsigma < 1")
    if min(lip_grad, lip_jac, jac_bound) < 0:
        raise ValueError("smoothness constants must be nonnegative")
    slack = 1.0 - (delta + csum)
    curved = lip_jac > 0 and dual_bound > 0
    if curved and not np.isfinite(dual_bound):
        raise ValueError("finite dual bound required when the constraint Jacobian varies")
    if curved and c_beta == 0:
        raise ValueError("c_beta must be positive when lip_jac * dual_bound > 0")
    if curved:
        quad = (lip_jac * dual_bound) ** 2 / c_beta
        first = (-lip_grad + math.sqrt(lip_grad**2 + 4.0 * slack * quad)) / (2.0 * quad)
    elif lip_grad > 0:
        first = slack / lip_grad
    else:
        first = np.inf
    second = (
        math.sqrt(c_alpha * (1.0 - delta) / (2.0 * zeta)) / jac_bound
        if jac_bound > 0
        else np.inf
    )
    return min(first, second)


@dataclass
class NodeProblem:
    """First-order oracles and constants for one agent.

    ``f_value``/``f_grad`` evaluate the smooth term; ``g_value``/``g_jac``
    evaluate the constraint map and its Jacobian (``None`` when ``m == 0``);
    ``prox_phi(v, tau)`` is the proximal map of the nonsmooth term and must
    land in its domain; ``phi_value`` evaluates the nonsmooth term (``inf``
    outside its domain).
    """

    dim: int
    f_value: Callable
    f_grad: Callable
    prox_phi: Callable
    phi_value: Callable
    m: int = 0
    g_value: Optional[Callable] = None
    g_jac: Optional[Callable] = None
    dual_bound: float = np.inf
    domain_radius: float = np.inf
    lip_grad: Optional[float] = None
    lip_jac: Optional[float] = None
    jac_bound: Optional[float] = None
    # structure hints: set when phi is l1 + box, enabling aggregation
    l1_weight: Optional[float] = None
    box_radius: Optional[float] = None
    # optional vectorized oracles over (P, dim) batches
    f_value_batch: Optional[Callable] = None
    g_value_batch: Optional[Callable] = None

    def __post_init__(self):
        if self.m > 0 and (self.g_value is None or self.g_jac is None):
            raise ValueError("constrained node needs g_value and g_jac oracles")

    def g_jac_T_apply(self, x, theta):
        """``Jg(x)^T theta``."""
        return self.g_jac(x).T @ theta

    def g_jac_diff_T_apply(self, x, x_other, theta):
        """``(Jg(x) - Jg(x_other))^T theta``."""
        return (self.g_jac(x) - self.g_jac(x_other)).T @ theta

    def local_objective(self, x):
        """``phi_i(x) + f_i(x)``."""
        return float(self.phi_value(x)) + float(self.f_value(x))


@dataclass
class ProblemInstance:
    """A full multi-agent problem: agents, topology, start point, metadata."""

    nodes: list
    graph: NetworkGraph
    x0: np.ndarray
    phi_star: Optional[float] = None
    phi_star_method: str = ""
    phi_star_tol: Optional[float] = None
    generator_tag: str = "custom"
    family: str = "custom"
    data: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        dims = {node.dim for node in self.nodes}
        if len(dims) != 1:
            raise ValueError("all nodes must share the same dimension")
        if len(self.nodes) != self.graph.num_nodes:
            raise ValueError("one NodeProblem per graph node required")
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        if self.x0.shape != (len(self.nodes), self.dim):
            raise ValueError(f"x0 must have shape {(len(self.nodes), self.dim)}")
        for i, node in enumerate(self.nodes):
            if not np.isfinite(node.phi_value(self.x0[i])):
                raise ValueError(f"x0 of node {i} is outside dom phi")

    @property
    def dim(self):
        return self.nodes[0].dim

    @property
    def num_nodes(self):
        return len(self.nodes)

    def total_objective(self, x):
        """``sum_i [phi_i(x) + f_i(x)]`` at a single shared point."""
        return sum(node.local_objective(x) for node in self.nodes)


def make_quadratic_node(
    quad,
    lin=None,
    const=0.0,
    l1_weight=0.0,
    box_radius=np.inf,
    ellipsoid=None,
    dual_bound=np.inf,
    lip_grad=None,
    lip_jac=None,
    jac_bound=None,
):
    """Agent with ``f(x) = 0.5 x'Qx + q'x + c`` and l1-plus-box nonsmooth term.

    ``ellipsoid=(A, center, level)`` adds the scalar constraint
    ``g(x) = 0.5 (x-center)'A(x-center) - level <= 0``.
    """
    quad = np.asarray(quad, dtype=np.float64)
    dim = quad.shape[0]
    lin = np.zeros(dim) if lin is None else np.asarray(lin, dtype=np.float64)

    def f_value(x):
        return 0.5 * float(x @ quad @ x) + float(lin @ x) + const

    def f_grad(x):
        return quad @ x + lin

    def f_value_batch(X):
        return 0.5 * np.einsum("pi,ij,pj->p", X, quad, X) + X @ lin + const

    def phi_value(x):
        if np.any(np.abs(x) > box_radius * (1 + 1e-12)):
            return np.inf
        return l1_weight * float(np.abs(x).sum())

    def prox_phi(v, tau):
        return soft_threshold_box(v, tau * l1_weight, box_radius)

    kwargs = dict(
        dim=dim,
        f_value=f_value,
        f_grad=f_grad,
        prox_phi=prox_phi,
        phi_value=phi_value,
        l1_weight=l1_weight,
        box_radius=box_radius,
        f_value_batch=f_value_batch,
        dual_bound=dual_bound,
        domain_radius=box_radius * math.sqrt(dim) if np.isfinite(box_radius) else np.inf,
        lip_grad=lip_grad,
        lip_jac=lip_jac,
        jac_bound=jac_bound,
    )
    if ellipsoid is not None:
        shape, center, level = ellipsoid
        shape = np.asarray(shape, dtype=np.float64)
        center = np.asarray(center, dtype=np.float64)

        def g_value(x):
            d = x - center
            return np.array([0.5 * float(d @ shape @ d) - level])

        def g_jac(x):
            return (shape @ (x - center))[None, :]

        def g_value_batch(X):
            D = X - center
            return (0.5 * np.einsum("pi,ij,pj->p", D, shape, D) - level)[:, None]

        kwargs.update(m=1, g_value=g_value, g_jac=g_jac, g_value_batch=g_value_batch)
    return NodeProblem(**kwargs)


def _haar_orthonormal(rng, n):
    """Haar-like random orthonormal matrix: QR with sign-corrected diagonal."""
    mat = rng.standard_normal((n, n))
    q, r = np.linalg.qr(mat)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _spectral_matrix(rng, eigenvalues):
    basis = _haar_orthonormal(rng, len(eigenvalues))
    mat = (basis * eigenvalues) @ basis.T
    return 0.5 * (mat + mat.T)


def _build_qcqp(data, tag):
    num_nodes = int(data["num_nodes"])
    n = int(data["n"])
    box = 10.0
    graph = NetworkGraph(num_nodes, [tuple(e) for e in np.asarray(data["edges"])])
    nodes = [
        make_quadratic_node(
            data["quad"][i],
            l1_weight=1.0 / num_nodes,
            box_radius=box,
            ellipsoid=(data["shape"][i], data["center"][i], 1.0),
            dual_bound=float(data["dual_bound"]),
            lip_grad=5.0 * (i + 1),
            lip_jac=0.25,
            jac_bound=0.25
            * (box * math.sqrt(n) + float(np.linalg.norm(data["center"][i]))),
        )
        for i in range(num_nodes)
    ]
    return ProblemInstance(
        nodes=nodes,
        graph=graph,
        x0=np.tile(data["x0_row"], (num_nodes, 1)),
        generator_tag=tag,
        family="qcqp",
        data=data,
    )


def gen_qcqp(n, num_nodes, seed, num_edges=None, graph_seed=None):
    """Random l1-regularized QCQP consensus instance.

    Node ``i`` (1-based) gets ``f_i(x) = 0.5 x'Q_i x`` with spectrum
    ``{5i} ∪ U[1, 5i]^(n-4) ∪ {1, 0, 0}``, an ellipsoidal constraint
    ``0.5 (x - center_i)'A_i (x - center_i) <= 1`` with the spectrum of
    ``A_i`` in ``[1/16, 1/4]``, and ``phi_i = (1/N)||.||_1`` on the box
    ``[-10, 10]^n``. All nodes share the start point (uniform in the box).
    Dual-norm bounds are configured from a strictly feasible point near the
    constraint centers. Deterministic in ``seed``.
    """
    if n < 4:
        raise ValueError("qcqp generator needs n >= 4")
    max_edges = num_nodes * (num_nodes - 1) // 2
    if num_edges is None:
        num_edges = min(2 * num_nodes, max_edges)
    graph = build_small_world(num_nodes, num_edges, seed if graph_seed is None else graph_seed)
    rng = np.random.default_rng(seed)
    box = 10.0
    quads, shapes, centers = [], [], []
    for i in range(1, num_nodes + 1):
        top = 5.0 * i
        f_eigs = np.sort(np.concatenate(([top], rng.uniform(1.0, top, n - 4), [1.0, 0.0, 0.0])))[::-1]
        quads.append(_spectral_matrix(rng, f_eigs))
        g_eigs = np.sort(np.concatenate(([0.25], rng.uniform(1 / 16, 0.25, n - 2), [1 / 16])))[::-1]
        shapes.append(_spectral_matrix(rng, g_eigs))
        centers.append(2.0 + rng.uniform(-0.5 / math.sqrt(n), 0.5 / math.sqrt(n), n))
    x0_row = rng.uniform(-box, box, n)

    # dual bound from the strictly feasible point at the mean of the centers:
    # sum_i theta_i^* <= (sum_i varphi_i(x_sl)) / min_i(-g_i(x_sl)),
    # doubled to satisfy the 2*||theta_i^*|| <= B_i convention
    slater = np.mean(centers, axis=0)
    margin = min(
        1.0 - 0.5 * float((slater - c) @ a @ (slater - c))
        for a, c in zip(shapes, centers)
    )
    if margin <= 0:
        raise RuntimeError("generated instance lost strict feasibility")
    value_sl = float(np.abs(slater).sum()) + sum(
        0.5 * float(slater @ q @ slater) for q in quads
    )
    dual_bound = 2.0 * value_sl / margin

    tag = (
        f"qcqp(n={n},N={num_nodes},E={num_edges},seed={seed},"
        f"graph_seed={seed if graph_seed is None else graph_seed},"
        "x0=shared-uniform-box,B=2*slater-bound)"
    )
    data = {
        "family": "qcqp",
        "n": n,
        "num_nodes": num_nodes,
        "edges": np.array(graph.edges, dtype=np.int64),
        "quad": np.array(quads),
        "shape": np.array(shapes),
        "center": np.array(centers),
        "x0_row": x0_row,
        "dual_bound": dual_bound,
        "seed": seed,
        "graph_seed": seed if graph_seed is None else graph_seed,
    }
    return _build_qcqp(data, tag)


def _build_qp(data, tag):
    num_nodes = int(data["num_nodes"])
    graph = NetworkGraph(num_nodes, [tuple(e) for e in np.asarray(data["edges"])])
    nodes = [
        make_quadratic_node(
            data["quad"][i],
            lin=data["lin"][i],
            const=float(data["const"][i]),
            l1_weight=1.0 / num_nodes,
            box_radius=1e6,
            lip_grad=float(data["lip_grad"][i]),
            lip_jac=0.0,
            jac_bound=0.0,
        )
        for i in range(num_nodes)
    ]
    return ProblemInstance(
        nodes=nodes,
        graph=graph,
        x0=np.tile(data["x0_row"], (num_nodes, 1)),
        generator_tag=tag,
        family="qp",
        data=data,
    )


def gen_qp(n, num_nodes, seed, num_edges=None, graph_seed=None):
    """Random l1-regularized unconstrained QP consensus instance.

    Node smoothness levels are drawn from ``Normal(1000, 100)`` (redrawn on
    nonpositive outcomes), giving wide variation across nodes; ``Q_i`` has
    spectrum ``{L_i} ∪ U[0, min(100, L_i)]^(n-2) ∪ {0}``, linear terms are
    standard normal, constants uniform. The nonsmooth term is
    ``(1/N)||.||_1`` plus a large non-binding box (keeps the domain compact).
    The shared start point is uniform in ``[-10, 10]^n``.
    """
    if n < 2:
        raise ValueError("qp generator needs n >= 2")
    max_edges = num_nodes * (num_nodes - 1) // 2
    if num_edges is None:
        num_edges = min(2 * num_nodes, max_edges)
    graph = build_small_world(num_nodes, num_edges, seed if graph_seed is None else graph_seed)
    rng = np.random.default_rng(seed)
    quads, lins, consts, lips = [], [], [], []
    for _ in range(num_nodes):
        lip = rng.normal(1000.0, 100.0)
        while lip <= 0:
            lip = rng.normal(1000.0, 100.0)
        eigs = np.sort(np.concatenate(([lip], rng.uniform(0.0, min(100.0, lip), n - 2), [0.0])))[::-1]
        quads.append(_spectral_matrix(rng, eigs))
        lins.append(rng.standard_normal(n))
        consts.append(float(rng.uniform()))
        lips.append(float(lip))
    x0_row = rng.uniform(-10.0, 10.0, n)
    tag = (
        f"qp(n={n},N={num_nodes},E={num_edges},seed={seed},"
        f"graph_seed={seed if graph_seed is None else graph_seed},"
        "x0=shared-uniform-[-10,10],box=1e6)"
    )
    data = {
        "family": "qp",
        "n": n,
        "num_nodes": num_nodes,
        "edges": np.array(graph.edges, dtype=np.int64),
        "quad": np.array(quads),
        "lin": np.array(lins),
        "const": np.array(consts),
        "lip_grad": np.array(lips),
        "x0_row": x0_row,
        "seed": seed,
        "graph_seed": seed if graph_seed is None else graph_seed,
    }
    return _build_qp(data, tag)


def save_instance(instance, path):
    """Serialize a generated instance (arrays, seeds, cached optimum) to .npz."""
    if instance.data is None:
        raise ValueError("only generator-produced instances are serializable")
    payload = dict(instance.data)
    payload["generator_tag"] = instance.generator_tag
    payload["phi_star"] = np.nan if instance.phi_star is None else instance.phi_star
    payload["phi_star_method"] = instance.phi_star_method
    payload["phi_star_tol"] = (
        np.nan if instance.phi_star_tol is None else instance.phi_star_tol
    )
    np.savez_compressed(path, **payload)


def load_instance(path):
    """Rebuild an instance saved by :func:`save_instance` from its stored arrays."""
    with np.load(path, allow_pickle=False) as blob:
        data = {key: blob[key] for key in blob.files}
    family = str(data["family"])
    tag = str(data.pop("generator_tag"))
    phi_star = float(data.pop("phi_star"))
    phi_star_method = str(data.pop("phi_star_method"))
    phi_star_tol = float(data.pop("phi_star_tol"))
    if family == "qcqp":
        instance = _build_qcqp(data, tag)
    elif family == "qp":
        instance = _build_qp(data, tag)
    else:
        raise ValueError(f"unknown instance family {family!r}")
    if not math.isnan(phi_star):
        instance.phi_star = phi_star
        instance.phi_star_method = phi_star_method
        instance.phi_star_tol = None if math.isnan(phi_star_tol) else phi_star_tol
    return instance
