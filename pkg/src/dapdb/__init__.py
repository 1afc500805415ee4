"""Decentralized accelerated primal-dual optimization with local backtracking.

A library plus CLI for constrained composite convex consensus optimization
over undirected agent networks: agents hold private smooth objectives,
nonsmooth regularizers, and conic constraints, communicate n-vectors with
neighbors once per iteration, and synchronize step-size contraction through
a single max-consensus flood.
"""

from .graph import (
    CommLedger,
    NetworkGraph,
    build_small_world,
    incidence_apply,
    max_consensus,
    neighbor_diff,
)
from .kernels import BACKEND as kernel_backend
from .metrics import (
    RunTrace,
    csv_export,
    csv_import,
    lambda_reconstruction,
    log_rel_suboptimality,
    rel_consensus_error,
    rel_infeasibility,
)
from .problem import (
    NodeProblem,
    ProblemInstance,
    gen_qcqp,
    gen_qp,
    load_instance,
    make_quadratic_node,
    project_cone_ball,
    prox_l1_box,
    safe_step_size,
    save_instance,
)
from .solver import (
    AgentState,
    AlgorithmConfig,
    BacktrackOverflow,
    DivergenceError,
    IterationReport,
    SolverError,
    backtrack_node,
    backtracking_test_value,
    consensus_step_size,
    dapd_run,
    dapdb0_iterate,
    dapdb_iterate,
    ergodic_average,
    init_agent_states,
    reference_steps,
    solve,
    t_weights,
)

__version__ = "0.1.0"
