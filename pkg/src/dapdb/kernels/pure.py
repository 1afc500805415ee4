"""Pure NumPy implementations of the per-iteration kernels.

These are the reference semantics; the compiled twin in ``_core.pyx`` must
agree to floating-point roundoff (not necessarily bitwise, since summation
order may differ).
"""

import numpy as np

BACKEND = "pure"


def soft_threshold_box(v, weight, radius):
    """Exact prox of ``weight*||.||_1`` restricted to the box ``[-radius, radius]^n``.

    Componentwise soft threshold followed by clamping, which is the exact
    minimizer of ``weight*|w| + 0.5*(w - v)**2`` over ``[-radius, radius]``.
    """
    v = np.asarray(v, dtype=np.float64)
    shrunk = np.sign(v) * np.maximum(np.abs(v) - weight, 0.0)
    return np.clip(shrunk, -radius, radius)


def project_nonneg_ball(v, bound):
    """Euclidean projection onto ``{u >= 0} ∩ {||u|| <= bound}``.

    Nonnegative clipping followed by radial scaling; ``bound=inf`` disables
    the ball.
    """
    u = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    if np.isfinite(bound):
        norm = float(np.linalg.norm(u))
        if norm > bound:
            u = u * (bound / norm)
    return u


def laplacian_apply(indptr, indices, states):
    """Graph-Laplacian action on stacked node states.

    ``states`` is ``(N, n)``; row ``i`` of the result is
    ``deg_i * states[i] - sum_{j in N_i} states[j]`` with the neighborhood
    encoded in CSR form by ``indptr``/``indices``.
    """
    states = np.asarray(states, dtype=np.float64)
    indptr = np.asarray(indptr)
    indices = np.asarray(indices)
    deg = np.diff(indptr)
    out = deg[:, None].astype(np.float64) * states
    if len(indices):
        rows = np.repeat(np.arange(len(deg)), deg)
        acc = np.zeros_like(out)
        np.add.at(acc, rows, states[indices])
        out -= acc
    return out
