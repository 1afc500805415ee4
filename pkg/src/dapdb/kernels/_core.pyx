# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: soft-threshold/box prox, cone-ball projection, Laplacian.

Semantics match ``dapdb.kernels.pure`` (the NumPy fallback).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, isfinite, sqrt

cnp.import_array()

BACKEND = "compiled"


def soft_threshold_box(v, double weight, double radius):
    """Prox of ``weight*||.||_1`` plus indicator of ``[-radius, radius]^n``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(arr)
    cdef Py_ssize_t i, n = arr.shape[0]
    cdef double x, mag
    for i in range(n):
        x = arr[i]
        mag = fabs(x) - weight
        if mag < 0.0:
            mag = 0.0
        if mag > radius:
            mag = radius
        out[i] = mag if x > 0.0 else -mag
    return out


def project_nonneg_ball(v, double bound):
    """Projection onto the nonnegative orthant intersected with a norm ball."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(arr)
    cdef Py_ssize_t i, n = arr.shape[0]
    cdef double x, sq = 0.0, norm, scale
    for i in range(n):
        x = arr[i]
        if x < 0.0:
            x = 0.0
        out[i] = x
        sq += x * x
    if isfinite(bound):
        norm = sqrt(sq)
        if norm > bound:
            scale = bound / norm
            for i in range(n):
                out[i] *= scale
    return out


def laplacian_apply(indptr, indices, states):
    """Row ``i`` gets ``deg_i*states[i] - sum_{j in N_i} states[j]`` (CSR neighborhood)."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] s = np.ascontiguousarray(states, dtype=np.float64)
    cdef Py_ssize_t num_nodes = ptr.shape[0] - 1
    cdef Py_ssize_t dim = s.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((num_nodes, dim), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef long p, deg
    for i in range(num_nodes):
        deg = ptr[i + 1] - ptr[i]
        for k in range(dim):
            out[i, k] = deg * s[i, k]
        for p in range(ptr[i], ptr[i + 1]):
            j = idx[p]
            for k in range(dim):
                out[i, k] -= s[j, k]
    return out
