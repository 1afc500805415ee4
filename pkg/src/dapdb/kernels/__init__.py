"""Kernel backend selection.

The compiled Cython core is preferred when importable; otherwise the pure
NumPy twin is used. Set ``DAPDB_PURE_KERNELS=1`` to force the fallback (used
by the benchmark and by tests that compare the two backends).
"""

import os

from . import pure

if os.environ.get("DAPDB_PURE_KERNELS", "0") == "1":
    _impl = pure
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = pure

BACKEND = _impl.BACKEND
soft_threshold_box = _impl.soft_threshold_box
project_nonneg_ball = _impl.project_nonneg_ball
laplacian_apply = _impl.laplacian_apply


def available_backends():
    """Names of importable kernel backends."""
    names = ["pure"]
    try:
        from . import _core  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Return the kernel module for ``name`` ('pure' or 'compiled')."""
    if name == "pure":
        return pure
    if name == "compiled":
        from . import _core

        return _core
    raise ValueError(f"unknown kernel backend: {name!r}")
