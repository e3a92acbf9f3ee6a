"""Hot-kernel backend selection.

The compiled core (``lidarfield.kernels._core``) is preferred when built;
otherwise the pure-numpy backend is used. Set ``NL_KERNELS=numpy`` or
``NL_KERNELS=cython`` to force one. Both backends implement the same four
functions; ``numpy_backend`` carries the reference docstrings.
"""

import os

import numpy as np

from . import numpy_backend

_requested = os.environ.get("NL_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "numpy"):
    raise ValueError(f"NL_KERNELS must be auto, cython or numpy, got {_requested!r}")

_impl = None
if _requested in ("auto", "cython"):
    try:
        from . import _core as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = None
if _impl is None:
    _impl = numpy_backend

BACKEND = "numpy" if _impl is numpy_backend else "cython"


def backend_name():
    """Name of the kernel backend selected at import time."""
    return BACKEND


def get_backend(name):
    """Fetch a backend module by name ('numpy' or 'cython'), for benchmarks."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown kernel backend {name!r}")


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def hash_grid_forward(tables, x01, res):
    return _impl.hash_grid_forward(_f64(tables), _f64(x01),
                                   np.ascontiguousarray(res, dtype=np.int64))


def hash_grid_backward(gout, x01, res, shape):
    return _impl.hash_grid_backward(_f64(gout), _f64(x01),
                                    np.ascontiguousarray(res, dtype=np.int64),
                                    tuple(shape))


def composite_weights_forward(sdelta):
    return _impl.composite_weights_forward(_f64(sdelta))


def composite_weights_backward(g, sdelta, w, trans):
    return _impl.composite_weights_backward(_f64(g), _f64(sdelta), _f64(w), _f64(trans))
