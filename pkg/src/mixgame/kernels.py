"""Backend selection for the batched matrix-game kernels.

The compiled extension is used when it imports; otherwise the pure-Python
reference is used.  Setting ``MIXGAME_PURE_PYTHON=1`` forces the fallback.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels_py

_backend = _kernels_py
BACKEND = "python"
if os.environ.get("MIXGAME_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        _backend = _compiled
        BACKEND = "cython"

# fictitious-play iterations used when an exact solve degrades
FALLBACK_FP_ITERATIONS = 10_000


def _chunks(N, workers):
    workers = max(1, min(int(workers), N))
    edges = np.linspace(0, N, workers + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(workers) if edges[i + 1] > edges[i]]


def _run_chunked(fn, A, workers, *args):
    N = A.shape[0]
    if workers <= 1 or N < 2:
        return fn(A, *args)
    parts = _chunks(N, workers)
    with ThreadPoolExecutor(max_workers=len(parts)) as ex:
        results = list(ex.map(lambda ab: fn(A[ab[0]:ab[1]], *args), parts))
    return tuple(np.concatenate(cols) for cols in zip(*results))


def solve_exact_batch(A, workers=1):
    """Exact game values for a stack of payoff matrices.

    Returns ``(value, mu, nu, iterations, degraded)``.  Per-node results do
    not depend on ``workers``.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    return _run_chunked(_backend.solve_exact_batch, A, workers, 0)


def solve_fp_batch(A, iterations, workers=1):
    """Fictitious-play averages for a stack of payoff matrices.

    Returns ``(mu, nu, lower, upper)``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    A = np.ascontiguousarray(A, dtype=np.float64)
    return _run_chunked(_backend.solve_fp_batch, A, workers, int(iterations))


def python_backend():
    return _kernels_py


def compiled_backend():
    """The compiled module, or None when it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
