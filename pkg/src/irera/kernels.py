"""Hot scoring kernels: numba-jitted with a pure-numpy fallback.

Selection is driven by the IRERA_NUMBA environment variable at import time:
"0" forces the numpy path, "1" requires numba (ImportError if missing),
anything else (default) uses numba when available and falls back silently.
Both paths are exposed (`*_numpy`, `*_numba`) so tests and the benchmark in
benchmarks/bench_kernels.py can compare them directly.

All kernels take and return float64; callers upcast float32 storage before
scoring, so the two paths agree to floating-point roundoff (and exactly on
the closed-form points the tests pin down).
"""

from __future__ import annotations

import logging
import math
import os

import numpy as np

logger = logging.getLogger(__name__)

ENV_FLAG = "IRERA_NUMBA"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False


def _want_numba() -> bool:
    value = os.environ.get(ENV_FLAG, "auto").strip().lower()
    if value in ("0", "false", "no", "off"):
        return False
    if value in ("1", "true", "yes", "on"):
        if not HAVE_NUMBA:
            raise ImportError(f"{ENV_FLAG}={value} but numba is not importable")
        return True
    return HAVE_NUMBA


def max_dot_numpy(matrix: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Per-row maximum dot product against the query set (BLAS path)."""
    return (matrix @ queries.T).max(axis=1)


def prior_multiplier_numpy(priors: np.ndarray, strength: float) -> np.ndarray:
    return np.log10(strength * priors + 10.0)


if HAVE_NUMBA:

    # Single-threaded on purpose: forward passes already run concurrently in a
    # thread pool, and numba's threading layers are not safe to enter from
    # multiple Python threads at once.
    @njit(cache=True)
    def max_dot_numba(matrix, queries):
        n_rows, dim = matrix.shape
        n_queries = queries.shape[0]
        out = np.empty(n_rows)
        for i in range(n_rows):
            best = -1.0e300
            for j in range(n_queries):
                acc = 0.0
                for k in range(dim):
                    acc += matrix[i, k] * queries[j, k]
                if acc > best:
                    best = acc
            out[i] = best
        return out

    @njit(cache=True)
    def prior_multiplier_numba(priors, strength):
        out = np.empty(priors.shape[0])
        for i in range(priors.shape[0]):
            out[i] = math.log10(strength * priors[i] + 10.0)
        return out

else:  # pragma: no cover
    max_dot_numba = None
    prior_multiplier_numba = None

_use_numba = _want_numba()


def active_backend() -> str:
    return "numba" if _use_numba else "numpy"


def set_backend(name: str) -> None:
    """Override the kernel path at runtime ("numba" or "numpy")."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise ImportError("numba is not importable")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def _fallback(exc: Exception) -> None:
    global _use_numba
    logger.warning("numba kernel failed (%s); falling back to numpy for this process", exc)
    _use_numba = False


def max_dot(matrix: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if _use_numba:
        try:
            return max_dot_numba(matrix, queries)
        except Exception as exc:  # jit/runtime failure, e.g. threading layer
            _fallback(exc)
    return max_dot_numpy(matrix, queries)


def prior_multiplier(priors: np.ndarray, strength: float) -> np.ndarray:
    if _use_numba:
        try:
            return prior_multiplier_numba(priors, strength)
        except Exception as exc:
            _fallback(exc)
    return prior_multiplier_numpy(priors, strength)


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending index.

    Sorting is a numpy stable argsort on both kernel paths; it is not a hot
    loop worth jitting.
    """
    return np.argsort(-scores, kind="stable")
