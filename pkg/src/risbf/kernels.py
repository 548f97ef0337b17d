"""Hot numeric kernels for the power-iteration solver.

Two interchangeable implementations exist: a numba ``@njit`` version and a
pure-numpy fallback. The active backend is chosen at import time from the
``RISBF_BACKEND`` environment variable (``numba`` by default, ``numpy`` to
force the fallback); ``risbf bench --backends both`` times the two against
each other. Both follow the same operation order; results agree to
floating-point round-off (complex division compiles to a different
instruction order under numba).
"""

from __future__ import annotations

import os

import numpy as np

_BACKEND_ENV = os.environ.get("RISBF_BACKEND", "numba").strip().lower()
if _BACKEND_ENV not in ("numba", "numpy"):
    raise ValueError(f"RISBF_BACKEND must be 'numba' or 'numpy', got {_BACKEND_ENV!r}")


def _pi_iterate_py(r, x0, max_iter, tol):
    """Power-iteration loop on the diagonally loaded matrix ``r``.

    Each step replaces x by the entrywise phase of R @ x; entries where
    R @ x vanishes keep their previous phase. Stops when the relative
    change of the objective x^H R x falls below ``tol``. Returns the final
    iterate, the iteration count and the objective trace (length
    ``iterations + 1``, starting at the objective of ``x0``).
    """
    n = x0.shape[0]
    x = x0.copy()
    trace = np.empty(max_iter + 1)
    y = r @ x
    obj = np.vdot(x, y).real
    trace[0] = obj
    it = 0
    while it < max_iter:
        xn = x.copy()
        for i in range(n):
            a = np.abs(y[i])
            if a > 0.0:
                xn[i] = y[i] / a
        x = xn
        y = r @ x
        new_obj = np.vdot(x, y).real
        it += 1
        trace[it] = new_obj
        if np.abs(new_obj - obj) <= tol * max(1.0, np.abs(obj)):
            obj = new_obj
            break
        obj = new_obj
    return x, it, trace[: it + 1]


def _pi_step_py(x, r):
    """One power-iteration step; zero entries of R @ x keep the old phase."""
    y = r @ x
    out = x.copy()
    for i in range(x.shape[0]):
        a = np.abs(y[i])
        if a > 0.0:
            out[i] = y[i] / a
    return out


pi_iterate_numpy = _pi_iterate_py
pi_step_numpy = _pi_step_py

try:
    import numba

    pi_iterate_numba = numba.njit(cache=True)(_pi_iterate_py)
    pi_step_numba = numba.njit(cache=True)(_pi_step_py)
    HAVE_NUMBA = True
except ImportError:
    pi_iterate_numba = None
    pi_step_numba = None
    HAVE_NUMBA = False

if _BACKEND_ENV == "numba" and HAVE_NUMBA:
    BACKEND = "numba"
    pi_iterate = pi_iterate_numba
    pi_step_kernel = pi_step_numba
else:
    BACKEND = "numpy"
    pi_iterate = pi_iterate_numpy
    pi_step_kernel = pi_step_numpy
