"""Conjugate-gradient solves on sparse symmetric operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

DEFAULT_RTOL = 1e-10


class SolverError(RuntimeError):
    """Raised when an iterative solve misses its residual target."""


@dataclass
class SolveInfo:
    iterations: int
    residual: float


def cg(A, b, rtol: float = DEFAULT_RTOL, maxiter: int | None = None, x0=None):
    """Solve A x = b for symmetric positive (semi)definite sparse A.

    ``b`` may have several columns; each is solved separately.  For a
    singular A the right-hand side must lie in the range of A, in which case
    CG started from zero returns the minimum-norm solution.
    Returns ``(x, SolveInfo)`` where ``residual`` is the worst relative
    residual over the columns.
    """
    b = np.asarray(b, dtype=float)
    cols = b.reshape(len(b), -1)
    out = np.zeros_like(cols)
    n_it, worst = 0, 0.0
    maxiter = maxiter or max(1000, 10 * len(b))
    for j in range(cols.shape[1]):
        rhs = cols[:, j]
        nb = np.linalg.norm(rhs)
        if nb == 0.0:
            continue
        count = [0]

        def cb(_):
            count[0] += 1

        guess = None if x0 is None else np.asarray(x0, dtype=float).reshape(len(b), -1)[:, j]
        x, info = spla.cg(A, rhs, x0=guess, rtol=rtol, atol=0.0, maxiter=maxiter, callback=cb)
        res = np.linalg.norm(A @ x - rhs) / nb
        if info != 0 and res > 10 * rtol:
            raise SolverError(f"CG did not converge: relative residual {res:.3e} after {count[0]} iterations")
        out[:, j] = x
        n_it += count[0]
        worst = max(worst, res)
    return out.reshape(b.shape), SolveInfo(n_it, worst)
