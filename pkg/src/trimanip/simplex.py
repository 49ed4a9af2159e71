"""Small dense two-phase simplex solver for equality-constrained LPs.

Solves  min c.x  s.t.  A x = b, x >= 0  with Bland's rule (no cycling).
Problem sizes here are tiny (tens of variables, <10 rows), so a dense
tableau is the simplest reliable choice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TOL = 1e-10


class SimplexError(RuntimeError):
    pass


@dataclass
class LPSolution:
    status: str            # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None


def _iterate(tableau: np.ndarray, basis: list[int], allowed: np.ndarray, max_iters: int) -> str:
    m = tableau.shape[0] - 1
    for _ in range(max_iters):
        costs = tableau[-1, :-1]
        entering = -1
        for j in np.flatnonzero(allowed):
            if costs[j] < -_TOL:
                entering = int(j)
                break
        if entering < 0:
            return "optimal"
        col = tableau[:m, entering]
        best_ratio, leaving = None, -1
        for i in range(m):
            if col[i] > _TOL:
                ratio = tableau[i, -1] / col[i]
                if best_ratio is None or ratio < best_ratio - _TOL or (
                    abs(ratio - best_ratio) <= _TOL and basis[i] < basis[leaving]
                ):
                    best_ratio, leaving = ratio, i
        if leaving < 0:
            return "unbounded"
        piv = tableau[leaving, entering]
        tableau[leaving] /= piv
        for r in range(m + 1):
            if r != leaving and abs(tableau[r, entering]) > 0.0:
                tableau[r] -= tableau[r, entering] * tableau[leaving]
        basis[leaving] = entering
    raise SimplexError("simplex iteration limit exceeded")


def solve_lp(c, a_eq, b_eq, maximize: bool = False, max_iters: int = 5000) -> LPSolution:
    """Two-phase simplex for min (or max) c.x s.t. a_eq x = b_eq, x >= 0."""
    c = np.asarray(c, dtype=float).copy()
    a = np.asarray(a_eq, dtype=float).copy()
    b = np.asarray(b_eq, dtype=float).copy()
    if maximize:
        c = -c
    m, n = a.shape
    neg = b < 0
    a[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial basis, minimize sum of artificials
    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = a
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[-1, n : n + m] = 1.0
    basis = list(range(n, n + m))
    for i in range(m):
        tableau[-1] -= tableau[i]
    allowed = np.ones(n + m, dtype=bool)
    status = _iterate(tableau, basis, allowed, max_iters)
    if status != "optimal" or tableau[-1, -1] < -1e-7:
        return LPSolution("infeasible", None, None)

    # drive leftover artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= n:
            row = tableau[i, :n]
            pivots = np.flatnonzero(np.abs(row) > 1e-9)
            if len(pivots):
                j = int(pivots[0])
                piv = tableau[i, j]
                tableau[i] /= piv
                for r in range(m + 1):
                    if r != i and abs(tableau[r, j]) > 0.0:
                        tableau[r] -= tableau[r, j] * tableau[i]
                basis[i] = j

    # phase 2: original costs, artificials barred from entering
    tableau[-1, :] = 0.0
    tableau[-1, :n] = c
    for i in range(m):
        if basis[i] < n and abs(c[basis[i]]) > 0.0:
            tableau[-1] -= c[basis[i]] * tableau[i]
    allowed = np.zeros(n + m, dtype=bool)
    allowed[:n] = True
    status = _iterate(tableau, basis, allowed, max_iters)
    if status == "unbounded":
        return LPSolution("unbounded", None, None)

    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = tableau[i, -1]
    obj = float(c @ x)
    return LPSolution("optimal", x, -obj if maximize else obj)
