"""Small dense linear programs solved by exhaustive basis enumeration.

Problems here have at most a dozen variables (portfolios over d+1 <= 8
tradables, cone weights over <= 3 children), so enumerating all basic
solutions is deterministic, dependency-free, and fast. Feasibility and
optimality tolerances are absolute on constraint residuals.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

from .errors import NumericalFailure

FEAS_TOL = 1e-9
_RANK_TOL = 1e-11
_MAX_BASES = 500_000


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None


def _independent_rows(A: np.ndarray, b: np.ndarray):
    """Greedily keep a maximal independent row set; None if inconsistent."""
    m = A.shape[0]
    scale = max(1.0, float(np.abs(A).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    kept: list[int] = []
    for i in range(m):
        rows = kept + [i]
        if np.linalg.matrix_rank(A[rows], tol=_RANK_TOL * scale) == len(rows):
            kept.append(i)
    # Consistency: dropped rows must be implied by the kept ones.
    Ak, bk = A[kept], b[kept]
    kept_set = set(kept)
    for i in range(m):
        if i in kept_set:
            continue
        if not kept:
            if abs(float(b[i])) > FEAS_TOL * scale:
                return None
            continue
        # Express row i in terms of kept rows and check b matches.
        coef, *_ = np.linalg.lstsq(Ak.T, A[i], rcond=None)
        if float(np.abs(Ak.T @ coef - A[i]).max(initial=0.0)) > FEAS_TOL * scale:
            raise NumericalFailure("row reduction failed to express a dependent row")
        if abs(float(coef @ bk) - float(b[i])) > FEAS_TOL * scale:
            return None
    return Ak, bk


def solve_standard(
    c: np.ndarray, A: np.ndarray, b: np.ndarray, check_ray: bool = True
) -> LPResult:
    """min c.z subject to A z = b, z >= 0, by vertex enumeration."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape

    reduced = _independent_rows(A, b)
    if reduced is None:
        return LPResult("infeasible")
    A, b = reduced
    r = A.shape[0]

    if r == 0:
        # No effective constraints: z = 0 is the vertex.
        if check_ray and bool((c < -FEAS_TOL).any()):
            return LPResult("unbounded")
        return LPResult("optimal", np.zeros(n), 0.0)

    if _n_choose(n, r) > _MAX_BASES:
        raise NumericalFailure(f"basis enumeration too large: C({n},{r})")

    best_obj = None
    best_x = None
    for J in combinations(range(n), r):
        B = A[:, J]
        try:
            zJ = np.linalg.solve(B, b)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(zJ)):
            continue
        # Guard against ill-conditioned solves.
        if float(np.abs(B @ zJ - b).max(initial=0.0)) > FEAS_TOL:
            continue
        if zJ.min(initial=0.0) < -FEAS_TOL:
            continue
        x = np.zeros(n)
        x[list(J)] = np.clip(zJ, 0.0, None)
        obj = float(c @ x)
        if best_obj is None or obj < best_obj - 1e-12:
            best_obj = obj
            best_x = x
    if best_x is None:
        return LPResult("infeasible")

    if check_ray and bool(np.abs(c).max(initial=0.0) > 0.0):
        ray = _improving_ray(c, A)
        if ray is not None:
            return LPResult("unbounded")
    return LPResult("optimal", best_x, best_obj)


def _improving_ray(c: np.ndarray, A: np.ndarray) -> Optional[np.ndarray]:
    """Direction d >= 0 with A d = 0, sum d = 1, c.d < 0, if one exists."""
    r, n = A.shape
    A2 = np.vstack([A, np.ones((1, n))])
    b2 = np.zeros(r + 1)
    b2[-1] = 1.0
    res = solve_standard(c, A2, b2, check_ray=False)
    if res.status == "optimal" and res.objective is not None and res.objective < -FEAS_TOL:
        return res.x
    return None


def solve_lp(
    c,
    A_eq=None,
    b_eq=None,
    A_ub=None,
    b_ub=None,
    nonneg=None,
) -> LPResult:
    """min c.x with A_eq x = b_eq, A_ub x <= b_ub.

    ``nonneg`` is a boolean per variable (True: x_i >= 0, False: free);
    a single bool applies to all variables. Free variables are split,
    inequality rows get slack variables, then the standard-form solver
    enumerates vertices.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if nonneg is None:
        nonneg = True
    if isinstance(nonneg, bool):
        nonneg = [nonneg] * n
    nonneg = list(nonneg)

    rows_eq = 0 if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n).shape[0]
    rows_ub = 0 if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n).shape[0]

    # Column layout: one column per non-negative variable, two per free
    # variable (x = x+ - x-), then one slack per inequality row.
    col_of: list[tuple[int, int]] = []  # (var index, sign)
    for i in range(n):
        col_of.append((i, +1))
        if not nonneg[i]:
            col_of.append((i, -1))
    n_cols = len(col_of) + rows_ub

    A_rows = []
    b_all = []
    if rows_eq:
        Ae = np.asarray(A_eq, dtype=float).reshape(-1, n)
        be = np.asarray(b_eq, dtype=float).reshape(-1)
        for k in range(rows_eq):
            row = np.zeros(n_cols)
            for j, (i, s) in enumerate(col_of):
                row[j] = s * Ae[k, i]
            A_rows.append(row)
            b_all.append(be[k])
    if rows_ub:
        Au = np.asarray(A_ub, dtype=float).reshape(-1, n)
        bu = np.asarray(b_ub, dtype=float).reshape(-1)
        for k in range(rows_ub):
            row = np.zeros(n_cols)
            for j, (i, s) in enumerate(col_of):
                row[j] = s * Au[k, i]
            row[len(col_of) + k] = 1.0
            A_rows.append(row)
            b_all.append(bu[k])

    A_std = np.array(A_rows) if A_rows else np.zeros((0, n_cols))
    b_std = np.array(b_all)
    c_std = np.zeros(n_cols)
    for j, (i, s) in enumerate(col_of):
        c_std[j] = s * c[i]

    res = solve_standard(c_std, A_std, b_std)
    if res.status != "optimal":
        return res
    x = np.zeros(n)
    for j, (i, s) in enumerate(col_of):
        x[i] += s * res.x[j]
    return LPResult("optimal", x, float(c @ x))


def _n_choose(n: int, r: int) -> int:
    from math import comb

    return comb(n, r)
