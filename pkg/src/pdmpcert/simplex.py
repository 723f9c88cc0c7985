"""Dense bounded-variable primal simplex.

Solves  max c.x  subject to  A x <= b,  0 <= x <= u,  with b >= 0, so the
all-slack basis is feasible and no phase one is needed.  Pivoting follows
Bland's lowest-index rule for both the entering and the leaving variable,
which rules out cycling.  The result carries a duality-gap certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError

TOL = 1e-11


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    duals: np.ndarray
    gap: float
    iterations: int
    method: str


def certificate_gap(c, A, b, u, x, y) -> float:
    """Duality gap for duals y >= 0 of the rows; bound duals are w = max(0, c - A^T y)."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    w = np.maximum(0.0, c - A.T @ y)
    return float(b @ y + u @ w - c @ x)


def primal_violation(A, b, u, x) -> float:
    return float(max(np.max(A @ x - b, initial=0.0), np.max(-x, initial=0.0), np.max(x - u, initial=0.0)))


def solve_bounded_lp(c, A, b, u, max_iter: int = 200_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)
    m, n = A.shape
    if np.any(b < 0):
        raise SolverError("right-hand side must be non-negative")
    N = n + m
    # tableau over structural + slack columns
    T = np.hstack([A, np.eye(m)])
    cost = np.concatenate([c, np.zeros(m)])
    ub = np.concatenate([u, np.full(m, np.inf)])
    basis = np.arange(n, N)
    at_upper = np.zeros(N, dtype=bool)
    xB = b.copy()

    for it in range(max_iter):
        d = cost - cost[basis] @ T
        d[basis] = 0.0
        cand = np.nonzero(((~at_upper) & (d > TOL)) | (at_upper & (d < -TOL)))[0]
        if cand.size == 0:
            x = np.where(at_upper, ub, 0.0)
            x[basis] = xB
            x = x[:n]
            # duals of the rows: y = c_B B^{-1}; B^{-1} sits in the slack columns
            y = cost[basis] @ T[:, n:]
            val = float(c @ x)
            return LPResult(x, val, y, certificate_gap(c, A, b, u, x, y), it, "simplex")
        j = int(cand[0])
        s = -1.0 if at_upper[j] else 1.0
        col = T[:, j] * s
        # step limit from the entering variable's own bound
        theta, leave, to_upper = ub[j], -1, False
        dec = col > TOL
        inc = col < -TOL
        lim = np.full(m, np.inf)
        lim[dec] = xB[dec] / col[dec]
        ubB = ub[basis]
        lim[inc] = (ubB[inc] - xB[inc]) / -col[inc]
        if lim.size:
            best = lim.min()
            if best < theta:
                ties = np.nonzero(lim <= best + TOL * (1 + abs(best)))[0]
                r = int(ties[np.argmin(basis[ties])])
                theta, leave, to_upper = lim[r], r, bool(inc[r])
        if not np.isfinite(theta):
            raise SolverError("LP unbounded")
        xB = xB - theta * col
        if leave < 0:
            at_upper[j] = not at_upper[j]
            continue
        entering_value = (ub[j] - theta) if at_upper[j] else theta
        old = basis[leave]
        piv = T[leave, j]
        T[leave] /= piv
        others = np.arange(m) != leave
        T[others] -= np.outer(T[others, j], T[leave])
        xB[leave] = entering_value
        basis[leave] = j
        at_upper[j] = False
        at_upper[old] = to_upper
        np.clip(xB, 0.0, ub[basis], out=xB)
    raise SolverError(f"simplex did not terminate in {max_iter} iterations")
