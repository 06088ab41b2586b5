"""Dense primal simplex for  max c.x  s.t.  A x <= b,  0 <= x <= 1,  b >= 0.

Because b >= 0 the slack basis is feasible from the start, so no phase one is
needed.  Upper bounds are appended as explicit rows.  Pivoting follows
Bland's rule, which is deterministic and cannot cycle.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

PIVOT_TOL = 1e-11
COST_TOL = 1e-10
FEAS_TOL = 1e-9


class LpStatus(Enum):
    OPTIMAL = "optimal"
    UNBOUNDED = "unbounded"


class LpError(RuntimeError):
    """Numerical breakdown; the solver refuses to return a wrong answer."""


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    upper_bounds: bool = True

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.b))):
            raise ValueError("LP coefficients must be finite")
        if np.any(self.b < 0):
            raise ValueError("b must be nonnegative so x = 0 is feasible")

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LpResult:
    status: LpStatus
    x: np.ndarray
    objective: float
    duals: np.ndarray | None = None  # one per row of A, then one per upper bound
    iterations: int = 0


def solve(problem: LpProblem, max_iter: int | None = None) -> LpResult:
    c, A, b = problem.c, problem.A, problem.b
    n = c.size
    if n == 0:
        return LpResult(LpStatus.OPTIMAL, np.zeros(0), 0.0, np.zeros(A.shape[0]))

    if problem.upper_bounds:
        A_full = np.vstack([A, np.eye(n)])
        b_full = np.concatenate([b, np.ones(n)])
    else:
        A_full, b_full = A, b
    m = A_full.shape[0]

    # row scaling for conditioning; duals are unscaled at the end
    scale = np.maximum(np.abs(A_full).max(axis=1, initial=0.0), b_full)
    scale[scale == 0] = 1.0
    A_s = A_full / scale[:, None]
    b_s = b_full / scale

    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A_s
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b_s
    T[m, :n] = -c
    basis = np.arange(n, n + m)

    max_iter = max_iter or 50 * (n + m) + 100
    it = 0
    status = LpStatus.OPTIMAL
    while True:
        obj_row = T[m, :-1]
        cand = np.flatnonzero(obj_row < -COST_TOL)
        if cand.size == 0:
            break
        if it >= max_iter:
            raise LpError(f"simplex exceeded {max_iter} iterations")
        j = int(cand[0])  # Bland: lowest-index improving column
        col = T[:m, j]
        pos = np.flatnonzero(col > PIVOT_TOL)
        if pos.size == 0:
            status = LpStatus.UNBOUNDED
            break
        ratios = T[pos, -1] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + 1e-12 * max(1.0, abs(rmin))]
        # Bland: among tied rows, leave the lowest-index basic variable
        r = int(ties[np.argmin(basis[ties])])
        T[r] /= T[r, j]
        others = T[:, j].copy()
        others[r] = 0.0
        T -= np.outer(others, T[r])
        basis[r] = j
        it += 1

    if not np.all(np.isfinite(T)):
        raise LpError("non-finite tableau entries")

    x = np.zeros(n + m)
    x[basis] = T[:m, -1]
    xs = x[:n]
    if status is LpStatus.UNBOUNDED:
        return LpResult(status, xs, float("inf"), None, it)

    # snap round-off; anything beyond tolerance is a breakdown
    if np.any(xs < -1e-7) or np.any(x[n:] < -1e-7):
        raise LpError("negative basic variable after pivoting")
    xs = np.clip(xs, 0.0, None)
    if problem.upper_bounds:
        xs = np.minimum(xs, 1.0)
    viol = (A_full @ xs - b_full) / scale
    if viol.size and viol.max() > FEAS_TOL * 100:
        raise LpError(f"solution infeasible by {viol.max():.3e} (scaled)")
    duals = T[m, n:n + m] / scale
    return LpResult(status, xs, float(c @ xs), duals, it)


def dual_bound(problem: LpProblem, duals: np.ndarray) -> float:
    """b.y (+ sum of bound duals): an upper bound on the primal for any y >= 0
    satisfying A^T y >= c."""
    b = problem.b
    if problem.upper_bounds:
        b = np.concatenate([b, np.ones(problem.n)])
    return float(b @ duals)
