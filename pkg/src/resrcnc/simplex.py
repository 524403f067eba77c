"""Bundled LP solver: revised simplex over sparse rows with Bland's rule.

Problems arrive in the canonical form used by the flow matcher:

    maximize  objective . x   subject to   rows @ x <= rhs,  x >= 0,

with rhs >= 0, so the all-slack basis is feasible and no phase-1 is needed.
The solver keeps an explicit dense basis inverse, which is fine at the sizes
the matcher produces per slot but is not meant to compete with an optimized
backend; `get_solver` exposes scipy's interior HiGHS as an alternative behind
the same signature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .model import SimulationError

# pivots below 1e-9 of the working column scale are treated as zero
PIVOT_REL_TOL = 1e-9


@dataclass
class CanonicalLP:
    objective: np.ndarray          # (n,)
    rows: sp.csr_matrix            # (m, n)
    rhs: np.ndarray                # (m,) nonnegative

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if not sp.issparse(self.rows):
            self.rows = sp.csr_matrix(np.atleast_2d(np.asarray(self.rows, dtype=float)))
        self.rows = self.rows.tocsr()
        m, n = self.rows.shape
        if self.objective.shape != (n,) or self.rhs.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if (self.rhs < -1e-7 * (1.0 + np.abs(self.rhs))).any():
            raise SimulationError("canonical LP requires nonnegative rhs")
        np.maximum(self.rhs, 0.0, out=self.rhs)

    @property
    def num_vars(self) -> int:
        return self.rows.shape[1]


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    iterations: int = 0
    status: str = "optimal"


def solve_bland(lp: CanonicalLP, max_iter: int | None = None) -> SolveResult:
    """Phase-2 revised simplex, Bland's entering/leaving rule (anti-cycling)."""
    m, n = lp.rows.shape
    if n == 0:
        return SolveResult(np.zeros(0), 0.0, 0)
    if max_iter is None:
        max_iter = 50 * (n + m) + 1000
    cols = lp.rows.tocsc()
    c = lp.objective
    cost_tol = 1e-9 * max(1.0, float(np.abs(c).max(initial=0.0)))

    basis = np.arange(n, n + m)            # slack basis
    binv = np.eye(m)
    xb = lp.rhs.copy()
    cb = np.zeros(m)

    for it in range(max_iter):
        y = cb @ binv
        reduced = c - (cols.T @ y)
        entering = -1
        for j in np.flatnonzero(reduced > cost_tol):
            entering = int(j)
            break
        if entering < 0:
            x = np.zeros(n)
            struct = basis < n
            x[basis[struct]] = np.maximum(xb[struct], 0.0)
            return SolveResult(x, float(c @ x), it)

        col = cols[:, [entering]].toarray().ravel()
        u = binv @ col
        piv_tol = PIVOT_REL_TOL * max(1.0, float(np.abs(u).max()))
        pos = u > piv_tol
        if not pos.any():
            raise SimulationError("LP unbounded: no blocking row for entering column")
        ratios = np.full(m, np.inf)
        ratios[pos] = xb[pos] / u[pos]
        theta = ratios.min()
        # Bland: among tied blocking rows, evict the lowest variable index
        tied = np.flatnonzero(ratios <= theta * (1 + 1e-12) + 1e-15)
        leave = tied[np.argmin(basis[tied])]

        xb -= theta * u
        xb[leave] = theta
        erow = binv[leave] / u[leave]
        binv -= np.outer(u, erow)
        binv[leave] = erow
        basis[leave] = entering
        cb[leave] = c[entering]
    raise SimulationError(f"simplex iteration limit {max_iter} exceeded")


def solve_scipy(lp: CanonicalLP, max_iter: int | None = None) -> SolveResult:
    from scipy.optimize import linprog
    res = linprog(-lp.objective, A_ub=lp.rows, b_ub=lp.rhs,
                  bounds=(0, None), method="highs")
    if not res.success:
        raise SimulationError(f"scipy linprog failed: {res.message}")
    return SolveResult(np.asarray(res.x), float(-res.fun), int(res.nit))


SOLVERS: dict[str, Callable[[CanonicalLP], SolveResult]] = {
    "bundled": solve_bland,
    "scipy": solve_scipy,
}


def get_solver(name: str) -> Callable[[CanonicalLP], SolveResult]:
    try:
        return SOLVERS[name]
    except KeyError:
        raise SimulationError(f"unknown LP backend {name!r}; have {sorted(SOLVERS)}") from None
