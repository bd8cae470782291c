"""Dense two-phase simplex for desk-scale exact linear programs.

Full-tableau implementation over float64. Dantzig pricing with a permanent
switch to Bland's rule once the objective stalls (anti-cycling); ratio-test
ties break on the lowest row index. Row duals are recovered from the final
basis and satisfy complementary slackness, which the callers assert.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-8
MAX_PIVOTS = 1_000_000
STALL_LIMIT = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpError(RuntimeError):
    """Diagnostic failure (never a wrong status)."""


@dataclass
class LpProblem:
    """min c.v subject to E v = e, G v <= g, lb <= v <= ub."""

    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def build(cls, c, a_eq=None, b_eq=None, a_ub=None, b_ub=None, lb=None, ub=None):
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        n = c.shape[0]

        def mat(a, b):
            if a is None:
                return np.zeros((0, n)), np.zeros(0)
            a = np.atleast_2d(np.asarray(a, dtype=np.float64))
            b = np.asarray(b, dtype=np.float64).reshape(-1)
            if a.shape != (b.shape[0], n):
                raise ValueError(f"constraint block shape {a.shape} does not match {b.shape[0]}x{n}")
            return a, b

        a_eq, b_eq = mat(a_eq, b_eq)
        a_ub, b_ub = mat(a_ub, b_ub)
        lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=np.float64).reshape(-1).copy()
        ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=np.float64).reshape(-1).copy()
        if lb.shape[0] != n or ub.shape[0] != n:
            raise ValueError("bound length mismatch")
        if np.any(lb > ub):
            raise ValueError("variable bounds cross (lb > ub)")
        return cls(c, a_eq, b_eq, a_ub, b_ub, lb, ub)

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class LpResult:
    status: str
    x: Optional[np.ndarray] = None
    value: Optional[float] = None
    duals_eq: Optional[np.ndarray] = None
    duals_ub: Optional[np.ndarray] = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    def __init__(self, a: np.ndarray, b: np.ndarray, n_struct: int):
        self.m = a.shape[0]
        self.n_struct = n_struct  # structural + slack columns (artificials follow)
        self.t = np.hstack([a, b.reshape(-1, 1)])
        self.basis = np.full(self.m, -1, dtype=np.int64)
        self.pivots = 0
        self.bland = False
        self._stall = 0

    def _entering(self, r: np.ndarray, allowed: int) -> int:
        cand = np.nonzero(r[:allowed] < -PIVOT_TOL)[0]
        if cand.size == 0:
            return -1
        if self.bland:
            return int(cand[0])
        return int(cand[np.argmin(r[cand])])

    def run(self, cost: np.ndarray, allowed: int, cap: int) -> Tuple[str, np.ndarray]:
        """Minimize cost over the current basis; returns (status, reduced costs)."""
        t = self.t
        cb = cost[self.basis]
        r = cost[: t.shape[1] - 1] - cb @ t[:, :-1]
        value = float(cb @ t[:, -1])
        while True:
            j = self._entering(r, allowed)
            if j < 0:
                return OPTIMAL, r
            col = t[:, j]
            rows = np.nonzero(col > PIVOT_TOL)[0]
            if rows.size == 0:
                return UNBOUNDED, r
            ratios = t[rows, -1] / col[rows]
            best = np.min(ratios)
            tie = rows[ratios <= best + PIVOT_TOL]
            if self.bland:
                p = int(tie[np.argmin(self.basis[tie])])
            else:
                p = int(tie[0])
            theta = t[p, -1] / t[p, j]
            new_value = value + r[j] * theta
            if value - new_value <= 1e-12:
                self._stall += 1
                if self._stall >= STALL_LIMIT:
                    self.bland = True
            else:
                self._stall = 0
            value = new_value
            piv = t[p] / t[p, j]
            t -= np.outer(col, piv)
            t[p] = piv
            r = r - r[j] * piv[:-1]
            r[j] = 0.0
            self.basis[p] = j
            self.pivots += 1
            if self.pivots > cap:
                raise LpError(f"pivot cap exceeded ({cap})")


def solve_lp(p: LpProblem, max_pivots: int = MAX_PIVOTS) -> LpResult:
    n = p.n
    c = p.c

    # variable transforms: shift at finite lb, negate at (-inf, ub], split free
    shift = np.where(np.isfinite(p.lb), p.lb, 0.0)
    neg = (~np.isfinite(p.lb)) & np.isfinite(p.ub)
    free = (~np.isfinite(p.lb)) & (~np.isfinite(p.ub))
    shift = np.where(neg, p.ub, shift)
    sign = np.where(neg, -1.0, 1.0)
    split_idx = np.nonzero(free)[0]

    def transform_cols(a: np.ndarray) -> np.ndarray:
        cols = a * sign  # column scaling
        if split_idx.size:
            cols = np.hstack([cols, -a[:, split_idx]])
        return cols

    rhs_shift_eq = p.a_eq @ shift if p.a_eq.size else np.zeros(p.a_eq.shape[0])
    rhs_shift_ub = p.a_ub @ shift if p.a_ub.size else np.zeros(p.a_ub.shape[0])

    # upper-bound rows for vars that still have a second finite bound
    both = np.isfinite(p.lb) & np.isfinite(p.ub)
    bound_rows = np.nonzero(both)[0]
    a_bnd = np.zeros((bound_rows.size, n))
    for i, v in enumerate(bound_rows):
        a_bnd[i, v] = 1.0
    b_bnd = p.ub[bound_rows]

    a_ub_all = np.vstack([p.a_ub, a_bnd]) if bound_rows.size else p.a_ub
    b_ub_all = np.concatenate([p.b_ub, b_bnd]) if bound_rows.size else p.b_ub

    me, mu = p.a_eq.shape[0], a_ub_all.shape[0]
    m = me + mu
    eq_t = transform_cols(p.a_eq) if me else np.zeros((0, n + split_idx.size))
    ub_t = transform_cols(a_ub_all) if mu else np.zeros((0, n + split_idx.size))
    a_struct = np.vstack([eq_t, ub_t])
    rhs = np.concatenate([p.b_eq - rhs_shift_eq, b_ub_all - np.concatenate([rhs_shift_ub, a_bnd @ shift if bound_rows.size else np.zeros(0)])])

    n_xcols = n + split_idx.size
    slack = np.zeros((m, mu))
    for i in range(mu):
        slack[me + i, i] = 1.0
    a_full = np.hstack([a_struct, slack])
    rowsign = np.ones(m)
    negrows = rhs < 0
    a_full[negrows] *= -1.0
    rhs = np.where(negrows, -rhs, rhs)
    rowsign[negrows] = -1.0

    # artificials: equality rows and negated inequality rows
    need_art = np.ones(m, dtype=bool)
    for i in range(mu):
        if not negrows[me + i]:
            need_art[me + i] = False
    art_rows = np.nonzero(need_art)[0]
    art = np.zeros((m, art_rows.size))
    for j, i in enumerate(art_rows):
        art[i, j] = 1.0
    tab = _Tableau(np.hstack([a_full, art]), rhs, n_xcols + mu)
    n_total = a_full.shape[1] + art.shape[1]

    # initial basis: slacks where usable, artificials elsewhere
    art_of_row = {int(i): a_full.shape[1] + j for j, i in enumerate(art_rows)}
    for i in range(m):
        if i in art_of_row:
            tab.basis[i] = art_of_row[i]
        else:
            tab.basis[i] = n_xcols + (i - me)

    cost_obj = np.zeros(n_total)
    cost_obj[:n] = c * sign
    if split_idx.size:
        cost_obj[n : n_xcols] = -c[split_idx]

    if art_rows.size:
        cost1 = np.zeros(n_total)
        cost1[a_full.shape[1] :] = 1.0
        status, _ = tab.run(cost1, allowed=a_full.shape[1], cap=max_pivots)
        if status == UNBOUNDED:
            raise LpError("phase-1 unbounded (internal error)")
        phase1 = float(cost1[tab.basis] @ tab.t[:, -1])
        if phase1 > FEAS_TOL:
            return LpResult(INFEASIBLE, pivots=tab.pivots)
        # pivot lingering artificials out where possible
        for i in range(m):
            if tab.basis[i] >= a_full.shape[1]:
                row = tab.t[i, : a_full.shape[1]]
                j = int(np.argmax(np.abs(row)))
                if abs(row[j]) > PIVOT_TOL:
                    piv = tab.t[i] / tab.t[i, j]
                    tab.t -= np.outer(tab.t[:, j], piv)
                    tab.t[i] = piv
                    tab.basis[i] = j

    status, _ = tab.run(cost_obj, allowed=a_full.shape[1], cap=max_pivots)
    if status == UNBOUNDED:
        return LpResult(UNBOUNDED, pivots=tab.pivots)

    w = np.zeros(n_total)
    w[tab.basis] = tab.t[:, -1]
    x = sign * w[:n] + shift
    if split_idx.size:
        x[split_idx] -= w[n : n_xcols]
    value = float(c @ x)

    # duals from the original columns of the final basis
    a0 = np.hstack([a_full, art])
    bmat = a0[:, tab.basis]
    try:
        y = np.linalg.solve(bmat.T, cost_obj[tab.basis])
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(bmat.T, cost_obj[tab.basis], rcond=None)
    y_orig = rowsign * y  # back to the pre-negation row orientation
    duals_eq = -y_orig[:me]
    duals_ub = -y_orig[me : me + p.a_ub.shape[0]]
    return LpResult(OPTIMAL, x, value, duals_eq, duals_ub, pivots=tab.pivots)
