"""Two-phase revised primal simplex.

The basis inverse is kept as a sparse LU factorization (SuperLU) followed by
a product-form eta file, refactored every ``REFACTOR_EVERY`` pivots. Pricing
is Dantzig's rule until ``5 * (rows + cols)`` pivots have been spent in a
phase, after which Bland's rule takes over, so every run terminates.
Free columns are never split: they enter in either direction and, once
basic, never block the ratio test.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .program import LinearProgram, LpSolution, Status

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-9
OPT_TOL = 1e-9
REFACTOR_EVERY = 64


class _Singular(Exception):
    pass


class _Basis:
    def __init__(self, A, basis):
        self.A = A
        self.basis = basis
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis].tocsc()
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as e:
            raise _Singular(str(e)) from None
        self.etas = []

    def ftran(self, a):
        x = self.lu.solve(a)
        for r, d in self.etas:
            xr = x[r] / d[r]
            x -= d * xr
            x[r] = xr
        return x

    def btran(self, c):
        c = c.copy()
        for r, d in reversed(self.etas):
            c[r] = (c[r] - (d @ c - d[r] * c[r])) / d[r]
        return self.lu.solve(c, trans="T")

    def pivot(self, r, q, d):
        self.basis[r] = q
        self.etas.append((r, d))
        if len(self.etas) >= REFACTOR_EVERY:
            self.refactor()
            return True
        return False


class _Standard:
    """``min c.x  s.t.  A x = b,  x_j >= 0 unless free`` with b >= 0."""

    def __init__(self, p: LinearProgram, active_rows, active_cols):
        m0 = p.matrix().tocsc()
        rows = np.asarray(active_rows, dtype=np.int64)
        cols = np.asarray(active_cols, dtype=np.int64)
        M = m0[rows][:, cols].tocsc()
        m = len(rows)
        self.rows, self.cols = rows, cols
        sign = -1.0 if p.sense == "max" else 1.0
        rhs = np.array(p.rhs, dtype=float)[rows]
        rel = [p.rel[i] for i in rows]
        flip = np.where(rhs < 0, -1.0, 1.0)
        self.flip = flip

        blocks = [M]
        costs = [sign * np.array(p.obj, dtype=float)[cols]]
        free = [np.isinf(np.array(p.lb, dtype=float)[cols])]
        # slacks
        s_rows, s_vals = [], []
        for i, r in enumerate(rel):
            if r == "<=":
                s_rows.append(i); s_vals.append(1.0)
            elif r == ">=":
                s_rows.append(i); s_vals.append(-1.0)
        ns = len(s_rows)
        S = sp.csc_matrix((s_vals, (s_rows, np.arange(ns))), shape=(m, ns))
        blocks.append(S)
        costs.append(np.zeros(ns))
        free.append(np.zeros(ns, dtype=bool))
        self.slack_row = np.array(s_rows, dtype=np.int64)

        A = sp.hstack(blocks, format="csc")
        A = (sp.diags(flip) @ A).tocsc()
        b = flip * rhs
        n_struct = len(cols)
        # initial basis: a slack with +1 after the flip, otherwise an artificial
        basis = np.full(m, -1, dtype=np.int64)
        for k, i in enumerate(s_rows):
            if s_vals[k] * flip[i] > 0:
                basis[i] = n_struct + k
        need = np.flatnonzero(basis < 0)
        na = len(need)
        Art = sp.csc_matrix((np.ones(na), (need, np.arange(na))), shape=(m, na))
        self.n_struct, self.n_slack, self.n_art = n_struct, ns, na
        self.first_art = n_struct + ns
        basis[need] = self.first_art + np.arange(na)
        self.A = sp.hstack([A, Art], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = b
        self.c = np.concatenate(costs + [np.zeros(na)])
        self.free = np.concatenate(free + [np.zeros(na, dtype=bool)])
        self.basis = basis
        self.m = m
        self.n = self.A.shape[1]

    def column(self, j):
        a = np.zeros(self.m)
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        a[self.A.indices[lo:hi]] = self.A.data[lo:hi]
        return a


class _Run:
    def __init__(self, std, max_iter):
        self.std = std
        self.max_iter = max_iter
        self.iterations = 0
        self.basis = std.basis.copy()
        self.fac = _Basis(std.A, self.basis)
        self.x_B = self.fac.ftran(std.b)
        self.is_art = np.zeros(std.n, dtype=bool)
        self.is_art[std.first_art:] = True

    def refresh(self):
        self.x_B = self.fac.ftran(self.std.b)
        clip = (self.x_B < 0) & (self.x_B > -FEAS_TOL) & ~self.std.free[self.basis]
        self.x_B[clip] = 0.0

    def solve_phase(self, c, enterable, fixed_zero):
        """Iterate to optimality for cost ``c``. Returns 'optimal', 'unbounded' or 'limit'."""
        std = self.std
        bland_after = 5 * (std.m + std.n)
        local = 0
        while True:
            if self.iterations >= self.max_iter:
                return "limit"
            y = self.fac.btran(c[self.basis])
            d = c - std.AT @ y
            cand = enterable.copy()
            cand[self.basis] = False
            neg = cand & (d < -OPT_TOL)
            pos = cand & std.free & (d > OPT_TOL)
            elig = neg | pos
            if not elig.any():
                return "optimal"
            bland = local >= bland_after
            if bland:
                q = int(np.flatnonzero(elig)[0])
            else:
                score = np.where(elig, np.abs(d), -1.0)
                q = int(np.argmax(score))
            s = 1.0 if d[q] < 0 else -1.0
            col = self.fac.ftran(std.column(q))
            dd = s * col
            free_b = std.free[self.basis]
            fz = fixed_zero[self.basis]
            block = (~free_b) & (dd > PIVOT_TOL)
            block_fz = fz & (np.abs(dd) > PIVOT_TOL)
            block |= block_fz
            if not block.any():
                return "unbounded"
            ratios = np.full(std.m, np.inf)
            xb = np.maximum(self.x_B, 0.0)
            ratios[block] = xb[block] / np.abs(dd[block])
            ratios[block_fz] = 0.0
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(dd[ties]))])
                theta = ratios[r]
            self.x_B -= theta * dd
            self.x_B[r] = s * theta
            refactored = self.fac.pivot(r, q, col)
            if refactored:
                self.refresh()
            self.iterations += 1
            local += 1


def solve_lp(p: LinearProgram, max_iter=None) -> LpSolution:
    """Solve ``p``; the result's status is never silently wrong."""
    n, m = p.n_cols, p.n_rows
    A = p.matrix()
    row_nnz = np.diff(A.indptr)
    col_nnz = np.bincount(A.indices, minlength=n)
    obj = np.array(p.obj, dtype=float)
    lb = np.array(p.lb, dtype=float)
    rhs = np.array(p.rhs, dtype=float)
    # presolve: empty rows and columns only
    for i in np.flatnonzero(row_nnz == 0):
        r, b = p.rel[i], rhs[i]
        ok = (r == "=" and abs(b) <= FEAS_TOL) or (r == "<=" and b >= -FEAS_TOL) or (r == ">=" and b <= FEAS_TOL)
        if not ok:
            return LpSolution(Status.INFEASIBLE, message=f"empty row {i} cannot be satisfied")
    active_rows = np.flatnonzero(row_nnz > 0)
    active_cols = np.flatnonzero(col_nnz > 0)
    sign = -1.0 if p.sense == "max" else 1.0
    empty_cols = np.flatnonzero(col_nnz == 0)

    x = np.zeros(n)
    duals = np.zeros(m)
    iterations = 0
    if len(active_rows):
        std = _Standard(p, active_rows, active_cols)
        if max_iter is None:
            max_iter = 50 * (std.m + std.n) + 1000
        try:
            run = _Run(std, max_iter)
            status, iterations = _two_phase(run)
        except _Singular as e:
            return LpSolution(Status.NUMERICAL, message=f"singular basis: {e}")
        if status is not Status.OPTIMAL:
            return LpSolution(status, iterations=iterations)
        xs = np.zeros(std.n)
        xs[run.basis] = run.x_B
        x[active_cols] = xs[:std.n_struct]
        y = run.fac.btran(std.c[run.basis])
        duals[active_rows] = sign * std.flip * y
    # an empty column with an improving cost makes a feasible LP unbounded
    for j in empty_cols:
        cj = sign * obj[j]
        if cj < -OPT_TOL or (np.isinf(lb[j]) and abs(cj) > OPT_TOL):
            return LpSolution(Status.UNBOUNDED, iterations=iterations)
    sol = LpSolution(Status.OPTIMAL, float(obj @ x), x, duals, iterations)
    _residuals(p, A, sol)
    if not (sol.primal_residual <= 100 * FEAS_TOL and sol.dual_residual <= 100 * FEAS_TOL):
        sol.status = Status.NUMERICAL
        sol.message = (f"residuals too large: primal {sol.primal_residual:.3g}, "
                       f"dual {sol.dual_residual:.3g}")
    return sol


def _two_phase(run):
    std = run.std
    enter1 = np.ones(std.n, dtype=bool)
    no_fixed = np.zeros(std.n, dtype=bool)
    if std.n_art:
        c1 = np.zeros(std.n)
        c1[std.first_art:] = 1.0
        res = run.solve_phase(c1, enter1, no_fixed)
        if res == "limit":
            return Status.NUMERICAL, run.iterations
        run.fac.refactor()
        run.refresh()
        infeas = run.x_B[run.is_art[run.basis]].sum()
        if infeas > FEAS_TOL * max(1.0, np.abs(std.b).max()):
            return Status.INFEASIBLE, run.iterations
        _drive_out_artificials(run)
    enter2 = ~run.is_art
    res = run.solve_phase(std.c, enter2, run.is_art)
    if res == "limit":
        return Status.NUMERICAL, run.iterations
    if res == "unbounded":
        return Status.UNBOUNDED, run.iterations
    # clean finish from a fresh factorization
    run.fac.refactor()
    run.refresh()
    res = run.solve_phase(std.c, enter2, run.is_art)
    if res != "optimal":
        return Status.NUMERICAL, run.iterations
    run.fac.refactor()
    run.refresh()
    return Status.OPTIMAL, run.iterations


def _drive_out_artificials(run):
    """Pivot zero-level artificials out of the basis where the row allows it."""
    std = run.std
    structural = ~run.is_art
    for r in range(std.m):
        if not run.is_art[run.basis[r]]:
            continue
        e = np.zeros(std.m)
        e[r] = 1.0
        rho = run.fac.btran(e)
        row = std.AT @ rho
        row[~structural] = 0.0
        row[run.basis] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) <= 1e-7:
            continue  # redundant row; the artificial stays basic at zero
        col = run.fac.ftran(std.column(j))
        theta = run.x_B[r] / col[r]
        run.x_B -= theta * col
        run.x_B[r] = theta
        if run.fac.pivot(r, j, col):
            run.refresh()
        run.iterations += 1
    run.fac.refactor()
    run.refresh()


def _residuals(p, A, sol):
    x, y = sol.x, sol.duals
    b = np.array(p.rhs, dtype=float)
    lb = np.array(p.lb, dtype=float)
    c = np.array(p.obj, dtype=float)
    Ax = A @ x
    viol = [0.0]
    rel = np.array(p.rel)
    eq, le, ge = rel == "=", rel == "<=", rel == ">="
    viol.append(np.abs(Ax - b)[eq].max(initial=0.0))
    viol.append(np.maximum(Ax - b, 0)[le].max(initial=0.0))
    viol.append(np.maximum(b - Ax, 0)[ge].max(initial=0.0))
    viol.append(np.maximum(-x, 0)[lb == 0].max(initial=0.0))
    sol.primal_residual = float(max(viol))
    # reduced costs in the "min" orientation
    sign = -1.0 if p.sense == "max" else 1.0
    red = sign * (c - A.T @ y)
    ys = sign * y
    dv = [0.0]
    dv.append(np.maximum(-red, 0)[lb == 0].max(initial=0.0))
    dv.append(np.abs(red)[np.isinf(lb)].max(initial=0.0))
    dv.append(np.maximum(ys, 0)[le].max(initial=0.0))
    dv.append(np.maximum(-ys, 0)[ge].max(initial=0.0))
    sol.dual_residual = float(max(dv))
    sol.gap = float(abs(c @ x - b @ y))
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    sol.slackness = float(np.max(np.abs(y) * np.abs(Ax - b) / norms, initial=0.0))
