"""Tiny affine-expression front end for the Clarabel conic solver.

Constraints are written as affine expressions ``c + g^T z`` required to lie
in a cone (zero, nonnegative orthant or second-order cone).  Clarabel's
form is ``A z + s = b, s in K``, so each expression becomes ``A = -g``,
``b = c``.
"""

from __future__ import annotations

from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import SolverFailure


class Expr:
    """Sparse affine expression sum_k vals[k] * z[cols[k]] + const."""

    __slots__ = ("cols", "vals", "const")

    def __init__(self, cols=(), vals=(), const=0.0):
        self.cols = np.asarray(cols, dtype=np.int64).ravel()
        self.vals = np.asarray(vals, dtype=float).ravel()
        self.const = float(const)

    def __add__(self, other):
        if isinstance(other, Expr):
            return Expr(np.concatenate([self.cols, other.cols]),
                        np.concatenate([self.vals, other.vals]), self.const + other.const)
        return Expr(self.cols, self.vals, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return Expr(self.cols, -self.vals, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, a):
        a = float(a)
        return Expr(self.cols, a * self.vals, a * self.const)

    __rmul__ = __mul__


def var(i) -> Expr:
    return Expr([i], [1.0])


def dot(coef, idx) -> Expr:
    """Expression coef^T z[idx]."""
    coef = np.asarray(coef, dtype=float)
    mask = coef != 0
    return Expr(np.asarray(idx)[mask], coef[mask])


@dataclass
class ConicResult:
    status: str
    x: np.ndarray
    obj: float


class ConicModel:
    def __init__(self):
        self.n = 0
        self._zero = []
        self._nonneg = []
        self._soc = []
        self._q = {}
        self._P = []

    def add_var(self, size: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + size)
        self.n += size
        return idx

    def eq(self, e: Expr):
        self._zero.append(e)

    def ge(self, e: Expr):
        """e >= 0."""
        self._nonneg.append(e)

    def soc(self, head: Expr, tail):
        """head >= || tail ||_2."""
        self._soc.append([head] + list(tail))

    def linear_cost(self, idx, coef):
        for i, c in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(np.atleast_1d(idx)))):
            self._q[int(i)] = self._q.get(int(i), 0.0) + float(c)

    def quad_cost(self, rows, cols, vals):
        """Add 0.5 z^T P z with P given by (upper-triangular) triplets."""
        self._P.append((np.asarray(rows), np.asarray(cols), np.asarray(vals, dtype=float)))

    def _rows(self, exprs, start):
        r, c, v, b = [], [], [], []
        for k, e in enumerate(exprs):
            r.append(np.full(e.cols.size, start + k))
            c.append(e.cols)
            v.append(-e.vals)
            b.append(e.const)
        return r, c, v, b

    def solve(self, tol: float = 1e-9) -> ConicResult:
        rows, cols, vals, rhs = [], [], [], []
        cones = []
        m = 0
        for group, cone in ((self._zero, clarabel.ZeroConeT), (self._nonneg, clarabel.NonnegativeConeT)):
            if group:
                r, c, v, b = self._rows(group, m)
                rows += r
                cols += c
                vals += v
                rhs += b
                cones.append(cone(len(group)))
                m += len(group)
        for block in self._soc:
            r, c, v, b = self._rows(block, m)
            rows += r
            cols += c
            vals += v
            rhs += b
            cones.append(clarabel.SecondOrderConeT(len(block)))
            m += len(block)

        n = self.n
        A = sp.csc_matrix(
            (np.concatenate(vals) if vals else np.zeros(0),
             (np.concatenate(rows) if rows else np.zeros(0, int),
              np.concatenate(cols) if cols else np.zeros(0, int))),
            shape=(m, n),
        )
        q = np.zeros(n)
        for i, c in self._q.items():
            q[i] = c
        if self._P:
            pr = np.concatenate([p[0] for p in self._P])
            pc = np.concatenate([p[1] for p in self._P])
            pv = np.concatenate([p[2] for p in self._P])
            P = sp.triu(sp.csc_matrix((pv, (pr, pc)), shape=(n, n))).tocsc()
        else:
            P = sp.csc_matrix((n, n))

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        sol = clarabel.DefaultSolver(P, q, A, np.asarray(rhs, dtype=float), cones, settings).solve()
        status = str(sol.status)
        x = np.asarray(sol.x, dtype=float)
        if status in ("Solved", "AlmostSolved"):
            return ConicResult("optimal", x, float(sol.obj_val))
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return ConicResult("infeasible", x, np.inf)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            raise SolverFailure("relaxation unbounded below; check that the sets are bounded")
        # iteration / numerical limits: accept if the point is usable
        if np.all(np.isfinite(x)) and np.isfinite(sol.obj_val):
            return ConicResult("inaccurate", x, float(sol.obj_val))
        raise SolverFailure(f"clarabel returned {status}")
