"""Continuous relaxations of the evidence problem.

Two relaxations share one variable layout (mu+, mu-, u, b, phi, p_i):

* the perspective relaxation, where (mu+ - mu-)^2 / u <= phi is written as
  the rotated cone ||(mu+ - mu-, (phi - u)/2)|| <= (phi + u)/2;
* the box relaxation, which keeps ||mu||^2 in the objective and only relaxes
  u, b to [0, 1].

``socp_relaxation`` returns certified node bounds (closed form when the robust
constraints are slack at the separable minimiser, Clarabel otherwise).
``solve_lagrangian`` is the batched first-order augmented-Lagrangian solver
used on the streaming path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import _conic as cn
from .errors import Diverged, DimMismatch
from .problem import (
    FREE,
    INFEASIBLE,
    ITER_LIMIT,
    OPTIMAL,
    EvidenceProblem,
    Solution,
    robust_violation,
)
from .uncertainty import DNormSet, EllipsoidSet, PolyhedralSet, dual_certificate

U_FLOOR = 1e-9
FAST_TOL = 1e-9


@dataclass(eq=False)
class SocpInstance:
    prob: EvidenceProblem
    perspective: bool = True

    @property
    def M(self) -> int:
        return self.prob.M

    def u_bounds(self):
        uf = self.prob.u_fixed
        return np.where(uf == FREE, 0.0, uf).astype(float), np.where(uf == FREE, 1.0, uf).astype(float)

    def b_bounds(self):
        bf = self.prob.b_fixed
        return np.where(bf == FREE, 0.0, bf).astype(float), np.where(bf == FREE, 1.0, bf).astype(float)


def build_socp(prob: EvidenceProblem, perspective: bool = True) -> SocpInstance:
    return SocpInstance(prob, perspective)


def relaxed_objective(prob: EvidenceProblem, mu, phi=None) -> float:
    """Relaxation objective; phi=None means the box form with ||mu||^2."""
    mu = np.asarray(mu, dtype=float)
    quad = mu @ mu if phi is None else float(np.sum(phi))
    return float((quad - 2.0 * mu @ prob.x_tilde) / (2.0 * prob.sigma2))


# -- closed-form path -------------------------------------------------------------

def _coordinate_model(prob: EvidenceProblem, perspective: bool):
    """Per-coordinate interval [lo, hi] for mu and whether the envelope cost applies."""
    M = prob.M
    rL, rU = prob.rho_L, prob.rho_U
    lo, hi = np.full(M, -rU), np.full(M, rU)
    env = np.zeros(M, dtype=bool)
    sign = np.zeros(M)
    uf, bf = prob.u_fixed, prob.b_fixed
    for m in range(M):
        if uf[m] == 0:
            lo[m] = hi[m] = 0.0
            continue
        if bf[m] == FREE:
            continue
        s = 1.0 if bf[m] == 0 else -1.0
        sign[m] = s
        a = rL if uf[m] == 1 else 0.0
        lo[m], hi[m] = (a, rU) if s > 0 else (-rU, -a)
        env[m] = perspective and uf[m] == FREE
    return lo, hi, env, sign


def _separable_minimiser(prob: EvidenceProblem, lo, hi, env, sign) -> np.ndarray:
    x = prob.x_tilde
    mu = np.clip(x, lo, hi)
    for m in np.flatnonzero(env):
        xs = sign[m] * x[m]
        y = 0.0 if xs <= 0.5 * prob.rho_L else min(max(xs, prob.rho_L), prob.rho_U)
        mu[m] = sign[m] * y
    return mu


def _lift(prob: EvidenceProblem, mu, perspective: bool):
    """A relaxed point (mu+, mu-, u, b, phi) consistent with mu and the node fixings."""
    rL, rU = prob.rho_L, prob.rho_U
    uf, bf = prob.u_fixed, prob.b_fixed
    M = prob.M
    mp, mm, u, b, phi = (np.zeros(M) for _ in range(5))
    for m in range(M):
        a = abs(mu[m])
        if uf[m] == 0:
            b[m] = 0.0 if bf[m] == FREE else bf[m]
            continue
        if bf[m] == FREE:
            u[m] = 1.0 if (uf[m] == 1 or a > 0) else 0.0
            S = max(a, rL * u[m])
            mp[m], mm[m] = 0.5 * (S + mu[m]), 0.5 * (S - mu[m])
            b[m] = mm[m] / rU
            phi[m] = mu[m] ** 2
        else:
            b[m] = bf[m]
            mp[m], mm[m] = max(mu[m], 0.0), max(-mu[m], 0.0)
            u[m] = 1.0 if uf[m] == 1 else min(1.0, a / rL)
            if perspective and u[m] > 0:
                phi[m] = mu[m] ** 2 / u[m]
            else:
                phi[m] = mu[m] ** 2
    return mp, mm, u, b, phi


def _duals_for(prob: EvidenceProblem, mu):
    out = []
    for c in prob.constraints:
        if isinstance(c.set, PolyhedralSet):
            out.append((dual_certificate(c.set, mu), dual_certificate(c.set, -mu)))
        else:
            out.append(None)
    return out


def _fast_relaxation(prob: EvidenceProblem, perspective: bool) -> Optional[Solution]:
    lo, hi, env, sign = _coordinate_model(prob, perspective)
    mu = _separable_minimiser(prob, lo, hi, env, sign)
    if robust_violation(prob, mu) > FAST_TOL:
        return None
    mp, mm, u, b, phi = _lift(prob, mu, perspective)
    obj = relaxed_objective(prob, mu, phi if perspective else None)
    return Solution(mp, mm, u, b, _duals_for(prob, mu), phi, obj, obj, OPTIMAL,
                    info={"path": "closed-form"})


# -- conic path -------------------------------------------------------------------

def _conic_model(inst: SocpInstance):
    prob = inst.prob
    M = prob.M
    rL, rU = prob.rho_L, prob.rho_U
    s2 = prob.sigma2
    x = prob.x_tilde
    mdl = cn.ConicModel()
    ip, im, iu, ib = (mdl.add_var(M) for _ in range(4))
    ulo, uhi = inst.u_bounds()
    blo, bhi = inst.b_bounds()
    for m in range(M):
        mdl.ge(cn.var(ip[m]))
        mdl.ge(cn.var(im[m]))
        for idx, lo_, hi_ in ((iu[m], ulo[m], uhi[m]), (ib[m], blo[m], bhi[m])):
            if lo_ == hi_:
                mdl.eq(cn.var(idx) - lo_)
            else:
                mdl.ge(cn.var(idx) - lo_)
                mdl.ge(hi_ - cn.var(idx))
        S = cn.var(ip[m]) + cn.var(im[m])
        mdl.ge(S - rL * cn.var(iu[m]))
        mdl.ge(rU * cn.var(iu[m]) - S)
        mdl.ge(rU - rU * cn.var(ib[m]) - cn.var(ip[m]))
        mdl.ge(rU * cn.var(ib[m]) - cn.var(im[m]))

    mdl.linear_cost(ip, -x / s2)
    mdl.linear_cost(im, x / s2)
    iphi = None
    if inst.perspective:
        iphi = mdl.add_var(M)
        mdl.linear_cost(iphi, np.full(M, 0.5 / s2))
        for m in range(M):
            f, u = cn.var(iphi[m]), cn.var(iu[m])
            mdl.soc(0.5 * (f + u), [cn.var(ip[m]) - cn.var(im[m]), 0.5 * (f - u)])
    else:
        r = np.concatenate([ip, im, ip])
        c = np.concatenate([ip, im, im])
        v = np.concatenate([np.full(M, 1.0 / s2), np.full(M, 1.0 / s2), np.full(M, -1.0 / s2)])
        mdl.quad_cost(r, c, v)

    mu_expr = [cn.var(ip[m]) - cn.var(im[m]) for m in range(M)]
    pidx = []
    for c in prob.constraints:
        st, eps = c.set, c.epsilon
        if isinstance(st, PolyhedralSet):
            blocks = []
            for side in (1.0, -1.0):
                ipd = mdl.add_var(st.R)
                for r_ in range(st.R):
                    mdl.ge(cn.var(ipd[r_]))
                for m in range(M):
                    mdl.eq(cn.dot(st.D[:, m], ipd) - side * mu_expr[m])
                mdl.ge(eps - cn.dot(st.d, ipd))
                blocks.append(ipd)
            pidx.append(tuple(blocks))
            continue
        pidx.append(None)
        lin = sum((st.center[m] * mu_expr[m] for m in range(M)), cn.Expr())
        if isinstance(st, EllipsoidSet):
            for side in (1.0, -1.0):
                head = eps - side * lin
                if st.radius > 0:
                    mdl.soc(head, [st.radius * e for e in mu_expr])
                else:
                    mdl.ge(head)
        elif isinstance(st, DNormSet):
            if st.kappa == 0 or st.u_hat == 0:
                for side in (1.0, -1.0):
                    mdl.ge(eps - side * lin)
                continue
            iw = mdl.add_var(1)
            iz = mdl.add_var(M)
            w = cn.var(iw[0])
            for m in range(M):
                mdl.ge(cn.var(iz[m]))
                mdl.ge(cn.var(iz[m]) + w - mu_expr[m])
                mdl.ge(cn.var(iz[m]) + w + mu_expr[m])
            budget = st.kappa * w + cn.dot(np.ones(M), iz)
            for side in (1.0, -1.0):
                mdl.ge(eps - side * lin - st.u_hat * budget)
        else:
            raise TypeError(f"unsupported set {type(st).__name__}")
    return mdl, (ip, im, iu, ib, iphi, pidx)


def _conic_relaxation(inst: SocpInstance) -> Solution:
    prob = inst.prob
    mdl, (ip, im, iu, ib, iphi, pidx) = _conic_model(inst)
    res = mdl.solve()
    M = prob.M
    if res.status == "infeasible":
        z = np.zeros(M)
        return Solution(z, z, z, z, [], z, np.inf, np.inf, INFEASIBLE, info={"path": "conic"})
    xz = res.x
    mp, mm = np.maximum(xz[ip], 0.0), np.maximum(xz[im], 0.0)
    u, b = np.clip(xz[iu], 0.0, 1.0), np.clip(xz[ib], 0.0, 1.0)
    mu = mp - mm
    phi = np.maximum(xz[iphi], 0.0) if iphi is not None else mu * mu
    duals = [None if blk is None else tuple(np.maximum(xz[k], 0.0) for k in blk) for blk in pidx]
    obj = relaxed_objective(prob, mu, phi if inst.perspective else None)
    # res.obj is the certified value; the recomputed one can differ by clipping noise
    bound = min(obj, float(res.obj))
    return Solution(mp, mm, u, b, duals, phi, float(res.obj), bound, OPTIMAL,
                    info={"path": "conic", "conic_status": res.status})


def socp_relaxation(prob, perspective: bool = True, fast: bool = True) -> Solution:
    """Optimal value and point of the perspective (or box) relaxation at this node."""
    inst = prob if isinstance(prob, SocpInstance) else SocpInstance(prob, perspective)
    if fast:
        sol = _fast_relaxation(inst.prob, inst.perspective)
        if sol is not None:
            return sol
    return _conic_relaxation(inst)


def box_relaxation(prob, fast: bool = True) -> Solution:
    return socp_relaxation(prob, perspective=False, fast=fast)


def box_relaxation_bound(prob: EvidenceProblem) -> float:
    """Lower bound from relaxing u, b to [0, 1] without perspective strengthening."""
    return box_relaxation(prob).objective


# -- first-order solver -----------------------------------------------------------

@dataclass
class SolverSchedule:
    """Per-layer step sizes and stopping rules of the unrolled first-order solver.

    Layer k of an outer round takes up to ``max_inner`` projected gradient
    steps of length ``primal_steps[k]`` (in the diagonally scaled metric) on
    the augmented Lagrangian with penalty weight ``dual_steps[k]``, then
    moves the multipliers by ``dual_steps[k] * g``.
    """

    primal_steps: Sequence[float] = field(default_factory=lambda: [1.0] * 10)
    dual_steps: Sequence[float] = field(default_factory=lambda: [10.0] * 10)
    K: int = 10
    eps_stop: float = 1e-4
    max_inner: int = 50
    max_outer: int = 200
    kkt_tol: float = 1e-4
    backtrack: bool = True
    max_halvings: int = 20
    momentum: bool = True

    def __post_init__(self):
        self.primal_steps = np.asarray(self.primal_steps, dtype=float)
        self.dual_steps = np.asarray(self.dual_steps, dtype=float)
        if self.primal_steps.size != self.K or self.dual_steps.size != self.K:
            raise ValueError(f"need K={self.K} primal and dual steps")
        if np.any(self.primal_steps <= 0) or np.any(self.dual_steps <= 0):
            raise ValueError("step sizes must be positive")
        if not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")

    @classmethod
    def geometric(cls, primal0=0.05, primal_decay=0.9, dual0=0.1, dual_decay=0.95, K=10, **kw):
        return cls([primal0 * primal_decay ** k for k in range(K)],
                   [dual0 * dual_decay ** k for k in range(K)], K=K, **kw)

    @classmethod
    def coarse(cls, **kw):
        """Geometric decay 0.05 * 0.9^k / 0.1 * 0.95^k with a 1% stopping rule."""
        opts = dict(eps_stop=0.01)
        opts.update(kw)
        return cls.geometric(0.05, 0.9, 0.1, 0.95, K=10, **opts)

    @classmethod
    def precise(cls, **kw):
        """Slow but accurate settings (about 1e-4 on the objective) for value checks."""
        opts = dict(eps_stop=1e-7, max_inner=100, max_outer=400, kkt_tol=1e-6)
        opts.update(kw)
        return cls.geometric(primal0=1.0, primal_decay=1.0, dual0=10.0, dual_decay=1.0, K=1, **opts)


@dataclass
class LagrangianState:
    primal: np.ndarray
    multipliers: dict
    loss: np.ndarray


class _Layout:
    """Flat variable layout shared by every instance in a batch."""

    def __init__(self, prob: EvidenceProblem):
        M = prob.M
        self.M = M
        n = 5 * M
        self.p = []
        self.lift = []
        # boxes share one |mu| lift: their support is c^T mu + w^T |mu|
        self.abs = None
        if any(isinstance(c.set, PolyhedralSet) and c.set.is_box for c in prob.constraints):
            self.abs = n
            n += M
        for c in prob.constraints:
            st = c.set
            if isinstance(st, PolyhedralSet) and st.is_box:
                self.p.append(None)
                self.lift.append(None)
            elif isinstance(st, PolyhedralSet):
                self.p.append((n, n + st.R))
                n += 2 * st.R
                self.lift.append(None)
            elif isinstance(st, DNormSet) and st.kappa > 0 and st.u_hat > 0:
                self.p.append(None)
                self.lift.append(n)
                n += M + 1
            else:
                self.p.append(None)
                self.lift.append(None)
        self.n = n

    def sl(self, k):
        return slice(k * self.M, (k + 1) * self.M)

    def signature(self, prob):
        sig = [prob.M]
        for c in prob.constraints:
            st = c.set
            sig.append((type(st).__name__, getattr(st, "R", None), getattr(st, "kappa", None),
                        getattr(st, "u_hat", 1.0) > 0, getattr(st, "is_box", False)))
        return tuple(sig)


MP, MM, U, B_, PHI = range(5)


def _linear_rows(prob: EvidenceProblem, lay: _Layout):
    """Rows a^T z <= c of the relaxation, as COO triplets plus rhs."""
    M = prob.M
    rL, rU = prob.rho_L, prob.rho_U
    ri, ci, vi, rhs = [], [], [], []

    def row(cols, vals, c):
        r = len(rhs)
        ri.extend([r] * len(cols))
        ci.extend(cols)
        vi.extend(vals)
        rhs.append(c)

    mp = lambda m: MP * M + m
    mm = lambda m: MM * M + m
    uu = lambda m: U * M + m
    bb = lambda m: B_ * M + m
    for m in range(M):
        row([uu(m), mp(m), mm(m)], [rL, -1.0, -1.0], 0.0)          # g3
        row([mp(m), mm(m), uu(m)], [1.0, 1.0, -rU], 0.0)           # g4
        row([mp(m), bb(m)], [1.0, rU], rU)                         # g5
        row([mm(m), bb(m)], [1.0, -rU], 0.0)                       # g6
    if lay.abs is not None:
        for m in range(M):
            row([mp(m), mm(m), lay.abs + m], [1.0, -1.0, -1.0], 0.0)
            row([mp(m), mm(m), lay.abs + m], [-1.0, 1.0, -1.0], 0.0)
    for c, pr, lf in zip(prob.constraints, lay.p, lay.lift):
        st, eps = c.set, c.epsilon
        if isinstance(st, PolyhedralSet) and st.is_box:
            mid, half = 0.5 * (st.lo + st.hi), 0.5 * (st.hi - st.lo)
            for side in (1.0, -1.0):
                cols = [mp(m) for m in range(M)] + [mm(m) for m in range(M)] + [lay.abs + m for m in range(M)]
                row(cols, list(side * mid) + list(-side * mid) + list(half), eps)
        elif pr is not None:
            R = st.R
            for side, off in zip((1.0, -1.0), pr):
                pcols = list(range(off, off + R))
                row(pcols, list(st.d), eps)                        # g2
                for m in range(M):
                    nz = [j for j in range(R) if st.D[j, m] != 0]
                    cols = [off + j for j in nz] + [mp(m), mm(m)]
                    vals = [st.D[j, m] for j in nz]
                    row(cols, vals + [-side, side], 0.0)           # D^T p - side mu <= 0
                    row(cols, [-v for v in vals] + [side, -side], 0.0)
        elif isinstance(st, DNormSet):
            if lf is None:
                for side in (1.0, -1.0):
                    row([mp(m) for m in range(M)] + [mm(m) for m in range(M)],
                        list(side * st.center) + list(-side * st.center), eps)
                continue
            w, z0 = lf, lf + 1
            for m in range(M):
                row([mp(m), mm(m), w, z0 + m], [1.0, -1.0, -1.0, -1.0], 0.0)
                row([mp(m), mm(m), w, z0 + m], [-1.0, 1.0, -1.0, -1.0], 0.0)
            for side in (1.0, -1.0):
                cols = [mp(m) for m in range(M)] + [mm(m) for m in range(M)] + [w] + [z0 + m for m in range(M)]
                vals = list(side * st.center) + list(-side * st.center) + [st.u_hat * st.kappa] + [st.u_hat] * M
                row(cols, vals, eps)
    return np.array(ri), np.array(ci), np.array(vi, dtype=float), np.array(rhs, dtype=float)


class _Batch:
    """B instances with one layout: block-diagonal linear rows plus cone and ball rows."""

    def __init__(self, probs: List[EvidenceProblem]):
        import scipy.sparse as sp

        p0 = probs[0]
        lay = _Layout(p0)
        sig = lay.signature(p0)
        for p in probs:
            if lay.signature(p) != sig:
                raise DimMismatch("batched instances must share M, set kinds and set shapes")
        self.lay, self.B, self.M, self.n = lay, len(probs), p0.M, lay.n
        B, M, n = self.B, self.M, self.n
        rows, cols, vals, rhs = [], [], [], []
        nr = None
        for j, p in enumerate(probs):
            r, c, v, b = _linear_rows(p, lay)
            nr = b.size
            rows.append(r + j * nr)
            cols.append(c + j * n)
            vals.append(v)
            rhs.append(b)
        self.nr = nr
        self.A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(B * nr, B * n))
        self.AT = self.A.T.tocsr()
        self.c = np.stack(rhs)
        colsq = np.asarray(self.A.multiply(self.A).sum(axis=0)).reshape(B, n)

        self.x = np.stack([p.x_tilde for p in probs])
        self.s2 = np.array([p.sigma2 for p in probs])[:, None]
        self.q = np.zeros((B, n))
        self.q[:, lay.sl(MP)] = -self.x / self.s2
        self.q[:, lay.sl(MM)] = self.x / self.s2
        self.q[:, lay.sl(PHI)] = 0.5 / self.s2

        rU = np.array([p.rho_U for p in probs])[:, None]
        self.lo = np.zeros((B, n))
        self.hi = np.full((B, n), np.inf)
        for k in (MP, MM):
            self.hi[:, lay.sl(k)] = rU
        uf = np.stack([p.u_fixed for p in probs])
        bf = np.stack([p.b_fixed for p in probs])
        self.lo[:, lay.sl(U)] = np.where(uf == FREE, 0.0, uf)
        self.hi[:, lay.sl(U)] = np.where(uf == FREE, 1.0, uf)
        self.lo[:, lay.sl(B_)] = np.where(bf == FREE, 0.0, bf)
        self.hi[:, lay.sl(B_)] = np.where(bf == FREE, 1.0, bf)
        self.hi[:, lay.sl(PHI)] = rU ** 2
        if lay.abs is not None:
            self.hi[:, lay.abs:lay.abs + M] = rU
        for lf in lay.lift:
            if lf is not None:
                self.lo[:, lf:lf + M + 1] = 0.0
                self.hi[:, lf:lf + M + 1] = rU

        self.ell = []
        for i, c in enumerate(p0.constraints):
            if isinstance(c.set, EllipsoidSet):
                self.ell.append((np.stack([p.constraints[i].set.center for p in probs]),
                                 np.array([p.constraints[i].set.radius for p in probs]),
                                 np.array([p.constraints[i].epsilon for p in probs])))
        ellsq = np.zeros((B, n))
        for cen, r, _ in self.ell:
            a = 2.0 * (cen ** 2 + r[:, None] ** 2)
            ellsq[:, lay.sl(MP)] += a
            ellsq[:, lay.sl(MM)] += a
        # diagonal curvature estimate per unit penalty weight (g1 adds O(1) on mp, mm, u, phi)
        self.curv = colsq + ellsq
        for k in (MP, MM, U, PHI):
            self.curv[:, lay.sl(k)] += 1.0

    def take(self, idx) -> "_Batch":
        """Sub-batch of the instances at positions ``idx`` (same layout)."""
        idx = np.asarray(idx)
        sub = object.__new__(_Batch)
        sub.__dict__.update(self.__dict__)
        sub.B = idx.size
        ridx = (idx[:, None] * self.nr + np.arange(self.nr)).ravel()
        cidx = (idx[:, None] * self.n + np.arange(self.n)).ravel()
        sub.A = self.A[ridx][:, cidx].tocsr()
        sub.AT = sub.A.T.tocsr()
        for name in ("c", "x", "s2", "q", "lo", "hi", "curv"):
            setattr(sub, name, getattr(self, name)[idx])
        sub.ell = [(cen[idx], r[idx], eps[idx]) for cen, r, eps in self.ell]
        return sub

    # -- evaluations ---------------------------------------------------------------
    def mu(self, z):
        return z[:, self.lay.sl(MP)] - z[:, self.lay.sl(MM)]

    def rows(self, z):
        """(g_lin, g1, g_ell, cone norm, mu)."""
        lay = self.lay
        glin = (self.A @ z.ravel()).reshape(self.B, self.nr) - self.c
        mu = self.mu(z)
        u, phi = z[:, lay.sl(U)], z[:, lay.sl(PHI)]
        nrm = np.sqrt(mu ** 2 + (0.5 * (phi - u)) ** 2)
        g1 = nrm - 0.5 * (phi + u)
        if self.ell:
            mn = np.linalg.norm(mu, axis=1)
            gell = np.stack([np.stack([(mu * cen).sum(1), -(mu * cen).sum(1)], 1) + (r * mn)[:, None]
                             - eps[:, None] for cen, r, eps in self.ell], 1)
        else:
            gell = np.zeros((self.B, 0, 2))
        return glin, g1, gell, nrm, mu

    def loss(self, z, lam, rho):
        glin, g1, gell, _, _ = self.rows(z)
        r = rho[:, None]
        L = (self.q * z).sum(1)
        for g, l in ((glin, lam["lin"]), (g1, lam["g1"])):
            L = L + (np.maximum(0.0, l + r * g) ** 2 - l ** 2).sum(1) / (2.0 * rho)
        if gell.size:
            l = lam["ell"]
            L = L + (np.maximum(0.0, l + rho[:, None, None] * gell) ** 2 - l ** 2).sum((1, 2)) / (2.0 * rho)
        return L

    def grad(self, z, lam, rho):
        lay = self.lay
        glin, g1, gell, nrm, mu = self.rows(z)
        r = rho[:, None]
        wl = np.maximum(0.0, lam["lin"] + r * glin)
        G = self.q + (self.AT @ wl.ravel()).reshape(self.B, self.n)
        w1 = np.maximum(0.0, lam["g1"] + r * g1)
        u, phi = z[:, lay.sl(U)], z[:, lay.sl(PHI)]
        nn = np.maximum(nrm, 1e-12)
        gmu = w1 * mu / nn
        G[:, lay.sl(PHI)] += w1 * ((phi - u) / (4 * nn) - 0.5)
        G[:, lay.sl(U)] += w1 * (-(phi - u) / (4 * nn) - 0.5)
        if gell.size:
            we = np.maximum(0.0, lam["ell"] + rho[:, None, None] * gell)
            mn = np.linalg.norm(mu, axis=1, keepdims=True)
            unit = np.where(mn > 0, mu / np.maximum(mn, 1e-300), 0.0)
            for i, (cen, rad, _) in enumerate(self.ell):
                gmu += (we[:, i, 0] - we[:, i, 1])[:, None] * cen + ((we[:, i, 0] + we[:, i, 1]) * rad)[:, None] * unit
        G[:, lay.sl(MP)] += gmu
        G[:, lay.sl(MM)] -= gmu
        return G

    def project(self, z):
        return np.minimum(np.maximum(z, self.lo), self.hi)

    def init(self):
        return self.project(np.zeros((self.B, self.n)))

    def zero_multipliers(self):
        return {"lin": np.zeros((self.B, self.nr)), "g1": np.zeros((self.B, self.M)),
                "ell": np.zeros((self.B, len(self.ell), 2))}

    def kkt(self, z, lam):
        """Max of primal violation, complementarity and projected-gradient residual."""
        glin, g1, gell, _, _ = self.rows(z)
        viol = np.maximum(np.maximum(glin, 0).max(1), np.maximum(g1, 0).max(1))
        comp = np.maximum(np.abs(lam["lin"] * glin).max(1), np.abs(lam["g1"] * g1).max(1))
        if gell.size:
            viol = np.maximum(viol, np.maximum(gell, 0).max((1, 2)))
            comp = np.maximum(comp, np.abs(lam["ell"] * gell).max((1, 2)))
        G = self.grad(z, lam, np.full(self.B, 1e-300))
        pg = np.abs(self.project(z - G) - z).max(1)
        return np.maximum(np.maximum(viol, comp), pg)


def solve_lagrangian(inst, sched: Optional[SolverSchedule] = None, batch=None) -> List[Solution]:
    """Batched augmented-Lagrangian solve of the perspective relaxation.

    ``batch`` is a list of problems (or SocpInstances) solved together; when
    omitted only ``inst`` is solved.  Each instance is frozen as soon as its
    own stopping rule fires, so results do not depend on batch company.
    """
    sched = SolverSchedule() if sched is None else sched
    items = [inst] if batch is None else list(batch)
    probs = [it.prob if isinstance(it, SocpInstance) else it for it in items]
    full = _Batch(probs)
    B = full.B
    z_all = full.init()
    lam_all = full.zero_multipliers()
    status = np.full(B, ITER_LIMIT, dtype=object)
    rounds = np.zeros(B, dtype=int)
    kkt = np.full(B, np.inf)

    # work only on unfrozen instances; the sub-batch is rebuilt when it halves
    idx = np.arange(B)
    bt, z, lam = full, z_all.copy(), {k: v.copy() for k, v in lam_all.items()}
    active = np.ones(B, dtype=bool)

    def store():
        z_all[idx] = z
        for key in lam:
            lam_all[key][idx] = lam[key]

    for outer in range(sched.max_outer):
        if 2 * active.sum() <= idx.size and active.any():
            store()
            keep = np.flatnonzero(active)
            bt, idx = bt.take(keep), idx[keep]
            z = z[keep]
            lam = {key: v[keep] for key, v in lam.items()}
            active = np.ones(idx.size, dtype=bool)
        Bs = idx.size
        k = outer % sched.K
        rho = np.full(Bs, sched.dual_steps[k])
        scale = sched.primal_steps[k] / (1e-3 + rho[:, None] * bt.curv)
        z_round = z.copy()
        on = active.copy()
        L = bt.loss(z, lam, rho)
        z_prev = z.copy()
        it = np.zeros(Bs)
        for _ in range(sched.max_inner):
            if not on.any():
                break
            it += on
            if sched.momentum:
                beta = ((it - 1) / (it + 2))[:, None]
                y = bt.project(z + beta * (z - z_prev))
            else:
                y = z
            cand = bt.project(y - scale * bt.grad(y, lam, rho))
            Lc = bt.loss(cand, lam, rho)
            bad = on & ~(Lc <= L)
            if sched.backtrack and bad.any():
                # momentum step rejected: restart from z with a plain step, halving as needed
                t = np.ones(Bs)
                Gz = bt.grad(z, lam, rho)
                it = np.where(bad, 0, it)
                for _h in range(sched.max_halvings + 1):
                    c2 = bt.project(z - (t[:, None] * scale) * Gz)
                    L2 = bt.loss(c2, lam, rho)
                    cand = np.where(bad[:, None], c2, cand)
                    Lc = np.where(bad, L2, Lc)
                    bad = bad & ~(Lc <= L)
                    if not bad.any():
                        break
                    t = np.where(bad, 0.5 * t, t)
            accept = on & ~bad if sched.backtrack else on
            if np.any(~np.isfinite(Lc[accept])) or np.any(np.abs(Lc[accept]) > 1e12):
                raise Diverged("augmented Lagrangian exceeded 1e12; reduce the step sizes")
            z_prev = np.where(accept[:, None], z, z_prev)
            new = np.where(accept[:, None], cand, z)
            rel = np.linalg.norm(new - z, axis=1) / np.maximum(1.0, np.linalg.norm(z, axis=1))
            z = new
            L = np.where(accept, Lc, L)
            on &= accept & ~(rel < sched.eps_stop)
        glin, g1, gell, _, _ = bt.rows(z)
        a = active[:, None]
        lam["lin"] = np.where(a, np.maximum(0.0, lam["lin"] + rho[:, None] * glin), lam["lin"])
        lam["g1"] = np.where(a, np.maximum(0.0, lam["g1"] + rho[:, None] * g1), lam["g1"])
        if gell.size:
            lam["ell"] = np.where(a[:, :, None], np.maximum(0.0, lam["ell"] + rho[:, None, None] * gell),
                                  lam["ell"])
        rounds[idx] += active
        kk = bt.kkt(z, lam)
        kkt[idx] = np.where(active, kk, kkt[idx])
        done = active & (kk < sched.kkt_tol)
        status[idx[done]] = OPTIMAL
        change = np.linalg.norm(z - z_round, axis=1) / np.maximum(1.0, np.linalg.norm(z_round, axis=1))
        settled = active & (change < sched.eps_stop)
        active &= ~(done | settled)
        if not active.any():
            break
    store()
    z, bt = z_all, full

    obj = (bt.q * z).sum(1)
    lay = bt.lay
    sols = []
    for j, p in enumerate(probs):
        mp, mm = z[j, lay.sl(MP)].copy(), z[j, lay.sl(MM)].copy()
        duals = []
        for c, pr in zip(p.constraints, lay.p):
            if pr is not None:
                R = pr[1] - pr[0]
                duals.append((z[j, pr[0]:pr[0] + R].copy(), z[j, pr[1]:pr[1] + R].copy()))
            elif isinstance(c.set, PolyhedralSet):
                duals.append((dual_certificate(c.set, mp - mm), dual_certificate(c.set, mm - mp)))
            else:
                duals.append(None)
        sols.append(Solution(mp, mm, z[j, lay.sl(U)].copy(), z[j, lay.sl(B_)].copy(), duals,
                             z[j, lay.sl(PHI)].copy(), float(obj[j]), -p.energy_bound(), status[j],
                             nodes=int(rounds[j]),
                             info={"kkt": float(kkt[j]), "path": "lagrangian",
                                   "robust_violation": robust_violation(p, mp - mm)}))
    return sols


def lagrangian_state(inst, sched=None) -> LagrangianState:
    """Initial primal point, zero multipliers and loss (inspection helper)."""
    prob = inst.prob if isinstance(inst, SocpInstance) else inst
    sched = SolverSchedule() if sched is None else sched
    bt = _Batch([prob])
    z = bt.init()
    lam = bt.zero_multipliers()
    return LagrangianState(z[0], lam, bt.loss(z, lam, np.full(1, sched.dual_steps[0])))


def _clamp_evidence(prob, obj):
    return float(min(max(-obj, 0.0), prob.energy_bound()))


def v_t_relaxed(prob: EvidenceProblem, sched: Optional[SolverSchedule] = None) -> float:
    """Evidence approximated by the negated relaxation optimum, clamped to [0, ||x~||^2/(2 sigma2)]."""
    return _clamp_evidence(prob, solve_lagrangian(prob, sched)[0].objective)


def v_t_relaxed_batch(probs, sched: Optional[SolverSchedule] = None) -> np.ndarray:
    sols = solve_lagrangian(None, sched, batch=list(probs))
    return np.array([_clamp_evidence(p, s.objective) for p, s in zip(probs, sols)])
