"""Exact solution of the per-step sparse-change problem.

Two independent routes:

* ``solve_bruteforce`` enumerates every (support, sign) leaf and solves the
  convex QP in mu-space with the robust constraint written directly for the
  known signs (linear rows for boxes and vertex sets, subset rows for D-norm
  sets, one cone per side for balls);
* ``branch_and_bound`` searches over (u, b) using relaxation bounds on the
  lifted (mu+, mu-, u, b, phi, p) formulation.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _conic as cn
from .errors import TooLarge
from .gllr_relaxed import socp_relaxation
from .problem import (
    BOUND_ONLY,
    COMP_TOL,
    FEAS_TOL,
    FREE,
    INFEASIBLE,
    ITER_LIMIT,
    OPTIMAL,
    EvidenceProblem,
    Solution,
    robust_violation,
    solution_from_mu,
)
from .uncertainty import DNormSet, EllipsoidSet, PolyhedralSet

BRUTE_MAX_M = 8
NODE_LIMIT = 100_000


# -- brute force ------------------------------------------------------------------

def _leaf_choices(prob: EvidenceProblem):
    """Allowed per-coordinate states: 0 (off), +1, -1."""
    out = []
    for m in range(prob.M):
        ch = []
        if prob.u_fixed[m] != 1:
            ch.append(0)
        if prob.u_fixed[m] != 0:
            if prob.b_fixed[m] != 1:
                ch.append(1)
            if prob.b_fixed[m] != 0:
                ch.append(-1)
        out.append(ch)
    return out


def _coordinate_gain(prob: EvidenceProblem, s: int, m: int) -> float:
    """min over s*mu in [rho_L, rho_U] of mu^2 - 2 mu x_m (unscaled)."""
    if s == 0:
        return 0.0
    y = min(max(s * prob.x_tilde[m], prob.rho_L), prob.rho_U)
    return y * y - 2.0 * s * y * prob.x_tilde[m]


def _leaf_qp(prob: EvidenceProblem, signs: np.ndarray) -> Optional[np.ndarray]:
    """Minimise the objective with sign pattern ``signs`` fixed; None if infeasible."""
    S = np.flatnonzero(signs)
    M = prob.M
    if S.size == 0:
        return np.zeros(M)
    s = signs[S].astype(float)
    k = S.size
    mdl = cn.ConicModel()
    iv = mdl.add_var(k)
    mdl.quad_cost(iv, iv, np.full(k, 1.0 / prob.sigma2))
    mdl.linear_cost(iv, -prob.x_tilde[S] / prob.sigma2)
    for j in range(k):
        mdl.ge(s[j] * cn.var(iv[j]) - prob.rho_L)
        mdl.ge(prob.rho_U - s[j] * cn.var(iv[j]))
    for c in prob.constraints:
        st, eps = c.set, c.epsilon
        for side in (1.0, -1.0):
            if isinstance(st, PolyhedralSet):
                if st.is_box:
                    coef = np.where(side * s > 0, st.hi[S], st.lo[S])
                    mdl.ge(eps - side * cn.dot(coef, iv))
                elif st.vertices is not None:
                    for v in st.vertices:
                        mdl.ge(eps - side * cn.dot(v[S], iv))
                else:
                    ip = mdl.add_var(st.R)
                    for r in range(st.R):
                        mdl.ge(cn.var(ip[r]))
                    for m in range(M):
                        e = cn.dot(st.D[:, m], ip)
                        hit = np.flatnonzero(S == m)
                        if hit.size:
                            e = e - side * cn.var(iv[hit[0]])
                        mdl.eq(e)
                    mdl.ge(eps - cn.dot(st.d, ip))
            elif isinstance(st, EllipsoidSet):
                head = eps - side * cn.dot(st.center[S], iv)
                if st.radius > 0:
                    mdl.soc(head, [st.radius * cn.var(i) for i in iv])
                else:
                    mdl.ge(head)
            elif isinstance(st, DNormSet):
                lin = eps - side * cn.dot(st.center[S], iv)
                kap = min(st.kappa, k)
                if kap == 0 or st.u_hat == 0:
                    mdl.ge(lin)
                    continue
                for T in itertools.combinations(range(k), kap):
                    T = list(T)
                    mdl.ge(lin - st.u_hat * cn.dot(s[T], iv[T]))
            else:
                raise TypeError(f"unsupported set {type(st).__name__}")
    res = mdl.solve()
    if res.status == "infeasible":
        return None
    mu = np.zeros(M)
    mu[S] = res.x[iv]
    # keep magnitudes inside the band despite solver rounding
    mu[S] = s * np.clip(s * mu[S], prob.rho_L, prob.rho_U)
    return mu


def solve_bruteforce(prob: EvidenceProblem, max_m: int = BRUTE_MAX_M) -> Solution:
    """Global minimum by enumerating all 3^M (support, sign) leaves.

    Leaves are visited in order of their separable lower bound and skipped
    once that bound cannot beat the incumbent, which keeps M = 8 tractable.
    """
    if prob.M > max_m:
        raise TooLarge(f"brute force is limited to M <= {max_m}, got M={prob.M}")
    choices = _leaf_choices(prob)
    if any(len(c) == 0 for c in choices):
        return _infeasible(prob)
    gains = [{s: _coordinate_gain(prob, s, m) for s in ch} for m, ch in enumerate(choices)]
    leaves = np.array(list(itertools.product(*choices)), dtype=np.int8).reshape(-1, prob.M)
    lb = np.zeros(len(leaves))
    for m in range(prob.M):
        for s, g in gains[m].items():
            lb[leaves[:, m] == s] += g
    lb /= 2.0 * prob.sigma2
    order = np.argsort(lb, kind="stable")

    best, best_mu, solved = np.inf, None, 0
    for idx in order:
        if lb[idx] >= best - 1e-12:
            break
        mu = _leaf_qp(prob, leaves[idx])
        solved += 1
        if mu is None or robust_violation(prob, mu) > FEAS_TOL:
            continue
        obj = prob.objective(mu)
        if obj < best:
            best, best_mu = obj, mu
    if best_mu is None:
        assert np.any(prob.u_fixed == 1), "mu = 0 is always feasible without fixings"
        return _infeasible(prob)
    return solution_from_mu(prob, best_mu, OPTIMAL, nodes=solved)


def _infeasible(prob):
    z = np.zeros(prob.M)
    return Solution(z, z, z, z, [], z, np.inf, np.inf, INFEASIBLE)


# -- branch and bound -------------------------------------------------------------

def _integral_candidate(prob: EvidenceProblem, mu, tol: float = COMP_TOL):
    """(candidate mu or None, indices of coordinates that still need branching)."""
    a = np.abs(mu)
    bad = []
    cand = mu.copy()
    for m in range(prob.M):
        uf, bf = prob.u_fixed[m], prob.b_fixed[m]
        if a[m] <= tol:
            cand[m] = 0.0
            if uf == 1:
                bad.append(m)
        elif prob.rho_L - tol <= a[m] <= prob.rho_U + tol and uf != 0:
            if bf != FREE and np.sign(mu[m]) != (1.0 if bf == 0 else -1.0):
                bad.append(m)
            cand[m] = np.sign(mu[m]) * min(max(a[m], prob.rho_L), prob.rho_U)
        else:
            bad.append(m)
    return (None if bad else cand), bad


def _pick(prob: EvidenceProblem, mu, bad):
    """Most fractional implied u first (u-free coordinates), ties to larger |x~_m|."""
    u_free = [m for m in bad if prob.u_fixed[m] == FREE]
    pool = u_free if u_free else bad
    frac = lambda m: abs(min(abs(mu[m]) / prob.rho_L, 1.0) - 0.5)
    return min(pool, key=lambda m: (frac(m), -abs(prob.x_tilde[m]), m))


def _children(prob: EvidenceProblem, m: int):
    uf, bf = prob.u_fixed[m], prob.b_fixed[m]
    if uf == FREE and bf == FREE:
        # u = 1 with b free has the parent's relaxation, so split the sign at once
        return [prob.restrict(m, u=0), prob.restrict(m, u=1, b=0), prob.restrict(m, u=1, b=1)]
    if uf == FREE:
        return [prob.restrict(m, u=0), prob.restrict(m, u=1)]
    return [prob.restrict(m, b=0), prob.restrict(m, b=1)]


def _default_gap(best):
    return 1e-6 * (1.0 + abs(best)) if np.isfinite(best) else 1e-6


def branch_and_bound(
    prob: EvidenceProblem,
    relax: Optional[Callable[[EvidenceProblem], Solution]] = None,
    gap_tol: Optional[float] = None,
    node_limit: int = NODE_LIMIT,
    incumbent=None,
) -> Solution:
    """Best-bound-first branch and bound on (u, b).

    ``relax`` maps a (restricted) problem to a Solution whose ``bound`` is a
    valid lower bound; the perspective relaxation is the default.
    ``incumbent`` may carry a previous mu (e.g. last step's support) as the
    starting upper bound.  ``gap_tol=inf`` returns the root bound only.
    """
    relax = socp_relaxation if relax is None else relax
    best, best_mu = np.inf, None
    starts = [np.zeros(prob.M)] + ([] if incumbent is None else [np.asarray(incumbent, float)])
    for mu0 in starts:
        cand, bad = _integral_candidate(prob, mu0)
        if cand is not None and robust_violation(prob, cand) <= FEAS_TOL:
            obj = prob.objective(cand)
            if obj < best:
                best, best_mu = obj, cand

    root = relax(prob)
    nodes = 1
    if root.status == INFEASIBLE:
        return _infeasible(prob) if best_mu is None else solution_from_mu(prob, best_mu, OPTIMAL, best, nodes)
    if gap_tol is not None and np.isinf(gap_tol):
        mu = np.zeros(prob.M) if best_mu is None else best_mu
        sol = solution_from_mu(prob, mu, BOUND_ONLY, root.bound, nodes)
        sol.info["root"] = root
        return sol

    tie = itertools.count()
    heap = [(root.bound, next(tie), prob, root)]
    status, bound = OPTIMAL, None
    while heap:
        lb, _, node, rel = heapq.heappop(heap)
        tol = _default_gap(best) if gap_tol is None else gap_tol
        if lb >= best - tol:
            bound = lb
            break
        cand, bad = _integral_candidate(node, rel.mu)
        if cand is not None:
            if robust_violation(node, cand) <= FEAS_TOL:
                obj = prob.objective(cand)
                if obj < best:
                    best, best_mu = obj, cand
            continue
        if nodes >= node_limit:
            status, bound = ITER_LIMIT, lb
            break
        m = _pick(node, rel.mu, bad)
        for child in _children(node, m):
            r = relax(child)
            nodes += 1
            if r.status == INFEASIBLE:
                continue
            if r.bound < best - (_default_gap(best) if gap_tol is None else gap_tol):
                heapq.heappush(heap, (r.bound, next(tie), child, r))
    if bound is None:
        bound = best
    bound = min(bound, best)
    if best_mu is None:
        return _infeasible(prob)
    return solution_from_mu(prob, best_mu, status, bound, nodes)


# -- evidence ---------------------------------------------------------------------

@dataclass
class ExactConfig:
    method: str = "bnb"
    gap_tol: Optional[float] = None
    node_limit: int = NODE_LIMIT


def solve_exact(prob: EvidenceProblem, cfg: Optional[ExactConfig] = None, incumbent=None) -> Solution:
    cfg = ExactConfig() if cfg is None else cfg
    if cfg.method == "brute":
        return solve_bruteforce(prob)
    if cfg.method == "bnb":
        return branch_and_bound(prob, gap_tol=cfg.gap_tol, node_limit=cfg.node_limit, incumbent=incumbent)
    raise ValueError(f"unknown exact method {cfg.method!r}")


def v_t_exact(prob: EvidenceProblem, solver_cfg: Optional[ExactConfig] = None) -> float:
    """Per-step evidence: minus the exact minimum, never below zero."""
    sol = solve_exact(prob, solver_cfg)
    return max(0.0, -sol.objective)
