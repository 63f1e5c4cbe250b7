"""Per-step evidence problem data, solutions and an independent constraint checker."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import DimMismatch
from .model import SystemModel, orthogonal_projector, residual
from .uncertainty import (
    PolyhedralSet,
    RobustConstraintData,
    epsilon_guideline,
    max_linear,
)

COMP_TOL = 1e-7
FEAS_TOL = 1e-7

OPTIMAL = "Optimal"
BOUND_ONLY = "BoundOnly"
ITER_LIMIT = "IterLimit"
INFEASIBLE = "Infeasible"

FREE = -1


@dataclass(eq=False)
class EvidenceProblem:
    """One time step's robust sparse-change problem.

    ``u_fixed`` / ``b_fixed`` hold branching restrictions: -1 means free,
    0 or 1 means the binary is fixed to that value.  A plain problem has
    everything free.
    """

    x_tilde: np.ndarray
    rho_L: float
    rho_U: float
    sigma2: float
    constraints: List[RobustConstraintData]
    u_fixed: Optional[np.ndarray] = None
    b_fixed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x_tilde = np.asarray(self.x_tilde, dtype=float).ravel()
        M = self.x_tilde.size
        if not 0 < self.rho_L <= self.rho_U:
            raise ValueError(f"need 0 < rho_L <= rho_U, got {self.rho_L}, {self.rho_U}")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        self.rho_L, self.rho_U, self.sigma2 = float(self.rho_L), float(self.rho_U), float(self.sigma2)
        for c in self.constraints:
            if c.set.M != M:
                raise DimMismatch(f"set dimension {c.set.M} != M={M}")
        if self.u_fixed is None:
            self.u_fixed = np.full(M, FREE, dtype=np.int8)
        if self.b_fixed is None:
            self.b_fixed = np.full(M, FREE, dtype=np.int8)
        self.u_fixed = np.asarray(self.u_fixed, dtype=np.int8)
        self.b_fixed = np.asarray(self.b_fixed, dtype=np.int8)

    @property
    def M(self) -> int:
        return self.x_tilde.size

    @property
    def N(self) -> int:
        return len(self.constraints)

    def restrict(self, m: int, u: Optional[int] = None, b: Optional[int] = None) -> "EvidenceProblem":
        uf, bf = self.u_fixed.copy(), self.b_fixed.copy()
        if u is not None:
            uf[m] = u
        if b is not None:
            bf[m] = b
        return replace(self, u_fixed=uf, b_fixed=bf)

    def with_sigma2(self, sigma2: float) -> "EvidenceProblem":
        return replace(self, sigma2=sigma2)

    def objective(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        return float((mu @ mu - 2.0 * mu @ self.x_tilde) / (2.0 * self.sigma2))

    def energy_bound(self) -> float:
        """||x_tilde||^2 / (2 sigma2), the largest possible evidence."""
        return float(self.x_tilde @ self.x_tilde / (2.0 * self.sigma2))


@dataclass
class Solution:
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    u: np.ndarray
    b: np.ndarray
    duals: list
    phi: np.ndarray
    objective: float
    bound: float
    status: str
    nodes: int = 0
    info: dict = field(default_factory=dict)

    @property
    def mu(self) -> np.ndarray:
        return self.mu_plus - self.mu_minus


def solution_from_mu(prob: EvidenceProblem, mu, status=OPTIMAL, bound=None, nodes=0) -> Solution:
    """Integral solution record for a candidate mu (u, b, phi and duals derived from it)."""
    from .uncertainty import dual_certificate

    mu = np.asarray(mu, dtype=float)
    mp, mm = np.maximum(mu, 0.0), np.maximum(-mu, 0.0)
    u = (np.abs(mu) > COMP_TOL).astype(float)
    b = (mu < -COMP_TOL).astype(float)
    duals = []
    for c in prob.constraints:
        if isinstance(c.set, PolyhedralSet):
            duals.append((dual_certificate(c.set, mu), dual_certificate(c.set, -mu)))
        else:
            duals.append(None)
    obj = prob.objective(mu)
    return Solution(mp, mm, u, b, duals, mu * mu, obj, obj if bound is None else bound, status, nodes)


def robust_violation(prob: EvidenceProblem, mu) -> float:
    """Largest violation of max_{h in S_i} (+-h)^T mu <= eps_i over all columns and both sides."""
    worst = 0.0
    for c in prob.constraints:
        worst = max(worst, float(max_linear(c.set, mu)) - c.epsilon,
                    float(max_linear(c.set, -np.asarray(mu))) - c.epsilon)
    return worst


def check_solution(prob: EvidenceProblem, sol: Solution, feas_tol: float = FEAS_TOL,
                   comp_tol: float = COMP_TOL, integral: bool = True) -> List[str]:
    """Return a list of violated constraints of the mixed-integer problem (empty when feasible).

    Evaluated directly from the solution vectors; shares no code with the solvers.
    """
    problems = []
    mp, mm, u, b = sol.mu_plus, sol.mu_minus, sol.u, sol.b
    rL, rU = prob.rho_L, prob.rho_U
    if np.any(mp < -feas_tol) or np.any(mm < -feas_tol):
        problems.append("mu_plus/mu_minus negative")
    s = mp + mm
    if np.any(rL * u - s > feas_tol) or np.any(s - rU * u > feas_tol):
        problems.append("support band rho_L u <= mu+ + mu- <= rho_U u")
    if np.any(mp - rU * (1 - b) > feas_tol) or np.any(mm - rU * b > feas_tol):
        problems.append("big-M sign constraints")
    if np.any(u < -feas_tol) or np.any(u > 1 + feas_tol) or np.any(b < -feas_tol) or np.any(b > 1 + feas_tol):
        problems.append("binary out of [0, 1]")
    if integral:
        if np.any(np.minimum(np.abs(u), np.abs(1 - u)) > feas_tol) or \
                np.any(np.minimum(np.abs(b), np.abs(1 - b)) > feas_tol):
            problems.append("u or b not integral")
        if np.any(np.minimum(mp, mm) > comp_tol):
            problems.append("complementarity")
    fixed_u = prob.u_fixed >= 0
    if np.any(np.abs(u[fixed_u] - prob.u_fixed[fixed_u]) > feas_tol):
        problems.append("u violates node fixing")
    fixed_b = prob.b_fixed >= 0
    if np.any(np.abs(b[fixed_b] - prob.b_fixed[fixed_b]) > feas_tol):
        problems.append("b violates node fixing")
    mu = mp - mm
    for i, c in enumerate(prob.constraints):
        if max(max_linear(c.set, mu), max_linear(c.set, -mu)) > c.epsilon + feas_tol:
            problems.append(f"robust constraint {i}")
        if isinstance(c.set, PolyhedralSet) and sol.duals and sol.duals[i] is not None:
            for p, direction in zip(sol.duals[i], (mu, -mu)):
                if np.any(p < -feas_tol) or np.max(np.abs(c.set.D.T @ p - direction), initial=0) > 1e-6 \
                        or p @ c.set.d > c.epsilon + 1e-6:
                    problems.append(f"dual certificate {i}")
                    break
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(u > 1e-12, mu * mu / np.maximum(u, 1e-12), np.where(np.abs(mu) > feas_tol, np.inf, 0.0))
    if np.any(sol.phi < need - 1e-6 * (1 + np.where(np.isfinite(need), need, 0.0))):
        problems.append("perspective epigraph phi >= mu^2 / u")
    return problems


@dataclass
class EvidenceConfig:
    """Band limits and slack policy used to turn an observation into a problem."""

    rho_L: float
    rho_U: float
    epsilon: Optional[list] = None
    rho_H: Optional[float] = None


def build_problem(model: SystemModel, sets, x, cfg: EvidenceConfig, proj=None) -> EvidenceProblem:
    """Assemble the evidence problem for observation x.

    ``sets`` is one uncertainty set per column of H.  When ``cfg.epsilon`` is
    unset the slacks follow the diameter guideline with rho_H (default rho_U).
    """
    if len(sets) != model.N:
        raise DimMismatch(f"need {model.N} sets, got {len(sets)}")
    proj = orthogonal_projector(model) if proj is None else proj
    x_tilde = residual(proj, x)
    if cfg.epsilon is None:
        rho_H = cfg.rho_U if cfg.rho_H is None else cfg.rho_H
        eps = [epsilon_guideline(s, rho_H, model.M) for s in sets]
    else:
        eps = list(np.broadcast_to(np.asarray(cfg.epsilon, dtype=float), (model.N,)))
    cons = [RobustConstraintData(e, s, model.H[:, i].copy()) for i, (e, s) in enumerate(zip(eps, sets))]
    return EvidenceProblem(x_tilde, cfg.rho_L, cfg.rho_U, model.sigma2, cons)
