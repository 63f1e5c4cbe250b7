"""Column-wise uncertainty sets for the system matrix.

Each column h_i of H is only known to lie in a set S_i.  The robust
constraint on a candidate change vector mu is

    h_bar_i^T mu + max_{h in S_i} (h - h_bar_i)^T mu <= eps_i,

i.e. ``max_linear(S_i, mu) <= eps_i``.  ``support_function`` returns the
centred term max (h - h_bar)^T mu.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy.optimize import linprog

from .errors import DimMismatch, InfeasibleDual, InfeasibleSet, Unbounded

FEAS_TOL = 1e-8
VERTEX_ROW_LIMIT = 12


def _as_vec(v, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimMismatch(f"{name} must be 1-D, got shape {v.shape}")
    return v


@dataclass(eq=False)
class PolyhedralSet:
    """{h : D h <= d}.  ``center`` defaults to the box midpoint or Chebyshev centre."""

    D: np.ndarray
    d: np.ndarray
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        d = _as_vec(self.d, "d")
        if D.shape[0] != d.size:
            raise DimMismatch(f"D has {D.shape[0]} rows but d has {d.size}")
        self.D, self.d = D, d
        if self.is_box:
            if np.any(self.lo > self.hi + FEAS_TOL):
                raise InfeasibleSet("box has lo > hi")
        else:
            self._probe()
        if self.center is None:
            self.center = 0.5 * (self.lo + self.hi) if self.is_box else self._chebyshev_center()
        else:
            self.center = _as_vec(self.center, "center")

    @property
    def M(self) -> int:
        return self.D.shape[1]

    @property
    def R(self) -> int:
        return self.D.shape[0]

    @cached_property
    def is_box(self) -> bool:
        M = self.M
        if self.R != 2 * M:
            return False
        return bool(np.array_equal(self.D, np.vstack([np.eye(M), -np.eye(M)])))

    @property
    def lo(self) -> np.ndarray:
        return -self.d[self.M:]

    @property
    def hi(self) -> np.ndarray:
        return self.d[: self.M]

    @classmethod
    def box(cls, lo, hi) -> "PolyhedralSet":
        lo, hi = _as_vec(lo, "lo"), _as_vec(hi, "hi")
        M = lo.size
        return cls(np.vstack([np.eye(M), -np.eye(M)]), np.concatenate([hi, -lo]))

    @classmethod
    def box_around(cls, center, half_width) -> "PolyhedralSet":
        c = _as_vec(center, "center")
        return cls.box(c - half_width, c + half_width)

    def _probe(self):
        M = self.M
        res = linprog(np.zeros(M), A_ub=self.D, b_ub=self.d, bounds=[(None, None)] * M,
                      method="highs")
        if res.status == 2:
            raise InfeasibleSet("polyhedron {h : D h <= d} is empty")
        for m in range(M):
            for s in (1.0, -1.0):
                c = np.zeros(M)
                c[m] = -s
                r = linprog(c, A_ub=self.D, b_ub=self.d, bounds=[(None, None)] * M,
                            method="highs")
                if r.status == 3:
                    raise Unbounded(f"polyhedron unbounded along {'+' if s > 0 else '-'}e_{m}")

    def _chebyshev_center(self) -> np.ndarray:
        M = self.M
        norms = np.linalg.norm(self.D, axis=1)
        c = np.zeros(M + 1)
        c[-1] = -1.0
        A = np.hstack([self.D, norms[:, None]])
        r = linprog(c, A_ub=A, b_ub=self.d, bounds=[(None, None)] * M + [(0, None)],
                    method="highs")
        return r.x[:M]

    @cached_property
    def vertices(self) -> Optional[np.ndarray]:
        """All vertices by row-subset enumeration, or None above the row limit."""
        if self.is_box:
            if self.M > VERTEX_ROW_LIMIT:
                return None
            corners = itertools.product(*zip(self.lo, self.hi))
            return np.unique(np.array(list(corners)), axis=0)
        if self.R > VERTEX_ROW_LIMIT:
            return None
        M = self.M
        found = []
        for rows in itertools.combinations(range(self.R), M):
            A = self.D[list(rows)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            v = np.linalg.solve(A, self.d[list(rows)])
            if np.all(self.D @ v <= self.d + 1e-9):
                found.append(v)
        if not found:
            raise InfeasibleSet("no vertices found")
        return np.unique(np.round(np.array(found), 12), axis=0)

    def max_linear(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self.is_box:
            return np.maximum(mu * self.lo, mu * self.hi).sum(axis=-1)
        V = self.vertices
        if V is not None:
            return (mu @ V.T).max(axis=-1)
        flat = mu.reshape(-1, self.M)
        out = np.array([self._lp_max(v) for v in flat])
        return out.reshape(mu.shape[:-1])

    def _lp_max(self, mu):
        r = linprog(-mu, A_ub=self.D, b_ub=self.d, bounds=[(None, None)] * self.M,
                    method="highs")
        if r.status == 3:
            raise Unbounded("polyhedral support function unbounded in direction mu")
        return -r.fun

    def contains(self, h, tol=1e-9) -> bool:
        return bool(np.all(self.D @ np.asarray(h, float) <= self.d + tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.is_box:
            pts = rng.uniform(self.lo, self.hi, size=(n, self.M))
            k = min(n // 2, 2 ** min(self.M, 16))
            signs = rng.integers(0, 2, size=(k, self.M)).astype(bool)
            pts[:k] = np.where(signs, self.hi, self.lo)
            return pts
        V = self.vertices
        if V is None:
            return self._hit_and_run(n, rng)
        w = rng.dirichlet(np.full(len(V), 0.3), size=n)
        pts = w @ V
        k = min(n // 4, len(V))
        pts[:k] = V[:k]
        return pts

    def _hit_and_run(self, n: int, rng: np.random.Generator, thin: int = 5) -> np.ndarray:
        """Points from a hit-and-run walk started at the centre; the chord end is taken
        with probability 1/4 so the boundary is visited too."""
        x = self._chebyshev_center()
        out = np.empty((n, self.M))
        for k in range(n):
            for _ in range(thin):
                d = rng.standard_normal(self.M)
                a = self.D @ d
                slack = np.maximum(self.d - self.D @ x, 0.0)
                with np.errstate(divide="ignore"):
                    r = slack / a
                hi = r[a > 1e-12].min(initial=np.inf)
                lo = r[a < -1e-12].max(initial=-np.inf)
                t = hi if rng.random() < 0.25 else rng.uniform(lo, hi)
                x = x + t * d
            out[k] = x
        return out


@dataclass(eq=False)
class EllipsoidSet:
    """Euclidean ball {center + u : ||u||_2 <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = _as_vec(self.center, "center")
        if not self.radius >= 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")
        self.radius = float(self.radius)

    @property
    def M(self) -> int:
        return self.center.size

    def max_linear(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return mu @ self.center + self.radius * np.linalg.norm(mu, axis=-1)

    def contains(self, h, tol=1e-9) -> bool:
        return bool(np.linalg.norm(np.asarray(h, float) - self.center) <= self.radius + tol)

    def sample(self, n, rng):
        g = rng.standard_normal((n, self.M))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.uniform(size=(n, 1)) ** (1.0 / self.M)
        r[: n // 2] = self.radius
        return self.center + r * g


@dataclass(eq=False)
class DNormSet:
    """At most ``kappa`` components deviate from ``center``, each by at most ``u_hat``."""

    center: np.ndarray
    kappa: int
    u_hat: float

    def __post_init__(self):
        self.center = _as_vec(self.center, "center")
        if int(self.kappa) != self.kappa or not 0 <= self.kappa <= self.center.size:
            raise ValueError(f"kappa must be an integer in [0, M], got {self.kappa}")
        if not self.u_hat >= 0:
            raise ValueError(f"u_hat must be >= 0, got {self.u_hat}")
        self.kappa = int(self.kappa)
        self.u_hat = float(self.u_hat)

    @property
    def M(self) -> int:
        return self.center.size

    def max_linear(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        return mu @ self.center + self.u_hat * sum_largest_abs(mu, self.kappa)

    def contains(self, h, tol=1e-9) -> bool:
        dev = np.abs(np.asarray(h, float) - self.center)
        return bool(np.all(dev <= self.u_hat + tol) and np.sum(dev > tol) <= self.kappa)

    def sample(self, n, rng):
        out = np.tile(self.center, (n, 1))
        for k in range(n):
            idx = rng.choice(self.M, size=self.kappa, replace=False)
            if k % 2 == 0:
                out[k, idx] += self.u_hat * rng.choice([-1.0, 1.0], size=self.kappa)
            else:
                out[k, idx] += rng.uniform(-self.u_hat, self.u_hat, size=self.kappa)
        return out


UncertaintySet = Union[PolyhedralSet, EllipsoidSet, DNormSet]


def sum_largest_abs(mu, kappa: int) -> np.ndarray:
    a = np.abs(np.asarray(mu, dtype=float))
    if kappa == 0:
        return np.zeros(a.shape[:-1])
    return -np.sort(-a, axis=-1)[..., :kappa].sum(axis=-1)


def set_kind(s) -> str:
    if isinstance(s, PolyhedralSet):
        return "polyhedral"
    if isinstance(s, EllipsoidSet):
        return "ellipsoid"
    if isinstance(s, DNormSet):
        return "dnorm"
    raise TypeError(f"not an uncertainty set: {type(s).__name__}")


@dataclass(eq=False)
class RobustConstraintData:
    """Slack eps for one column, together with its set and nominal value."""

    epsilon: float
    set: UncertaintySet
    nominal: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        self.epsilon = float(self.epsilon)
        if self.nominal is None:
            self.nominal = self.set.center.copy()


# -- operations -----------------------------------------------------------------

def support_function(s: UncertaintySet, mu) -> np.ndarray:
    """max over h in s of (h - center)^T mu, exact for every set kind."""
    mu = np.asarray(mu, dtype=float)
    if mu.shape[-1] != s.M:
        raise DimMismatch(f"mu has trailing dim {mu.shape[-1]}, set has M={s.M}")
    return s.max_linear(mu) - mu @ s.center


def max_linear(s: UncertaintySet, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape[-1] != s.M:
        raise DimMismatch(f"mu has trailing dim {mu.shape[-1]}, set has M={s.M}")
    return s.max_linear(mu)


def dual_certificate(s: PolyhedralSet, mu) -> np.ndarray:
    """Optimal p >= 0 with D^T p = mu minimising p^T d."""
    mu = _as_vec(mu, "mu")
    if s.is_box:
        return np.concatenate([np.maximum(mu, 0.0), np.maximum(-mu, 0.0)])
    r = linprog(s.d, A_eq=s.D.T, b_eq=mu, bounds=[(0, None)] * s.R, method="highs")
    if r.status != 0:
        raise Unbounded("dual LP infeasible: support function unbounded along mu")
    return r.x


def dual_feasible_bound(s: PolyhedralSet, p, mu, feas_tol: float = FEAS_TOL) -> float:
    """Weak-duality bound p^T d >= max_{h in s} h^T mu for a feasible certificate p."""
    p, mu = _as_vec(p, "p"), _as_vec(mu, "mu")
    if p.size != s.R or mu.size != s.M:
        raise DimMismatch("certificate or direction has the wrong length")
    if np.any(p < -feas_tol):
        raise InfeasibleDual(f"p has a negative entry ({p.min():.3e})")
    gap = np.max(np.abs(s.D.T @ p - mu)) if mu.size else 0.0
    if gap > feas_tol:
        raise InfeasibleDual(f"||D^T p - mu||_inf = {gap:.3e} exceeds {feas_tol:g}")
    return float(p @ s.d)


def diameter(s: UncertaintySet) -> float:
    """Euclidean diameter (exact for balls, boxes, D-norm sets and R <= 12 polyhedra)."""
    if isinstance(s, EllipsoidSet):
        return 2.0 * s.radius
    if isinstance(s, DNormSet):
        return 2.0 * s.u_hat * np.sqrt(s.kappa)
    if s.is_box:
        return float(np.linalg.norm(s.hi - s.lo))
    V = s.vertices
    if V is not None:
        diffs = V[:, None, :] - V[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(-1).max()))
    # bounding-box diagonal: a certified upper bound
    M = s.M
    span = np.empty(M)
    for m in range(M):
        e = np.zeros(M)
        e[m] = 1.0
        span[m] = s.max_linear(e) + s.max_linear(-e)
    return float(np.linalg.norm(span))


def epsilon_guideline(s: UncertaintySet, rho_H: float, M: int) -> float:
    """Slack eps_i >= d_i rho_H sqrt(M) that keeps every truly orthogonal mu feasible."""
    if not rho_H > 0:
        raise ValueError("rho_H must be positive")
    return diameter(s) * rho_H * np.sqrt(M)
