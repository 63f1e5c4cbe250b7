"""CUSUM recursion, stopping rule, threshold and delay calculators, evidence solvers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import AlreadyFired
from .gllr_exact import ExactConfig, solve_exact
from .gllr_relaxed import SolverSchedule, _fast_relaxation, solve_lagrangian
from .model import SystemModel, orthogonal_projector, residual
from .problem import EvidenceConfig, EvidenceProblem
from .uncertainty import RobustConstraintData, epsilon_guideline

NEG_TOL = 1e-9


@dataclass(frozen=True)
class DetectorState:
    h: float
    V: float = 0.0
    t: int = 0
    fired: bool = False
    history: Optional[tuple] = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("threshold h must be positive")


def update(state: DetectorState, v_t: float) -> DetectorState:
    """One CUSUM step: V <- max(V, 0) + max(v_t, 0)."""
    if state.fired:
        raise AlreadyFired(f"detector already fired at t={state.t}")
    if v_t < -NEG_TOL:
        raise ValueError(f"evidence {v_t} is negative beyond solver tolerance")
    v = max(float(v_t), 0.0)
    V = max(state.V, 0.0) + v
    hist = None if state.history is None else state.history + (v,)
    return replace(state, V=V, t=state.t + 1, fired=V >= state.h, history=hist)


def cusum_path(v, clamp: bool = True) -> np.ndarray:
    """V_1..V_K for an evidence sequence.

    Evidence is clamped at zero by default (solver noise); ``clamp=False``
    runs the recursion on signed increments.
    """
    v = np.asarray(v, dtype=float)
    if clamp:
        v = np.maximum(v, 0.0)
    out = np.empty_like(v)
    V = 0.0
    for k, x in enumerate(v):
        V = max(V, 0.0) + x
        out[k] = V
    return out


def max_suffix_sums(v) -> np.ndarray:
    """max over k <= K of sum_{t=k}^{K} v_t, by direct O(K^2) evaluation (signed v)."""
    v = np.asarray(v, dtype=float)
    P = np.concatenate([[0.0], np.cumsum(v)])
    # S[k, K] = sum of v[k..K] = P[K+1] - P[k], kept only for k <= K
    S = P[None, 1:] - P[:-1, None]
    S[np.tril_indices(v.size, -1)] = -np.inf
    return S.max(axis=0) if v.size else v.copy()


def first_crossing(V, h: float) -> Optional[int]:
    """1-based first index with V >= h, or None."""
    idx = np.flatnonzero(np.asarray(V) >= h)
    return int(idx[0]) + 1 if idx.size else None


def first_crossings(V, hs) -> np.ndarray:
    """First crossings for many thresholds from one non-decreasing path (0 = never)."""
    V = np.asarray(V, dtype=float)
    Vmax = np.maximum.accumulate(V) if V.size else V
    idx = np.searchsorted(Vmax, np.asarray(hs, dtype=float), side="left")
    return np.where(idx < V.size, idx + 1, 0)


@dataclass(frozen=True)
class Censored:
    t_max: int


@dataclass
class RunResult:
    stopping_time: Union[int, Censored]
    v: np.ndarray
    V: np.ndarray
    h: float

    @property
    def censored(self) -> bool:
        return isinstance(self.stopping_time, Censored)


def run(stream, evidence_solver, h: float, t_max: Optional[int] = None, chunk: int = 256) -> RunResult:
    """Feed observations through the evidence solver until V >= h or t_max.

    ``evidence_solver`` is either a callable x -> v_t or an object with a
    ``batch(X)`` method; in the latter case evidence is computed ``chunk``
    steps at a time (the statistic itself is still updated one step at a time).
    """
    if not h > 0:
        raise ValueError("threshold h must be positive")
    X = np.atleast_2d(np.asarray(stream, dtype=float))
    T = X.shape[0] if t_max is None else min(t_max, X.shape[0])
    state = DetectorState(h=h)
    vs, Vs = [], []
    batch = getattr(evidence_solver, "batch", None)
    k = 0
    while k < T and not state.fired:
        if batch is not None:
            block = batch(X[k:min(T, k + chunk)])
        else:
            block = [evidence_solver(X[k])]
        for v in block:
            state = update(state, v)
            vs.append(max(float(v), 0.0))
            Vs.append(state.V)
            k += 1
            if state.fired or k >= T:
                break
    stop = state.t if state.fired else Censored(T if t_max is None else t_max)
    return RunResult(stop, np.array(vs), np.array(Vs), h)


def write_run_log(path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v_t", "V_t", "fired"])
        for k, (v, V) in enumerate(zip(result.v, result.V)):
            w.writerow([k + 1, repr(float(v)), repr(float(V)), int(V >= result.h)])


# -- threshold and delay ------------------------------------------------------------

def threshold_for_fap(alpha: float, sigma2: float, gamma: float) -> float:
    """Smallest threshold certified to keep the mean run length above gamma."""
    if not alpha > 0 or not sigma2 > 0:
        raise ValueError("alpha and sigma2 must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return alpha * gamma / (2.0 * sigma2)


def add_upper_bound(h: float, sigma2: float, rho_L: float) -> float:
    """Worst-case mean delay bound 2 h sigma2 / rho_L^2."""
    if not rho_L > 0:
        raise ValueError("rho_L must be positive")
    return 2.0 * h * sigma2 / rho_L ** 2


def estimate_alpha(X, factor: float = 1.2) -> float:
    """Energy bound from a calibration prefix: factor * max ||x||^2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(factor * np.max(np.sum(X * X, axis=1)))


@dataclass
class DelayMetrics:
    fap: float
    add: float
    gamma: float
    alpha: float

    def __post_init__(self):
        if self.fap < 1 or self.add < 0:
            raise ValueError("need fap >= 1 and add >= 0")


# -- evidence solvers ---------------------------------------------------------------

@dataclass
class EvidenceSolver:
    """Turns raw observations into v_t for one model and set configuration.

    ``kind`` is "exact" (branch and bound, with last step's support as the
    starting incumbent) or "relaxed" (batched first-order solver).  With
    ``screen`` the relaxed path first tries the separable minimiser of the
    relaxation; when it is robustly feasible it is the relaxation optimum
    and the iterative solver is skipped for that step.
    """

    model: SystemModel
    sets: Sequence
    cfg: EvidenceConfig
    kind: str = "exact"
    schedule: Optional[SolverSchedule] = None
    exact: ExactConfig = field(default_factory=ExactConfig)
    screen: bool = True

    def __post_init__(self):
        if self.kind not in ("exact", "relaxed"):
            raise ValueError(f"solver kind must be 'exact' or 'relaxed', got {self.kind!r}")
        self.proj = orthogonal_projector(self.model)
        if self.cfg.epsilon is None:
            rho_H = self.cfg.rho_U if self.cfg.rho_H is None else self.cfg.rho_H
            eps = [epsilon_guideline(s, rho_H, self.model.M) for s in self.sets]
        else:
            eps = list(np.broadcast_to(np.asarray(self.cfg.epsilon, dtype=float), (self.model.N,)))
        self.constraints = [RobustConstraintData(e, s, self.model.H[:, i].copy())
                            for i, (e, s) in enumerate(zip(eps, self.sets))]
        self._last_mu = None

    @property
    def epsilons(self) -> List[float]:
        return [c.epsilon for c in self.constraints]

    def problem(self, x) -> EvidenceProblem:
        return EvidenceProblem(residual(self.proj, x), self.cfg.rho_L, self.cfg.rho_U,
                               self.model.sigma2, self.constraints)

    def reset(self):
        self._last_mu = None

    def __call__(self, x) -> float:
        return float(self.batch(np.atleast_2d(x))[0])

    def batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        probs = [self.problem(x) for x in X]
        if self.kind == "relaxed":
            sols = [_fast_relaxation(p, True) if self.screen else None for p in probs]
            rest = [k for k, s in enumerate(sols) if s is None]
            if rest:
                for k, s in zip(rest, solve_lagrangian(None, self.schedule, batch=[probs[k] for k in rest])):
                    sols[k] = s
            return np.array([min(max(-s.objective, 0.0), p.energy_bound()) for p, s in zip(probs, sols)])
        out = np.empty(len(probs))
        for k, p in enumerate(probs):
            out[k], self._last_mu = _exact_with_support(p, self.exact, self._last_mu)
        return out


def _exact_with_support(prob: EvidenceProblem, cfg=None, incumbent=None):
    if np.all(np.abs(prob.x_tilde) <= 0.5 * prob.rho_L):
        return 0.0, None
    sol = solve_exact(prob, cfg, incumbent=incumbent)
    return max(0.0, -sol.objective), (sol.mu if np.any(sol.u) else None)


def exact_evidence(prob: EvidenceProblem, cfg: Optional[ExactConfig] = None, incumbent=None) -> float:
    """Exact v_t with a closed-form exit.

    If every |x~_m| <= rho_L / 2, each nonzero coordinate costs at least
    rho_L^2 - 2 rho_L |x~_m| >= 0 even without the robust constraints, so
    mu = 0 is optimal and v_t = 0.
    """
    return _exact_with_support(prob, cfg, incumbent)[0]
