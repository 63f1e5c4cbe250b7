"""Experiment generators: IEEE-14 region 4, random {1, 0, -1} systems, MIMO blockage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import RankRetryExhausted
from .model import (
    ChangeScenario,
    SystemModel,
    constant_delta,
    generate_stream,
    orthogonal_projector,
    rank_one_delta,
)
from .problem import EvidenceConfig
from .uncertainty import DNormSet, EllipsoidSet, PolyhedralSet, set_kind

SET_KINDS = ("polyhedral", "ellipsoid", "dnorm")

IEEE14_H = np.array([
    [-1.0, 3.0, -1.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, -1.0, 1.0],
    [0.0, -1.0, 2.0],
])

IEEE14_C = [
    np.array([-0.5, 0.5, 0.5, 0.5, 0.5, 1.5, 0.5, 0.5, 0.5, 0.5]),
    np.array([3.5, -0.5, 0.5, -0.5, -0.5, -2.5, 1.5, 0.5, 1.5, 1.5]),
    np.array([-0.5, 0.5, -0.5, 1.5, 2.5, 1.5, 0.5, 1.5, -0.5, -1.5]),
]

IEEE14_CENTERS = [
    np.array([-1.0, 0.1, 0.3, -0.2, 0.0]),
    np.array([3.0, -0.7, 0.2, -1.3, -0.9]),
    np.array([-1.1, 0.2, -0.6, 0.7, 2.0]),
]

IEEE14_RADIUS = 0.36
IEEE14_KAPPA = 4
IEEE14_U_HAT = 0.5


@dataclass
class ScenarioSpec:
    """A complete experiment: nominal model, sets, true matrix, change law and detector band.

    ``model.H`` is what the detector believes (projector and nominal values);
    ``H_true`` generates the data.
    """

    name: str
    model: SystemModel
    sets: list
    change: ChangeScenario
    detector_cfg: EvidenceConfig
    H_true: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H_true = np.asarray(self.H_true, dtype=float)
        if self.H_true.shape != self.model.H.shape:
            raise ValueError("H_true and nominal H shapes differ")
        if len(self.sets) != self.model.N:
            raise ValueError(f"need one set per column ({self.model.N}), got {len(self.sets)}")
        for s in self.sets:
            if s.M != self.model.M:
                raise ValueError("set dimension does not match M")

    @property
    def set_kind(self) -> str:
        return set_kind(self.sets[0])

    def stream(self, T: int, seed: Optional[int] = None, t_a="keep") -> np.ndarray:
        ch = self.change
        if seed is not None or t_a != "keep":
            ch = ChangeScenario(ch.theta_gen, ch.deltaH_gen,
                                ch.t_a if t_a == "keep" else t_a,
                                ch.seed if seed is None else seed)
        return generate_stream(self.model, ch, T, H_true=self.H_true)

    def membership(self) -> List[bool]:
        """Whether each true column lies in its declared set."""
        return [bool(s.contains(self.H_true[:, i], tol=1e-9)) for i, s in enumerate(self.sets)]


# -- in-band injections ---------------------------------------------------------------

def in_band_vector(H, rho_L: float, rho_U: float, rng: np.random.Generator,
                   support_size: Optional[int] = None, attempts: int = 200) -> np.ndarray:
    """Random mu orthogonal to range(H) with rho_L <= |mu_m| <= rho_U on its support.

    A support S and a sign pattern (from a random null-space vector) are
    drawn; a small LP then looks for w in the null space of H_S^T with
    1 <= s_m w_m <= rho_U / rho_L, and w is scaled into the band.
    """
    H = np.asarray(H, dtype=float)
    M, N = H.shape
    ratio = rho_U / rho_L
    for _ in range(attempts):
        k = support_size if support_size is not None else int(rng.integers(1, M + 1))
        S = np.sort(rng.choice(M, size=k, replace=False))
        _, sv, Vt = np.linalg.svd(H[S].T, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * max(1.0, sv.max(initial=0.0))))
        basis = Vt[rank:].T
        if basis.shape[1] == 0:
            continue
        sign = np.sign(basis @ rng.standard_normal(basis.shape[1]))
        if np.any(sign == 0):
            continue
        A = sign[:, None] * basis
        res = linprog(rng.standard_normal(basis.shape[1]),
                      A_ub=np.vstack([-A, A]), b_ub=np.concatenate([-np.ones(k), np.full(k, ratio)]),
                      bounds=[(None, None)] * basis.shape[1], method="highs")
        if res.status != 0:
            continue
        w = basis @ res.x
        a = np.abs(w)
        lo, hi = rho_L / a.min(), rho_U / a.max()
        scale = rng.uniform(lo, hi) if hi > lo else lo
        mu = np.zeros(M)
        mu[S] = scale * w
        return mu
    raise RuntimeError("could not find an in-band vector orthogonal to range(H)")


# -- scenarios ------------------------------------------------------------------------

def ieee14_sets(kind: str = "polyhedral"):
    if kind == "polyhedral":
        D = np.vstack([np.eye(5), -np.eye(5)])
        return [PolyhedralSet(D, c) for c in IEEE14_C]
    if kind == "ellipsoid":
        return [EllipsoidSet(c, IEEE14_RADIUS) for c in IEEE14_CENTERS]
    if kind == "dnorm":
        return [DNormSet(c, IEEE14_KAPPA, IEEE14_U_HAT) for c in IEEE14_CENTERS]
    raise ValueError(f"unknown set kind {kind!r}; expected one of {SET_KINDS}")


def ieee14_region4(kind: str = "polyhedral", sigma2: float = 1.0, rho_L: float = 0.5,
                   rho_U: float = 2.0, t_a: Optional[int] = None, seed: int = 0,
                   mu=None, epsilon=None) -> ScenarioSpec:
    """IEEE-14 region-4 false-data-injection scenario.

    The detector's nominal matrix is the printed H for polyhedral sets and
    the set centres for ellipsoid / D-norm sets.  ``mu`` is the injected
    change (default: an in-band vector orthogonal to the nominal range).
    """
    sets = ieee14_sets(kind)
    H_nom = IEEE14_H.copy() if kind == "polyhedral" else np.column_stack(IEEE14_CENTERS)
    model = SystemModel(H_nom, sigma2)
    if mu is None:
        mu = in_band_vector(H_nom, rho_L, rho_U, np.random.default_rng([seed, 14]))
    mu = np.asarray(mu, dtype=float)
    change = ChangeScenario(deltaH_gen=rank_one_delta(mu), t_a=t_a, seed=seed)
    cfg = EvidenceConfig(rho_L, rho_U, epsilon=epsilon, rho_H=rho_U)
    return ScenarioSpec(f"ieee14-{kind}", model, sets, change, cfg, IEEE14_H.copy(),
                        meta={"mu": mu, "kind": kind})


def random_system(M: int, seed: int = 0, N: Optional[int] = None, sigma2: float = 1.0,
                  rho_L: float = 0.5, rho_U: float = 2.0, perturb: float = 0.1,
                  sigma0: float = 0.1, t_a: Optional[int] = None, max_retries: int = 100) -> ScenarioSpec:
    """Random {1, 0, -1} system with box sets of half-width sigma0 around perturbed nominals."""
    if M < 2:
        raise ValueError("M must be >= 2")
    N = max(1, M // 2) if N is None else N
    rng = np.random.default_rng([seed, M])
    for _ in range(max_retries):
        H = rng.choice([-1.0, 0.0, 1.0], size=(M, N))
        Hbar = H + rng.uniform(-perturb, perturb, size=(M, N))
        if np.linalg.matrix_rank(H) < N or np.linalg.matrix_rank(Hbar) < N:
            continue
        # some small draws admit no in-band change orthogonal to the columns
        try:
            mu = in_band_vector(Hbar, rho_L, rho_U, rng, attempts=50)
        except RuntimeError:
            continue
        break
    else:
        raise RankRetryExhausted(f"no usable {M}x{N} draw in {max_retries} attempts")
    sets = [PolyhedralSet.box_around(Hbar[:, i], sigma0) for i in range(N)]
    model = SystemModel(Hbar, sigma2)
    change = ChangeScenario(deltaH_gen=rank_one_delta(mu), t_a=t_a, seed=seed)
    cfg = EvidenceConfig(rho_L, rho_U, rho_H=rho_U)
    return ScenarioSpec(f"random-{M}", model, sets, change, cfg, H, meta={"mu": mu, "seed": seed})


def mimo_blockage(M: int = 4, N: int = 2, blockage_gain: float = 0.5, t_a: Optional[int] = 1,
                  seed: int = 0, radius: float = 0.1, sigma2: float = 0.1, rows=None,
                  rho_L: float = 0.1, rho_U: float = 5.0) -> ScenarioSpec:
    """Real-valued stand-in for a blocked MIMO link: rows of H attenuated by blockage_gain."""
    if not 0 <= blockage_gain <= 1:
        raise ValueError("blockage_gain must lie in [0, 1]")
    rng = np.random.default_rng([seed, M, N])
    H = rng.standard_normal((M, N))
    while np.linalg.matrix_rank(H) < N:
        H = rng.standard_normal((M, N))
    mask = np.zeros(M)
    mask[list(range(M // 2)) if rows is None else list(rows)] = 1.0
    dH = -blockage_gain * mask[:, None] * H
    sets = [EllipsoidSet(H[:, i], radius) for i in range(N)]
    change = ChangeScenario(deltaH_gen=constant_delta(dH) if blockage_gain > 0 else None,
                            t_a=t_a, seed=seed)
    cfg = EvidenceConfig(rho_L, rho_U, rho_H=rho_U)
    return ScenarioSpec("mimo", SystemModel(H, sigma2), sets, change, cfg, H.copy(),
                        meta={"dH": dH, "mask": mask})


def noiseless(spec: ScenarioSpec, sigma2: float = 1e-12) -> ScenarioSpec:
    """Same scenario with (numerically) vanishing noise."""
    return ScenarioSpec(spec.name, SystemModel(spec.model.H, sigma2), spec.sets, spec.change,
                        spec.detector_cfg, spec.H_true, dict(spec.meta))


BUILTIN = {
    "ieee14-polyhedral": lambda: ieee14_region4("polyhedral"),
    "ieee14-ellipsoid": lambda: ieee14_region4("ellipsoid"),
    "ieee14-dnorm": lambda: ieee14_region4("dnorm"),
    "mimo": lambda: mimo_blockage(),
}


def builtin(name: str) -> ScenarioSpec:
    if name in BUILTIN:
        return BUILTIN[name]()
    if name.startswith("random-"):
        return random_system(int(name.split("-", 1)[1]))
    raise KeyError(f"unknown scenario {name!r}; builtins: {sorted(BUILTIN)} or random-<M>")


# -- fixture serialisation ------------------------------------------------------------

def _fmt(v) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(v))


def appendix_dump() -> str:
    """Canonical text rendering of the IEEE-14 region-4 data, one item per line."""
    lines = [f"H {IEEE14_H.shape[0]} {IEEE14_H.shape[1]}"]
    lines += [_fmt(row) for row in IEEE14_H]
    for i, s in enumerate(ieee14_sets("polyhedral"), 1):
        lines.append(f"c{i} {_fmt(s.d)}")
    for i, s in enumerate(ieee14_sets("ellipsoid"), 1):
        lines.append(f"center{i} {_fmt(s.center)}")
    lines.append(f"radius {ieee14_sets('ellipsoid')[0].radius!r}")
    dn = ieee14_sets("dnorm")[0]
    lines.append(f"kappa {dn.kappa}")
    lines.append(f"u_hat {dn.u_hat!r}")
    return "\n".join(lines) + "\n"


def residual_scale(spec: ScenarioSpec) -> float:
    """||P H_true||_F: how far the true matrix leaves the nominal column space."""
    P = orthogonal_projector(spec.model).P
    return float(np.linalg.norm(P @ spec.H_true))
