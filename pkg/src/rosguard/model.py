"""Observation model, orthogonal-complement projector and stream generation.

Observations follow

    x(t) = H theta(t) + n(t)                   for t <  t_a
    x(t) = (H + dH(t)) theta(t) + n(t)         for t >= t_a

with n(t) ~ N(0, sigma2 I).  The detector only ever sees the residual
P x(t), where P projects onto the orthogonal complement of the column
space of the nominal H.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DimMismatch, RankDeficient

RANK_TOL = 1e-10


@dataclass(frozen=True)
class SystemModel:
    H: np.ndarray
    sigma2: float

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        if H.ndim != 2:
            raise DimMismatch(f"H must be a matrix, got shape {H.shape}")
        M, N = H.shape
        if not M > N >= 1:
            raise DimMismatch(f"need M > N >= 1, got M={M}, N={N}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return self.H.shape[1]


@dataclass(frozen=True)
class Projector:
    P: np.ndarray
    rank: int

    @property
    def M(self) -> int:
        return self.P.shape[0]

    def __call__(self, x):
        return residual(self, x)


def orthogonal_projector(model: SystemModel, rank_tol: float = RANK_TOL) -> Projector:
    """Projector onto the orthogonal complement of range(H).

    Built from the left singular vectors of H that span the complement, so
    no normal-equation inverse is ever formed.
    """
    H = model.H
    U, s, _ = np.linalg.svd(H, full_matrices=True)
    if s[-1] < rank_tol * s[0]:
        raise RankDeficient(
            f"smallest singular value {s[-1]:.3e} below {rank_tol:g} x largest {s[0]:.3e}"
        )
    N = H.shape[1]
    Q = U[:, N:]
    P = Q @ Q.T
    P = 0.5 * (P + P.T)
    P.setflags(write=False)
    return Projector(P=P, rank=N)


def residual(proj: Projector, x) -> np.ndarray:
    """Return P x.  Accepts a single vector or a stack with trailing axis M."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != proj.M:
        raise DimMismatch(f"expected trailing dimension {proj.M}, got {x.shape}")
    return x @ proj.P


# -- stream generation ---------------------------------------------------------

ThetaGen = Callable[[np.random.Generator, int, int], np.ndarray]
DeltaHGen = Callable[[np.random.Generator, int, np.ndarray], np.ndarray]


def uniform_theta(rng: np.random.Generator, t: int, N: int) -> np.ndarray:
    """Default state sequence: i.i.d. uniform on [-1, 1]^N."""
    return rng.uniform(-1.0, 1.0, size=N)


def scaled_uniform_theta(scale: float) -> ThetaGen:
    def gen(rng, t, N):
        return scale * rng.uniform(-1.0, 1.0, size=N)

    return gen


def constant_delta(dH) -> DeltaHGen:
    dH = np.asarray(dH, dtype=float)

    def gen(rng, t, theta):
        return dH

    return gen


def rank_one_delta(mu) -> np.ndarray:
    """Perturbation dH with dH @ theta == mu for the given theta.

    Returned as a generator: dH(t) = mu theta^T / ||theta||^2.
    """
    mu = np.asarray(mu, dtype=float)

    def gen(rng, t, theta):
        nrm = float(theta @ theta)
        if nrm == 0.0:
            return np.zeros((mu.size, theta.size))
        return np.outer(mu, theta) / nrm

    return gen


@dataclass
class ChangeScenario:
    """How theta(t) and dH(t) evolve, and when the change starts.

    ``t_a`` is 1-based; ``t_a=None`` means no change ever happens.
    """

    theta_gen: ThetaGen = uniform_theta
    deltaH_gen: Optional[DeltaHGen] = None
    t_a: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.t_a is not None and self.t_a < 1:
            raise ValueError("t_a must be >= 1")


def generate_stream(
    model: SystemModel,
    scenario: ChangeScenario,
    T: int,
    H_true=None,
    noise: bool = True,
) -> np.ndarray:
    """Draw T observations (rows) from the change model.

    ``H_true`` is the matrix that actually generates data; it defaults to
    the nominal ``model.H``.  Noise, theta and dH are drawn from independent
    child generators so that changing t_a never shifts the noise sequence.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    H = model.H if H_true is None else np.asarray(H_true, dtype=float)
    if H.shape != model.H.shape:
        raise DimMismatch(f"H_true shape {H.shape} != nominal {model.H.shape}")
    M, N = H.shape
    ss = np.random.SeedSequence(scenario.seed)
    theta_rng, dh_rng, noise_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    sd = np.sqrt(model.sigma2)
    out = np.empty((T, M))
    for k in range(T):
        t = k + 1
        theta = np.asarray(scenario.theta_gen(theta_rng, t, N), dtype=float)
        x = H @ theta
        if scenario.t_a is not None and t >= scenario.t_a and scenario.deltaH_gen is not None:
            dH = scenario.deltaH_gen(dh_rng, t, theta)
            x = x + dH @ theta
        if noise:
            x = x + sd * noise_rng.standard_normal(M)
        out[k] = x
    return out


# -- file formats ---------------------------------------------------------------

def read_matrix(path) -> np.ndarray:
    """Read the plain-text matrix format: 'M N' header then M rows."""
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise ValueError(f"{path}: first line must be 'M N'")
    M, N = int(lines[0][0]), int(lines[0][1])
    rows = lines[1:]
    if len(rows) != M or any(len(r) != N for r in rows):
        raise DimMismatch(f"{path}: header says {M}x{N} but body does not match")
    return np.array([[float(v) for v in r] for r in rows])


def write_matrix(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    M, N = A.shape
    body = "\n".join(" ".join(repr(float(v)) for v in row) for row in A)
    Path(path).write_text(f"{M} {N}\n{body}\n")


def write_stream_csv(path, X: np.ndarray) -> None:
    X = np.atleast_2d(X)
    M = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{m + 1}" for m in range(M)])
        for k, row in enumerate(X):
            w.writerow([k + 1] + [repr(float(v)) for v in row])


def read_stream_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: header must start with 't'")
        rows = [[float(v) for v in row[1:]] for row in r if row]
    return np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
