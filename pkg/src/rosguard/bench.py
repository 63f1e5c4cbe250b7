"""Monte Carlo harness: false-alarm period, detection delay, runtime scaling, CSV reports."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .detector import (
    EvidenceSolver,
    add_upper_bound,
    cusum_path,
    estimate_alpha,
    first_crossings,
    threshold_for_fap,
)
from .gllr_exact import branch_and_bound
from .gllr_relaxed import SolverSchedule, solve_lagrangian
from .scenarios import ScenarioSpec, random_system

FAP_HEADER = ["h", "gamma", "mean_fap", "censored", "runs"]
ADD_HEADER = ["h", "mean_add", "bound", "runs"]
SCALE_HEADER = ["M", "solver", "batch", "mean_ms", "throughput"]

CALIBRATION_SEED = 10 ** 6
CALIBRATION_STEPS = 1000


def worker_count() -> int:
    cap = os.environ.get("ROSGUARD_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _pmap(fn, items, workers: Optional[int] = None):
    """Order-preserving map over a process pool (serial when one worker)."""
    workers = worker_count() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class BenchConfig:
    scenario: ScenarioSpec
    solver: str = "relaxed"
    runs: int = 100
    gammas: Sequence[float] = (50.0, 100.0, 200.0)
    hs: Optional[Sequence[float]] = None
    t_a: int = 1
    seed: int = 0
    t_max: int = 10 ** 6
    alpha: Optional[float] = None
    schedule: Optional[SolverSchedule] = None
    chunk: int = 64
    out: Optional[str] = None
    workers: Optional[int] = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.solver not in ("exact", "relaxed"):
            raise ValueError("solver must be 'exact' or 'relaxed'")

    def evidence(self) -> EvidenceSolver:
        sc = self.scenario
        return EvidenceSolver(sc.model, sc.sets, sc.detector_cfg, kind=self.solver, schedule=self.schedule)


# -- path simulation ------------------------------------------------------------------

def _stream(cfg: BenchConfig, run: int, T: int, t_a):
    return cfg.scenario.stream(T, seed=cfg.seed + run, t_a=t_a)


def evidence_paths(cfg: BenchConfig, t_a, h_stop: float, t_max: int, runs=None) -> List[np.ndarray]:
    """v_t sequences, one per run, each stopped once V >= h_stop or at t_max.

    Runs advance in lockstep ``cfg.chunk`` steps at a time so the relaxed
    solver sees one large batch per chunk.  Streams are prefix-consistent,
    so chunking does not change any value.
    """
    runs = range(cfg.runs) if runs is None else runs
    runs = list(runs)
    if cfg.solver == "exact":
        fn = _ExactPath(cfg, t_a, h_stop, t_max)
        return _pmap(fn, runs, cfg.workers)
    ev = cfg.evidence()
    paths = {r: [] for r in runs}
    V = {r: 0.0 for r in runs}
    active = list(runs)
    streams = {}
    k = 0
    while active and k < t_max:
        L = min(cfg.chunk, t_max - k)
        X, owners = [], []
        for r in active:
            if r not in streams or streams[r].shape[0] < k + L:
                T = min(t_max, max(2 * (k + L), 256))
                streams[r] = _stream(cfg, r, T, t_a)
            X.append(streams[r][k:k + L])
            owners.append(r)
        v = ev.batch(np.concatenate(X)).reshape(len(owners), L)
        still = []
        for r, vr in zip(owners, v):
            Vr = V[r] + np.cumsum(vr)
            hit = np.flatnonzero(Vr >= h_stop)
            if hit.size:
                paths[r].extend(vr[:hit[0] + 1])
                V[r] = Vr[hit[0]]
            else:
                paths[r].extend(vr)
                V[r] = Vr[-1]
                still.append(r)
        active = still
        k += L
    return [np.array(paths[r]) for r in runs]


class _ExactPath:
    """Picklable per-run worker for the exact solver."""

    def __init__(self, cfg, t_a, h_stop, t_max):
        self.cfg, self.t_a, self.h_stop, self.t_max = cfg, t_a, h_stop, t_max

    def __call__(self, run):
        cfg = self.cfg
        ev = cfg.evidence()
        out = []
        V = 0.0
        k = 0
        X = _stream(cfg, run, min(self.t_max, 256), self.t_a)
        while k < self.t_max:
            if k >= X.shape[0]:
                X = _stream(cfg, run, min(self.t_max, 2 * X.shape[0]), self.t_a)
            v = ev(X[k])
            out.append(v)
            V += v
            k += 1
            if V >= self.h_stop:
                break
        return np.array(out)


def calibrate_alpha(cfg: BenchConfig) -> float:
    X = cfg.scenario.stream(CALIBRATION_STEPS, seed=CALIBRATION_SEED + cfg.seed, t_a=None)
    return estimate_alpha(X)


# -- FAP / ADD ------------------------------------------------------------------------

def monte_carlo_fap(cfg: BenchConfig) -> List[dict]:
    """Mean run length under no change for each threshold (one path serves every h)."""
    sig2 = cfg.scenario.model.sigma2
    if cfg.hs is not None:
        hs = np.asarray(cfg.hs, dtype=float)
        gammas = [float("nan")] * len(hs)
        alpha = cfg.alpha
    else:
        alpha = cfg.alpha if cfg.alpha is not None else calibrate_alpha(cfg)
        gammas = [float(g) for g in cfg.gammas]
        hs = np.array([threshold_for_fap(alpha, sig2, g) for g in gammas])
    paths = evidence_paths(cfg, None, float(hs.max()), cfg.t_max)
    stops = np.array([first_crossings(cusum_path(p), hs) for p in paths])
    rows = []
    for j, (h, g) in enumerate(zip(hs, gammas)):
        st = stops[:, j]
        cens = int(np.sum(st == 0))
        st = np.where(st == 0, cfg.t_max, st)
        rows.append({"h": float(h), "gamma": g, "mean_fap": float(st.mean()), "censored": cens,
                     "runs": cfg.runs})
    if alpha is not None:
        for r in rows:
            r["_alpha"] = alpha
    return rows


def delay_samples(cfg: BenchConfig, h: float, t_a: int, condition_zero: bool = False, runs=None):
    """Detection delays Gamma - t_a + 1 for runs that do not stop before t_a.

    With ``condition_zero`` only runs whose statistic is still exactly zero at
    t_a - 1 are kept.  Returns (delays, censored flags, kept run indices).
    """
    paths = evidence_paths(cfg, t_a, h, cfg.t_max, runs)
    runs = list(range(cfg.runs) if runs is None else runs)
    delays, cens, kept = [], [], []
    for r, p in zip(runs, paths):
        V = cusum_path(p)
        if condition_zero and t_a > 1 and V[t_a - 2] != 0.0:
            continue
        stop = first_crossings(V, [h])[0]
        if 0 < stop < t_a:
            continue
        if stop == 0:
            delays.append(cfg.t_max - t_a + 1)
            cens.append(True)
        else:
            delays.append(stop - t_a + 1)
            cens.append(False)
        kept.append(r)
    return np.array(delays, dtype=float), np.array(cens, dtype=bool), kept


def monte_carlo_add(cfg: BenchConfig) -> List[dict]:
    """Mean delay per threshold with the 2 h sigma2 / rho_L^2 bound alongside."""
    hs = np.asarray(cfg.hs if cfg.hs is not None else (5.0, 10.0, 20.0), dtype=float)
    sig2 = cfg.scenario.model.sigma2
    rho_L = cfg.scenario.detector_cfg.rho_L
    paths = evidence_paths(cfg, cfg.t_a, float(hs.max()), cfg.t_max)
    rows = []
    for j, h in enumerate(hs):
        d = []
        for p in paths:
            stop = first_crossings(cusum_path(p), [h])[0]
            if stop == 0:
                d.append(cfg.t_max - cfg.t_a + 1)
            elif stop >= cfg.t_a:
                d.append(stop - cfg.t_a + 1)
        rows.append({"h": float(h), "mean_add": float(np.mean(d)) if d else float("nan"),
                     "bound": add_upper_bound(h, sig2, rho_L), "runs": len(d)})
    return rows


# -- runtime scaling ------------------------------------------------------------------

@dataclass
class ScaleConfig:
    Ms: Sequence[int] = (4, 8, 16, 32, 64)
    trials: int = 50
    batch: int = 64
    exact_cap: int = 16
    seed: int = 0
    schedule: Optional[SolverSchedule] = None
    solvers: Sequence[str] = ("exact", "relaxed")


def _scale_problems(M: int, n: int, seed: int):
    spec = random_system(M, seed=seed, t_a=1)
    X = spec.stream(n, seed=seed + 1)
    ev = EvidenceSolver(spec.model, spec.sets, spec.detector_cfg, kind="relaxed")
    return [ev.problem(x) for x in X]


def runtime_scaling(cfg: ScaleConfig) -> List[dict]:
    """Solver wall time per v_t (problem construction excluded)."""
    rows = []
    for M in cfg.Ms:
        probs = _scale_problems(M, max(cfg.trials, cfg.batch), cfg.seed)
        if "exact" in cfg.solvers:
            if M > cfg.exact_cap:
                rows.append({"M": M, "solver": "exact", "batch": 1, "mean_ms": "Skipped", "throughput": "Skipped"})
            else:
                ts = []
                for p in probs[:cfg.trials]:
                    t0 = time.perf_counter()
                    branch_and_bound(p)
                    ts.append(time.perf_counter() - t0)
                ms = 1e3 * float(np.mean(ts))
                rows.append({"M": M, "solver": "exact", "batch": 1, "mean_ms": ms, "throughput": 1e3 / ms})
        if "relaxed" in cfg.solvers:
            ts = []
            for p in probs[:cfg.trials]:
                t0 = time.perf_counter()
                solve_lagrangian(p, cfg.schedule)
                ts.append(time.perf_counter() - t0)
            ms = 1e3 * float(np.mean(ts))
            rows.append({"M": M, "solver": "relaxed", "batch": 1, "mean_ms": ms, "throughput": 1e3 / ms})
            t0 = time.perf_counter()
            solve_lagrangian(None, cfg.schedule, batch=probs[:cfg.batch])
            total = time.perf_counter() - t0
            rows.append({"M": M, "solver": "relaxed", "batch": cfg.batch,
                         "mean_ms": 1e3 * total / cfg.batch, "throughput": cfg.batch / total})
    return rows


def batch_speedup(M: int = 64, T: int = 64, seed: int = 0, schedule=None) -> dict:
    """Throughput of one batched solve of T instances versus T single solves."""
    probs = _scale_problems(M, T, seed)
    t0 = time.perf_counter()
    for p in probs:
        solve_lagrangian(p, schedule)
    serial = time.perf_counter() - t0
    t0 = time.perf_counter()
    solve_lagrangian(None, schedule, batch=probs)
    batched = time.perf_counter() - t0
    return {"serial_s": serial, "batched_s": batched, "speedup": serial / batched, "cores": os.cpu_count()}


# -- reports --------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_table(path, header: Sequence[str], rows: List[dict]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(r[k]) for k in header])
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def write_long(path, tables: Dict[str, tuple]) -> Path:
    """Plot-ready long format: table,row,column,value."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", "row", "column", "value"])
        for name, (header, rows) in tables.items():
            for i, r in enumerate(rows):
                for k in header:
                    w.writerow([name, i, k, _cell(r[k])])
    return path


def report(tables: Dict[str, tuple], out) -> List[Path]:
    """Write each table to <out>/<name>.csv plus <out>/<name>_long.csv."""
    out = Path(out)
    written = []
    for name, (header, rows) in tables.items():
        written.append(write_table(out / f"{name}.csv", header, rows))
        written.append(write_long(out / f"{name}_long.csv", {name: (header, rows)}))
    return written
