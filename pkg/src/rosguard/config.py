"""INI scenario files.

A file holds a ``[scenario]`` section and optional ``[detector]`` and
``[schedule]`` sections::

    [scenario]
    kind = ieee14          ; ieee14 | random | mimo
    sets = polyhedral      ; ieee14 only: polyhedral | ellipsoid | dnorm
    M = 16                 ; random only
    sigma2 = 1.0
    seed = 0
    t_a = 1                ; omit for a no-change stream

    [detector]
    rho_L = 0.5
    rho_U = 2.0
    rho_H = 2.0
    epsilon = 1.5          ; omit to use the guideline value

    [schedule]
    preset = default       ; default | coarse | precise
    eps_stop = 1e-4
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Optional

from .gllr_relaxed import SolverSchedule
from .problem import EvidenceConfig
from .scenarios import ScenarioSpec, builtin, ieee14_region4, mimo_blockage, random_system


def _get(sec, key, conv, default=None):
    if sec is None or key not in sec:
        return default
    return conv(sec[key])


def _opt_int(v: str) -> Optional[int]:
    return None if v.strip().lower() in ("", "none", "never") else int(v)


def load_scenario(path) -> ScenarioSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read scenario file {path}")
    if "scenario" not in cp:
        raise ValueError(f"{path}: missing [scenario] section")
    sc = cp["scenario"]
    det = cp["detector"] if "detector" in cp else None
    kind = sc.get("kind", "ieee14")
    sigma2 = _get(sc, "sigma2", float, 1.0)
    seed = _get(sc, "seed", int, 0)
    t_a = _get(sc, "t_a", _opt_int)
    rho_L = _get(det, "rho_L", float, 0.5)
    rho_U = _get(det, "rho_U", float, 2.0)
    if kind == "ieee14":
        spec = ieee14_region4(sc.get("sets", "polyhedral"), sigma2=sigma2, rho_L=rho_L, rho_U=rho_U,
                              t_a=t_a, seed=seed)
    elif kind == "random":
        spec = random_system(_get(sc, "M", int, 8), seed=seed, sigma2=sigma2, rho_L=rho_L,
                             rho_U=rho_U, t_a=t_a)
    elif kind == "mimo":
        spec = mimo_blockage(_get(sc, "M", int, 4), _get(sc, "N", int, 2),
                             blockage_gain=_get(sc, "blockage_gain", float, 0.5), t_a=t_a, seed=seed)
    else:
        raise ValueError(f"{path}: unknown scenario kind {kind!r}")
    spec.detector_cfg = EvidenceConfig(rho_L, rho_U, epsilon=_get(det, "epsilon", float),
                                       rho_H=_get(det, "rho_H", float, rho_U))
    return spec


def load_schedule(path) -> Optional[SolverSchedule]:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read(path)
    if "schedule" not in cp:
        return None
    sec = cp["schedule"]
    opts = {}
    for key, conv in (("eps_stop", float), ("kkt_tol", float), ("max_inner", int), ("max_outer", int)):
        if key in sec:
            opts[key] = conv(sec[key])
    preset = sec.get("preset", "default")
    if preset == "coarse":
        return SolverSchedule.coarse(**opts)
    if preset == "precise":
        return SolverSchedule.precise(**opts)
    if preset == "default":
        return SolverSchedule(**opts)
    raise ValueError(f"{path}: unknown schedule preset {preset!r}")


def resolve_scenario(name_or_path: str) -> ScenarioSpec:
    """A builtin name (ieee14-polyhedral, mimo, random-16, ...) or an INI file path."""
    p = Path(name_or_path)
    if p.suffix in (".ini", ".cfg") or p.is_file():
        return load_scenario(p)
    return builtin(name_or_path)
