"""Command-line front end: ``rosguard <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import load_schedule, resolve_scenario
from .detector import EvidenceSolver, run, threshold_for_fap, write_run_log
from .model import read_stream_csv, write_matrix, write_stream_csv
from .scenarios import appendix_dump


def _common(p: argparse.ArgumentParser, solver=True):
    p.add_argument("--scenario", default="ieee14-polyhedral",
                   help="builtin name (ieee14-polyhedral|ieee14-ellipsoid|ieee14-dnorm|mimo|random-<M>) or .ini file")
    if solver:
        p.add_argument("--solver", choices=("exact", "relaxed"), default="relaxed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)


def _schedule(args):
    p = Path(args.scenario)
    return load_schedule(p) if p.is_file() else None


def cmd_detect(args) -> int:
    spec = resolve_scenario(args.scenario)
    X = read_stream_csv(args.stream) if args.stream else spec.stream(args.T, seed=args.seed)
    ev = EvidenceSolver(spec.model, spec.sets, spec.detector_cfg, kind=args.solver, schedule=_schedule(args))
    if args.h is not None:
        h = args.h[0]
    else:
        alpha = bench.calibrate_alpha(bench.BenchConfig(spec, seed=args.seed))
        h = threshold_for_fap(alpha, spec.model.sigma2, args.gamma[0])
    res = run(X, ev, h)
    if args.out:
        write_run_log(args.out, res)
    stop = f"censored at {res.stopping_time.t_max}" if res.censored else f"alarm at t={res.stopping_time}"
    print(f"h={h:.6g}: {stop}")
    return 0


def cmd_bench_fap(args) -> int:
    spec = resolve_scenario(args.scenario)
    cfg = bench.BenchConfig(spec, solver=args.solver, runs=args.runs, seed=args.seed, t_max=args.t_max,
                            gammas=tuple(args.gamma) if args.gamma else (50.0, 100.0, 200.0),
                            hs=tuple(args.h) if args.h else None, schedule=_schedule(args))
    rows = bench.monte_carlo_fap(cfg)
    return _emit("fap", bench.FAP_HEADER, rows, args.out)


def cmd_bench_add(args) -> int:
    spec = resolve_scenario(args.scenario)
    cfg = bench.BenchConfig(spec, solver=args.solver, runs=args.runs, seed=args.seed, t_a=args.t_a,
                            t_max=args.t_max, hs=tuple(args.h) if args.h else None, schedule=_schedule(args))
    rows = bench.monte_carlo_add(cfg)
    return _emit("add", bench.ADD_HEADER, rows, args.out)


def cmd_bench_scale(args) -> int:
    cfg = bench.ScaleConfig(Ms=tuple(args.M), trials=args.trials, batch=args.batch, seed=args.seed,
                            exact_cap=args.exact_cap)
    rows = bench.runtime_scaling(cfg)
    return _emit("scale", bench.SCALE_HEADER, rows, args.out)


def _emit(name, header, rows, out) -> int:
    if out:
        for p in bench.report({name: (header, rows)}, out):
            print(f"wrote {p}")
    print(",".join(header))
    for r in rows:
        print(",".join(bench._cell(r[k]) for k in header))
    return 0


def cmd_gen_data(args) -> int:
    if args.appendix:
        text = appendix_dump()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return 0
    spec = resolve_scenario(args.scenario)
    X = spec.stream(args.T, seed=args.seed)
    out = Path(args.out or "stream.csv")
    write_stream_csv(out, X)
    write_matrix(out.with_suffix(".H.txt"), spec.model.H)
    print(f"wrote {out} ({X.shape[0]} x {X.shape[1]}) and {out.with_suffix('.H.txt')}")
    return 0


def cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(only=set(args.only) if args.only else None)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rosguard", description="Robust sparse-change CUSUM detection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run the detector on one stream and write a run log")
    _common(p)
    p.add_argument("--stream", help="CSV of observations (default: simulate from the scenario)")
    p.add_argument("--T", type=int, default=1000, help="simulated stream length")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--h", type=float, nargs=1)
    g.add_argument("--gamma", type=float, nargs=1, default=[100.0])
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("bench-fap", help="Monte Carlo false-alarm period per threshold")
    _common(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--t-max", type=int, default=10_000)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--gamma", type=float, nargs="+")
    g.add_argument("--h", type=float, nargs="+")
    p.set_defaults(fn=cmd_bench_fap)

    p = sub.add_parser("bench-add", help="Monte Carlo detection delay per threshold")
    _common(p)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--t-a", type=int, default=1)
    p.add_argument("--t-max", type=int, default=10_000)
    p.add_argument("--h", type=float, nargs="+")
    p.set_defaults(fn=cmd_bench_add)

    p = sub.add_parser("bench-scale", help="solver wall time versus dimension")
    p.add_argument("--M", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--exact-cap", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench_scale)

    p = sub.add_parser("gen-data", help="simulate a stream to CSV, or dump the IEEE-14 data")
    _common(p, solver=False)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--appendix", action="store_true", help="print the IEEE-14 region-4 data instead")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", type=int, nargs="+", help="criterion numbers to run")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    np.set_printoptions(precision=6)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"rosguard: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
