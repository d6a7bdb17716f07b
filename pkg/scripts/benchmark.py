#!/usr/bin/env python3
"""Benchmark table: certified bounds per instance, mode and horizon, next to Monte Carlo.

Writes CSV to stdout (or --out).  Obstacle instances use the stacked (meta)
mode as their time-invariant counterpart.
"""

import argparse
import csv
import sys
import time

from sbcert.certify import META, TIME_INVARIANT, TIME_VARYING, synthesize
from sbcert.oracle import McConfig, mc_safety
from sbcert.systems import BUILTIN_NAMES, builtin_system

COLUMNS = ("system", "mode", "horizon", "degree", "bound", "status", "solve_time_s", "mc_estimate", "mc_ci_high")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--systems", default="unstable1d,unstable1d-obstacle,unstable2d,vanderpol,vanderpol-1obs,"
                    "lotka-volterra", help=f"comma list from: {', '.join(BUILTIN_NAMES)}")
    ap.add_argument("--horizons", default="5,10")
    ap.add_argument("--degree", type=int, default=4)
    ap.add_argument("--trajectories", type=int, default=100_000, help="0 skips Monte Carlo")
    ap.add_argument("--time-budget", type=float, default=1000.0)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(COLUMNS)
    for name in args.systems.split(","):
        for H in (int(h) for h in args.horizons.split(",")):
            inst = builtin_system(name, H)
            mc = mc_safety(inst, McConfig(trajectories=args.trajectories)) if args.trajectories else None
            fixed = META if inst.obstacles else TIME_INVARIANT
            for mode in (fixed, TIME_VARYING):
                t0 = time.perf_counter()
                cert, bound = synthesize(inst, mode, args.degree, time_limit=args.time_budget)
                w.writerow([name, mode, H, args.degree, f"{bound.lower_bound:.6g}", cert.status,
                            f"{time.perf_counter() - t0:.1f}", f"{mc.estimate:.6g}" if mc else "",
                            f"{mc.ci_high:.6g}" if mc else ""])
                out.flush()
    if args.out:
        out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
