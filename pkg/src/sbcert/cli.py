"""Command-line front end: synthesis, Monte Carlo, grid DP and mode comparison.

Rows are written in (horizon, degree, mode) order whatever the worker count.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .certify import META, TIME_INVARIANT, TIME_VARYING, synthesize
from .oracle import (
    SAMPLINGS,
    WORST_CASE_GRID,
    McConfig,
    UnsupportedInstance,
    dp_row,
    dp_safety,
    estimates_csv,
    fmt,
    mc_row,
    mc_safety,
)
from .sdp import DEFAULT_TOL, INFEASIBLE, OPTIMAL
from .systems import BUILTIN_NAMES, InstanceFileError, SafetyInstance, UnknownSystem, builtin_system, load_instance

OUTPUT_DIR_ENV = "SBCERT_OUTPUT_DIR"
TIMEOUT = "timeout"
SYNTH_COLUMNS = ("system", "mode", "degree", "horizon", "alpha", "beta_sum", "bound", "mc_estimate", "solve_time_s", "status")
COMPARE_EXTRA = ("mc_ci_low", "mc_ci_high")
MODE_NAMES = {"ti": TIME_INVARIANT, "meta": META, "tv": TIME_VARYING}

log = logging.getLogger("sbcert")


@dataclass(frozen=True)
class RunSpec:
    """One CLI invocation after argument parsing."""

    command: str
    instance_ref: str
    from_file: bool
    modes: tuple[str, ...] = ()
    horizons: tuple[int, ...] = (10,)
    degrees: tuple[int, ...] = (4,)
    out: str | None = None
    seed: int = 0
    tol: float = DEFAULT_TOL
    trajectories: int = 100_000
    time_budget: float = 1000.0
    workers: int = 1
    with_mc: bool = False
    sampling: str = WORST_CASE_GRID
    point: tuple[float, ...] | None = None
    cells: tuple[int, ...] = (200,)
    timing: bool = True
    curves: str | None = None

    def __post_init__(self):
        if not self.horizons or not self.degrees:
            raise ValueError("horizon and degree lists must be nonempty")
        if min(self.horizons) < 0:
            raise ValueError("horizons must be nonnegative")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must be nonempty")
    return vals


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated number list, got {text!r}")


def _mode_list(text: str) -> tuple[str, ...]:
    vals = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in vals if v not in MODE_NAMES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"modes must be among {', '.join(MODE_NAMES)}")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group(required=True)
    src.add_argument("--system", help=f"builtin instance: {', '.join(BUILTIN_NAMES)}")
    src.add_argument("--file", help="instance definition file (TOML)")
    common.add_argument("--horizon", type=_int_list, default=(10,), help="comma list of horizons")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help=f"CSV path (default: ${OUTPUT_DIR_ENV}/<command>_<system>.csv, else stdout)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    synth_opts = argparse.ArgumentParser(add_help=False)
    synth_opts.add_argument("--degree", type=_int_list, default=(4,), help="comma list of barrier degrees")
    synth_opts.add_argument("--tol", type=float, default=DEFAULT_TOL)
    synth_opts.add_argument("--time-budget", type=float, default=1000.0, help="per-solve wall-clock limit in seconds")
    synth_opts.add_argument("--omit-timing", action="store_true", help="leave solve_time_s empty for reproducible output")
    synth_opts.add_argument("--curves", help="also write per-horizon bound curves to this CSV")

    mc_opts = argparse.ArgumentParser(add_help=False)
    mc_opts.add_argument("--trajectories", type=int, default=100_000)
    mc_opts.add_argument("--sampling", choices=SAMPLINGS, default=WORST_CASE_GRID)
    mc_opts.add_argument("--point", type=_float_list, help="start point for fixed-point sampling")

    p = argparse.ArgumentParser(prog="sbcert", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common, synth_opts, mc_opts], help="synthesize barrier certificates")
    s.add_argument("--mode", type=_mode_list, default=("tv",), help="comma list of ti, meta, tv")
    s.add_argument("--mc", action="store_true", help="fill mc_estimate with a Monte Carlo run")
    sub.add_parser("mc", parents=[common, mc_opts], help="Monte Carlo safety estimate")
    d = sub.add_parser("dp", parents=[common], help="grid dynamic-programming safety estimate (dim <= 2)")
    d.add_argument("--cells", type=_int_list, default=(200,), help="cells per dimension (one value or one per dimension)")
    sub.add_parser("compare", parents=[common, synth_opts, mc_opts],
                   help="time-invariant (meta with obstacles) vs time-varying, with Monte Carlo")
    return p


def spec_from_args(args) -> RunSpec:
    return RunSpec(
        command=args.command,
        instance_ref=args.system or args.file,
        from_file=args.file is not None,
        modes=getattr(args, "mode", ()),
        horizons=args.horizon,
        degrees=getattr(args, "degree", (4,)),
        out=args.out,
        seed=args.seed,
        tol=getattr(args, "tol", DEFAULT_TOL),
        trajectories=getattr(args, "trajectories", 100_000),
        time_budget=getattr(args, "time_budget", 1000.0),
        workers=max(1, args.workers),
        with_mc=getattr(args, "mc", False) or args.command == "compare",
        sampling=getattr(args, "sampling", WORST_CASE_GRID),
        point=getattr(args, "point", None),
        cells=getattr(args, "cells", (200,)),
        timing=not getattr(args, "omit_timing", False),
        curves=getattr(args, "curves", None),
    )


def load(spec: RunSpec) -> SafetyInstance:
    if spec.from_file:
        return load_instance(spec.instance_ref)
    return builtin_system(spec.instance_ref)


def _mc_config(spec: RunSpec) -> McConfig:
    return McConfig(trajectories=spec.trajectories, seed=spec.seed, initial_sampling=spec.sampling, point=spec.point)


def _synth_cell(job) -> dict:
    inst, mode, degree, tol, budget = job
    cert, bound = synthesize(inst, MODE_NAMES[mode], degree, tol=tol, time_limit=budget)
    st = cert.stats
    status = TIMEOUT if st.timed_out else cert.status
    if st.message and status != OPTIMAL:
        log.warning("%s %s degree %d H %d: %s", inst.name, mode, degree, inst.horizon, st.message)
    return {
        "alpha": cert.alpha if cert.ok else None,
        "beta_sum": sum(cert.betas) if cert.ok else None,
        "bound": bound.lower_bound,
        "time": st.solve_time + st.build_time,
        "status": status,
    }


def _mc_cell(job):
    inst, cfg = job
    return mc_safety(inst, cfg)


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _opt(v) -> str:
    return "" if v is None else fmt(v)


def _modes_for(spec: RunSpec, inst: SafetyInstance) -> tuple[str, ...]:
    if spec.command == "compare":
        return ("meta" if inst.obstacles else "ti", "tv")
    for m in spec.modes:
        if m == "ti" and inst.obstacles:
            raise ValueError("ti mode does not handle moving obstacles; use meta or tv")
    return spec.modes


def run_synth(spec: RunSpec, inst: SafetyInstance) -> tuple[str, bool]:
    modes = _modes_for(spec, inst)
    cells = [(H, d, m) for H in spec.horizons for d in spec.degrees for m in modes]
    results = _pool_map(_synth_cell, [(inst.with_horizon(H), m, d, spec.tol, spec.time_budget) for H, d, m in cells],
                        spec.workers)
    mc = {}
    if spec.with_mc:
        hs = list(spec.horizons)
        cfg = _mc_config(spec)
        mc = dict(zip(hs, _pool_map(_mc_cell, [(inst.with_horizon(H), cfg) for H in hs], spec.workers)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra = spec.command == "compare"
    w.writerow(SYNTH_COLUMNS + (COMPARE_EXTRA if extra else ()))
    for (H, d, m), r in zip(cells, results):
        row = [inst.name, m, str(d), str(H), _opt(r["alpha"]), _opt(r["beta_sum"]), fmt(r["bound"]),
               fmt(mc[H].estimate) if H in mc else "", f"{r['time']:.3f}" if spec.timing else "", r["status"]]
        if extra:
            row += [fmt(mc[H].ci_low), fmt(mc[H].ci_high)]
        w.writerow(row)
    if spec.curves:
        _write_curves(spec.curves, inst, cells, results)
    ok = all(r["status"] in (OPTIMAL, INFEASIBLE) for r in results)
    return buf.getvalue(), ok


def _write_curves(path, inst, cells, results):
    """Long-format bound per horizon, one series per (mode, degree)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("system", "mode", "degree", "horizon", "bound"))
    for (H, d, m), r in sorted(zip(cells, results), key=lambda t: (t[0][2], t[0][1], t[0][0])):
        w.writerow((inst.name, m, d, H, fmt(r["bound"])))
    _emit(path, buf.getvalue())


def run_mc(spec: RunSpec, inst: SafetyInstance) -> tuple[str, bool]:
    cfg = _mc_config(spec)
    rows = [mc_row(mc_safety(inst.with_horizon(H), cfg, workers=spec.workers)) for H in spec.horizons]
    return estimates_csv(rows), True


def run_dp(spec: RunSpec, inst: SafetyInstance) -> tuple[str, bool]:
    cells = spec.cells[0] if len(spec.cells) == 1 else spec.cells
    rows = []
    for H in spec.horizons:
        h_inst = inst.with_horizon(H)
        rows.append(dp_row(h_inst, dp_safety(h_inst, cells)))
    return estimates_csv(rows), True


def _emit(path: str | None, text: str):
    if path is None:
        sys.stdout.write(text)
        return
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def output_path(spec: RunSpec, inst: SafetyInstance) -> str | None:
    if spec.out:
        return spec.out
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base:
        return os.path.join(base, f"{spec.command}_{inst.name}.csv")
    return None


def run(spec: RunSpec) -> int:
    """Execute a run; exit code 0 iff every requested run completed."""
    inst = load(spec)
    if spec.from_file and inst.name == "custom":
        inst = replace(inst, name=os.path.splitext(os.path.basename(spec.instance_ref))[0])
    runner = {"synth": run_synth, "compare": run_synth, "mc": run_mc, "dp": run_dp}[spec.command]
    text, ok = runner(spec, inst)
    _emit(output_path(spec, inst), text)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = spec_from_args(args)
        return run(spec)
    except InstanceFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UnknownSystem, UnsupportedInstance, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, UnknownSystem) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
