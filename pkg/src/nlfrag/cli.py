"""Command line entry point: ``nlfrag {run,validate,constants,converge,oracle}``.

Exit status: 0 success, 1 a check failed, 2 bad configuration or arguments,
3 the integration stalled (step-size underflow), 4 resource budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, backend
from .config import emit_config, load_config
from .errors import BudgetError, ConfigError, FragError, HorizonExceededError, StiffnessError
from .kernels import constant_rows, constants_power_law

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_STIFF, EXIT_BUDGET = 0, 1, 2, 3, 4

log = logging.getLogger("nlfrag")


# ------------------------------------------------------------------ output


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g17(v) -> str:
    return "%.17g" % v


def order_label(m: float) -> str:
    return f"mu_{m:g}"


def moments_csv(times, columns: dict) -> str:
    buf = io.StringIO()
    buf.write(",".join(["t"] + [order_label(m) for m in columns]) + "\n")
    for k, t in enumerate(times):
        buf.write(",".join([_g17(t)] + [_g17(col[k]) for col in columns.values()]) + "\n")
    return buf.getvalue()


def trajectory_moments_csv(traj, orders) -> str:
    series = traj.output_moments(orders)
    return moments_csv(series.times, {m: series[m] for m in orders})


def snapshots_csv(traj) -> str:
    g = traj.grid
    buf = io.StringIO()
    buf.write("t,cell,edge_lo,edge_hi,pivot,density\n")
    for s in traj.states:
        for k in range(g.size):
            buf.write(f"{_g17(s.t)},{k},{_g17(g.edges[k])},{_g17(g.edges[k + 1])},{_g17(g.pivots[k])},"
                      f"{_g17(s.density[k])}\n")
    return buf.getvalue()


def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _manifest(args, cfg, traj, wall, extra=None) -> dict:
    raw = Path(args.config).read_bytes()
    out = {
        "tool": "nlfrag",
        "version": __version__,
        "config_path": str(args.config),
        "config_sha1": git_blob_sha1(raw),
        "config": emit_config(cfg),
        "backend": backend.NAME,
        "threads": args.threads,
        "wall_time_s": wall,
    }
    if traj is not None:
        out.update(stop_reason=traj.stop_reason, stop_time=traj.stop_time, accepted_steps=len(traj.step_times) - 1,
                   rejected_steps=traj.rejected, number_defect=traj.problem.table.number_defect)
        if traj.message:
            out["message"] = traj.message
    out.update(extra or {})
    return out


# ---------------------------------------------------------------- commands


def _simulate(args, cfg):
    from .solver import integrate

    start = time.monotonic()
    try:
        traj, _ = integrate(cfg, threads=args.threads, probe_blowup=args.probe_blowup or None)
    except StiffnessError as exc:
        log.error("%s", exc)
        return None, time.monotonic() - start, exc
    return traj, time.monotonic() - start, None


def _write_run_outputs(out: Path, cfg, traj) -> list[str]:
    orders = tuple(float(m) for m in cfg.run.moments)
    write_atomic(out / "moments.csv", trajectory_moments_csv(traj, orders))
    files = ["moments.csv"]
    if cfg.run.snapshots:
        write_atomic(out / "snapshots.csv", snapshots_csv(traj))
        files.append("snapshots.csv")
    return files


def _stiff_outputs(out, args, cfg, exc, wall):
    """Moments up to the last accepted step, then the manifest."""
    traj = exc.trajectory
    if traj is not None:
        orders = tuple(float(m) for m in cfg.run.moments)
        series = traj.with_orders(orders)
        keep = np.isin(series.times, [s.t for s in traj.states])
        keep[-1] = True
        write_atomic(out / "moments.csv", moments_csv(series.times[keep], {m: series[m][keep] for m in orders}))
    write_atomic(out / "manifest.json", _json(_manifest(args, cfg, None, wall, {
        "stop_reason": "stiffness", "message": str(exc)})))


def cmd_run(args, cfg) -> int:
    out = Path(args.out)
    traj, wall, exc = _simulate(args, cfg)
    if exc is not None:
        _stiff_outputs(out, args, cfg, exc, wall)
        return EXIT_STIFF
    files = _write_run_outputs(out, cfg, traj)
    write_atomic(out / "manifest.json", _json(_manifest(args, cfg, traj, wall, {"files": files + ["manifest.json"]})))
    print(f"{traj.stop_reason} at t = {traj.stop_time!r}; wrote {', '.join(files + ['manifest.json'])} to {out}")
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    from .validation import run_checks

    out = Path(args.out)
    traj, wall, exc = _simulate(args, cfg)
    if exc is not None:
        _stiff_outputs(out, args, cfg, exc, wall)
        return EXIT_STIFF
    files = _write_run_outputs(out, cfg, traj)
    reports, line = run_checks(cfg, traj, self_test=args.self_test or None)
    ok = all(r.passed for r in reports)
    report = {"horizon": line, "self_test": bool(args.self_test or cfg.validate.self_test),
              "stop_reason": traj.stop_reason, "stop_time": traj.stop_time,
              "checks": [r.to_dict() for r in reports], "all_passed": ok}
    write_atomic(out / "report.json", _json(report))
    write_atomic(out / "manifest.json", _json(_manifest(args, cfg, traj, wall,
                                                        {"files": files + ["report.json", "manifest.json"]})))
    print(f"T_gamma_sigma = {line['value']} ({line['regime']})")
    for r in reports:
        print(f"{r.verdict.upper():4s} {r.name}: violation {r.max_violation:.3e} (tolerance {r.tolerance:.1e})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_constants(args) -> int:
    ms = args.m or [None]
    rows, seen = [], set()
    for m in ms:
        c = constants_power_law(args.nu, m=m, sigma1=args.sigma1, alpha=args.alpha, p=args.p)
        for row in constant_rows(c):
            if row[0] not in seen:
                seen.add(row[0])
                rows.append(row)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "value", "anchor"])
    writer.writerows((name, repr(float(value)), anchor) for name, value, anchor in rows)
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_converge(args, cfg) -> int:
    from .oracle import convergence_study

    orders = tuple(float(m) for m in cfg.run.moments if m not in (0.0, 1.0)) or (2.0,)
    start = time.monotonic()
    study = convergence_study(cfg, levels=args.levels, moment_orders=orders, threads=args.threads)
    buf = io.StringIO()
    buf.write("cells,max_relative_moment_error,observed_order\n")
    for k, (c, e) in enumerate(zip(study.cells, study.errors)):
        rate = study.orders[k - 1] if k else float("nan")
        buf.write(f"{c},{_g17(e)},{_g17(rate)}\n")
    out = Path(args.out)
    write_atomic(out / "convergence.csv", buf.getvalue())
    write_atomic(out / "manifest.json", _json(_manifest(args, cfg, None, time.monotonic() - start, {
        "reference_cells": study.reference_cells, "moment_orders": list(orders), "monotone": study.monotone})))
    print(buf.getvalue(), end="")
    return EXIT_OK if study.monotone else EXIT_CHECK_FAILED


def cmd_oracle(args, cfg) -> int:
    from .config import build_grid, build_initial, output_times
    from .oracle import hierarchy_from_state, solve_hierarchy

    if cfg.breakage.type != "power_law" or cfg.kernel.sigma1 != 0.0 or cfg.kernel.sigma2 != 0.0:
        log.error("the moment hierarchy needs power-law breakage and sigma1 = sigma2 = 0")
        return EXIT_CONFIG
    start = time.monotonic()
    state = build_initial(cfg, build_grid(cfg))
    top = max(3, int(math.ceil(max(cfg.run.moments))))
    h = hierarchy_from_state(state, cfg.breakage.nu, cfg.kernel.kappa, top)
    times = np.concatenate(([0.0], output_times(cfg)))
    mu = solve_hierarchy(h, times)
    out = Path(args.out)
    write_atomic(out / "oracle_moments.csv", moments_csv(times, {float(m): mu[:, m] for m in range(top + 1)}))
    write_atomic(out / "manifest.json", _json(_manifest(args, cfg, None, time.monotonic() - start,
                                                        {"files": ["oracle_moments.csv", "manifest.json"]})))
    print(f"wrote oracle_moments.csv (orders 0..{top}) to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlfrag", description="Collision-induced fragmentation solver and bound checks")
    ap.add_argument("--version", action="version", version=f"nlfrag {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def sim(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="configuration file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--threads", type=_positive_int, default=1, help="worker threads for the pair sums")
        return p

    p = sim("run", "integrate a configuration and write moments")
    p.add_argument("--probe-blowup", action="store_true", help="allow T beyond the existence horizon")
    p = sim("validate", "integrate and evaluate the bound checks")
    p.add_argument("--probe-blowup", action="store_true", help="allow T beyond the existence horizon")
    p.add_argument("--self-test", action="store_true", help="corrupt constants; some checks must fail")
    p = sim("converge", "refinement study against a finer reference grid")
    p.add_argument("--levels", type=_positive_int, default=3, help="number of grids (configured one and coarser)")
    sim("oracle", "solve the closed moment hierarchy (constant collision rate)")

    p = sub.add_parser("constants", help="print the closed-form constants of the power-law kernel")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--m", type=float, action="append", help="moment order (repeatable)")
    p.add_argument("--sigma1", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--p", type=float)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "constants":
            return cmd_constants(args)
        args.probe_blowup = getattr(args, "probe_blowup", False)
        cfg = load_config(args.config, args.probe_blowup)
        handler = {"run": cmd_run, "validate": cmd_validate, "converge": cmd_converge, "oracle": cmd_oracle}
        return handler[args.command](args, cfg)
    except ConfigError as exc:
        print(f"{args.config if hasattr(args, 'config') else ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HorizonExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except StiffnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STIFF
    except (FragError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
