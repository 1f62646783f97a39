"""Command-line front end: ``chnl {run,sweep,calibrate,check,emit-plot-data,version}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("chnl")

EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2
# files whose bytes carry wall-clock timings; listed in the manifest but flagged
VOLATILE = {"sweep_result.csv", "timings.json"}


class UsageError(Exception):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, extra=None) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            rel = p.relative_to(out_dir).as_posix()
            entries.append({"path": rel, "sha256": sha256_file(p), "deterministic": p.name not in VOLATILE})
    doc = {"command": command, "version": __version__, "artifacts": entries}
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _out_dir(args, cfg=None) -> Path:
    out = args.out or (cfg["output"] if cfg is not None else None)
    if not out:
        raise UsageError("an output directory is required (--out)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# subcommands


def cmd_run(args) -> int:
    from .config import parse_config
    from .plotting import run_figure
    from .solvers import run

    cfg = parse_config(args.config)
    if args.print_config:
        sys.stdout.write(cfg.to_yaml())
        return EXIT_OK
    out = _out_dir(args, cfg)
    (out / "config.yaml").write_text(cfg.to_yaml())
    model = cfg.model()
    u0 = cfg.initial().field(cfg.grid())
    traj, rec, state = run(model, cfg.solver_config(), u0, out_dir=out,
                           diag_every=cfg["solver"]["diag_every"])
    rec.header.update({"seed": cfg.seed, "config": cfg.source})
    rec.to_csv(out / "diagnostics.csv")
    (out / "events.json").write_text(json.dumps(_jsonable(state.events), indent=2) + "\n")
    if not args.no_figures:
        run_figure(traj, rec, out / "figures" / "run.png")
    write_manifest(out, "run", {"seed": cfg.seed, "trajectory_sha256": traj.digest()})
    print(f"{model.system}: {state.step} steps to t = {state.t:g}; mass drift {rec.mass_drift():.3e}; "
          f"energy increases {rec.energy_violations()}; bound events {len(state.events)}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import PRESETS, eps_label, qualitative_flags, run_sweep

    if bool(args.config) == bool(args.preset):
        raise UsageError("sweep needs exactly one of CONFIG or --preset")
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        plan = PRESETS[args.preset]()
        text = None
    else:
        from .config import parse_config

        cfg = parse_config(args.config, sweep_mode=True)
        if args.print_config:
            sys.stdout.write(cfg.to_yaml())
            return EXIT_OK
        plan = cfg.sweep_plan()
        text = cfg.to_yaml()
    out = _out_dir(args)
    if text:
        (out / "config.yaml").write_text(text)
    result, outcomes = run_sweep(plan, out, figures=not args.no_figures)
    flags = {e: qualitative_flags(outcomes[eps_label(e)].trajectory, outcomes["local"].trajectory)
             for e in result.eps}
    with open(out / "sweep_errors.csv", "w") as fh:
        fh.write("eps,t,err_l2,err_h1,rel_err_l2\n")
        for e in result.eps:
            for t in result.times:
                fh.write(f"{e!r},{t!r},{result.err_l2[(e, t)]!r},{result.err_h1[(e, t)]!r},"
                         f"{result.err_l2[(e, t)] / result.local_norm_l2[t]!r}\n")
    (out / "qualitative_flags.json").write_text(json.dumps(_jsonable(flags), indent=2, sort_keys=True) + "\n")
    (out / "orders.json").write_text(json.dumps(_jsonable({"l2": result.order_l2, "h1": result.order_h1}),
                                                indent=2, sort_keys=True) + "\n")
    write_manifest(out, "sweep", {"plan": plan.name, "u0_sha256": result.u0_hash})
    for t in result.times:
        errs = ", ".join(f"eps={e:g}: {result.err_l2[(e, t)]:.3e}" for e in result.eps)
        print(f"t = {t:g}: L2 errors {errs}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .grid import TorusGrid
    from .kernels import MollifierProfile, moments
    from .nonlocal_ops import calibrate_limit_constant
    from .plotting import calibration_figure

    out = _out_dir(args)
    profile = MollifierProfile(args.profile)
    L = args.L if args.L is not None else 2 * math.pi
    grid = TorusGrid(args.d, args.n, L)
    eps = sorted(args.eps, reverse=True)
    if len(eps) < 3:
        raise UsageError("calibrate needs at least three eps values")
    rep = calibrate_limit_constant(args.op, profile, args.alpha, eps, grid)
    with open(out / "calibration.csv", "w") as fh:
        fh.write("eps,error,c_eff,order\n")
        for row in rep.rows():
            fh.write(",".join(repr(float(row[k])) for k in ("eps", "error", "c_eff", "order")) + "\n")
    moments(profile, args.alpha, args.d).to_csv(out / "moments.csv")
    if not args.no_figures:
        calibration_figure(rep, out / "figures" / "calibration.png")
    write_manifest(out, "calibrate")
    print(f"{args.op}: c_eff = {rep.c_eff:.10g}, {rep.reference_name} = {rep.c_reference:.10g}, "
          f"ratio {rep.ratio_to_reference:.8f}, order {rep.order:.3f}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_battery

    report = run_battery(seed=args.seed)
    out = _out_dir(args)
    timing = {"runtime_s": report.pop("runtime_s")}
    (out / "check_report.json").write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    (out / "timings.json").write_text(json.dumps(timing) + "\n")
    write_manifest(out, "check", {"seed": args.seed})
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        kind = "hard" if c["hard"] else "soft"
        print(f"{status} [{kind}] {c['name']}: {c['value']:.3e} (tol {c['tol']:g})")
    if not report["ok"]:
        print(f"{len(report['hard_failures'])} hard identity failure(s)", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_emit(args) -> int:
    from .snapshots import snapshot_to_csv

    out = _out_dir(args)
    for snap in args.snapshots:
        p = Path(snap)
        if not p.is_file():
            raise UsageError(f"no such snapshot: {p}")
        rows = snapshot_to_csv(p, out / (p.stem + ".csv"))
        print(f"{p} -> {out / (p.stem + '.csv')} ({rows} rows)")
    write_manifest(out, "emit-plot-data")
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"chnl {__version__}")
    print(f"python {platform.python_version()}")
    for dep in ("numpy", "scipy", "matplotlib", "PyYAML"):
        try:
            print(f"{dep} {metadata.version(dep)}")
        except metadata.PackageNotFoundError:
            print(f"{dep} (not installed)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chnl", description="Nonlocal and local Cahn-Hilliard / adhesion solvers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one system from a YAML config")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--print-config", action="store_true", help="print the validated config and exit")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="nonlocal-to-local comparison over an eps ladder")
    p.add_argument("config", nargs="?")
    p.add_argument("--preset", help="named plan (smooth_well, degenerate)")
    p.add_argument("--out")
    p.add_argument("--print-config", action="store_true")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit the local-limit constant of B or K")
    p.add_argument("--op", choices=("B", "K"), required=True)
    p.add_argument("--profile", default="compact_bump", choices=("compact_bump", "truncated_gaussian"))
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--n", type=int, default=16384)
    p.add_argument("--L", type=float)
    p.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("check", help="run the exact-identity battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("emit-plot-data", help="convert CHNL1 snapshots to CSV")
    p.add_argument("snapshots", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("version", help="print build metadata")
    p.set_defaults(func=cmd_version)
    return ap


def main(argv=None) -> int:
    from .config import ConfigError
    from .physics import AdmissibilityError
    from .solvers import SolverAbort, SolverError

    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, AdmissibilityError, FileNotFoundError) as exc:
        print(f"chnl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverAbort as exc:
        print(f"chnl {args.command}: aborted: {exc}", file=sys.stderr)
        if exc.dump_path:
            print(f"state dump: {exc.dump_path}", file=sys.stderr)
        return EXIT_ABORT
    except SolverError as exc:
        # refused before stepping (e.g. dt above the stability bound)
        print(f"chnl {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"chnl {args.command}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
