"""Command-line front end.

Exit codes: 0 ok, 2 config error, 3 numerical failure (a ``diagnostic.json``
is written to the output directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback

import numpy as np

from .config import ScenarioConfig
from .exceptions import (ConfigError, FormatError, HeightOutOfRange, MeshError, MetadataMismatch,
                         SampleFailed, SolverError)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load_config(args) -> ScenarioConfig:
    if args.config:
        return ScenarioConfig.load(args.config, paper_scale=args.paper_scale)
    cfg = ScenarioConfig.paper_scale() if args.paper_scale else ScenarioConfig()
    cfg.validate()
    return cfg


_T0 = time.perf_counter()


def _progress(i, h, K):
    print(f"sample {i}: h={h:+.6f} K11={K[0, 0]:.8f} ({time.perf_counter() - _T0:.1f}s)", flush=True)


def _table(cfg: ScenarioConfig, args, quiet=False):
    from .precompute import cached_table, load_table

    path = getattr(args, "table", None) or cfg.table_path
    if path:
        return load_table(path, r=cfg.r, K_cell=cfg.K_cell)
    cache = os.path.join(args.out, "cache")
    return cached_table(cache, cfg.h_min, cfg.h_max, cfg.N, cfg.H_cell, cfg.K_cell, cfg.r,
                        workers=args.workers, progress=None if quiet else _progress)


# -- subcommands ---------------------------------------------------------------

def cmd_precompute(args) -> int:
    from .precompute import build_table, save_table

    cfg = _load_config(args)
    h_min = cfg.h_min if args.h_min is None else args.h_min
    h_max = cfg.h_max if args.h_max is None else args.h_max
    N = cfg.N if args.N is None else args.N
    table = build_table(h_min, h_max, N, cfg.H_cell, cfg.K_cell, cfg.r, workers=args.workers,
                        progress=_progress)
    os.makedirs(args.out, exist_ok=True)
    save_table(table, os.path.join(args.out, "table.json"))
    table.to_csv(os.path.join(args.out, "table.csv"))
    print(f"wrote {N + 1} samples to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .coupled import run_simulation
    from .precompute import make_interpolant
    from .svg import line_chart

    cfg = _load_config(args)
    table = _table(cfg, args)
    ipl = make_interpolant(table, cfg.scheme)
    t0 = time.perf_counter()
    traj = run_simulation(cfg, ipl, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    traj.save(os.path.join(args.out, "trajectory.npz"))
    summary = dict(traj.summary, wall_time=time.perf_counter() - t0, config=cfg.to_dict())
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
    with open(os.path.join(args.out, "history.csv"), "w") as fh:
        fh.write("t,theta_min,theta_max,h_min,h_max\n")
        for t, th, h in zip(traj.times, traj.theta, traj.h):
            fh.write(",".join(repr(float(v)) for v in (t, th.min(), th.max(), h.min(), h.max())) + "\n")
    with open(os.path.join(args.out, "history.svg"), "w") as fh:
        fh.write(line_chart([("max Theta", traj.times, traj.theta.max(axis=1)),
                             ("max h", traj.times, traj.h.max(axis=1)),
                             ("min h", traj.times, traj.h.min(axis=1))], "t", "value", "Simulation history"))
    if not traj.summary["completed"]:
        _diagnostic(args.out, "height_out_of_range", traj.summary.get("message", ""),
                    {k: traj.summary.get(k) for k in ("node", "time", "value")})
        return EXIT_NUMERIC
    print(f"completed {traj.summary['steps']} steps; h in [{traj.summary['h_min']:.4g}, "
          f"{traj.summary['h_max']:.4g}]")
    return EXIT_OK


def _study_spec(args):
    from .study import default_spec

    spec = default_spec(args.kind, args.scheme)
    if args.spec:
        try:
            with open(args.spec) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([("spec", str(exc))]) from exc
        unknown = sorted(set(data) - {"ladder", "reference", "scheme", "dh_ladder"})
        if unknown:
            raise ConfigError([(f"spec.{k}", "unknown field") for k in unknown])
        for k, v in data.items():
            setattr(spec, k, v)
    spec.out = args.out
    spec.validate()
    return spec


def cmd_study(args) -> int:
    from .study import StudyRunner

    cfg = _load_config(args)
    spec = _study_spec(args)
    table = _table(cfg, args)
    runner = StudyRunner(cfg, table, cache_dir=os.path.join(args.out, "cache"), workers=args.workers)
    report = runner.run(spec)
    _print_report(report)
    return EXIT_OK


def _print_report(report):
    if report.kind == "interp_boundary":
        for scheme, orders in report.orders.items():
            for hm, o in zip(report.parameter, orders):
                print(f"{scheme:9s} h_max={hm:<6g} order={_fmt(o)}")
        return
    print("level,errTheta,errVartheta,errH")
    for k, p in enumerate(report.parameter):
        print(f"{p}," + ",".join(f"{report.errors[f][k]:.4e}" for f in report.errors))
    for f, o in report.orders.items():
        print(f"order {f}: {_fmt(o)} (residual {_fmt(report.residuals[f])})")


def _fmt(x):
    return "undefined" if x is None else f"{x:.3f}"


def cmd_cell_curve(args) -> int:
    from .cell import effective_conductivity
    from .svg import line_chart

    cfg = _load_config(args)
    hs = np.linspace(args.h_min, args.h_max, args.samples)
    H = cfg.H_cell if args.H_cell is None else args.H_cell
    rows = []
    for h in hs:
        K = effective_conductivity(float(h), H, cfg.K_cell, cfg.r).k
        rows.append((float(h), K[0, 0], K[0, 1], K[1, 1]))
        print(f"h={h:+.5f} K11={K[0, 0]:.8f}", flush=True)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "cell_curve.csv"), "w") as fh:
        fh.write("h,K11,K12,K22\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    arr = np.array(rows)
    with open(os.path.join(args.out, "cell_curve.svg"), "w") as fh:
        fh.write(line_chart([("K11", arr[:, 0], arr[:, 1]), ("K22", arr[:, 0], arr[:, 3])], "h", "K",
                            "Effective conductivity"))
    if args.check_monotone:
        bad = np.flatnonzero(np.diff(arr[:, 1]) >= 0)
        if bad.size:
            _diagnostic(args.out, "not_monotone", "K11 is not strictly decreasing in h",
                        {"h": arr[bad, 0].tolist()})
            return EXIT_NUMERIC
    return EXIT_OK


def cmd_interp_boundary(args) -> int:
    from .study import interp_boundary_study

    cfg = _load_config(args)
    table = _table(cfg, args)
    report = interp_boundary_study(table, args.h_max_ladder, args.dh_ladder, out=args.out)
    _print_report(report)
    return EXIT_OK


# -- plumbing -----------------------------------------------------------------

def _diagnostic(out, kind, message, details=None):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "diagnostic.json")
    with open(path, "w") as fh:
        json.dump({"error": kind, "message": message, "details": details or {}}, fh, indent=2, default=str)
    print(f"numerical failure ({kind}): {message}; see {path}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config (JSON)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--paper-scale", action="store_true", help="use the full-resolution preset")

    p = argparse.ArgumentParser(prog="twoscale", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("precompute", parents=[common], help="build a conductivity table")
    q.add_argument("--h-min", type=float)
    q.add_argument("--h-max", type=float)
    q.add_argument("--N", type=int, help="number of intervals")
    q.set_defaults(func=cmd_precompute)

    q = sub.add_parser("simulate", parents=[common], help="run the coupled simulation")
    q.add_argument("--table", help="table JSON (default: build or reuse one in OUT/cache)")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("study", parents=[common], help="convergence study")
    q.add_argument("kind", choices=["dh", "dt", "macro_mesh", "micro_mesh", "interp_boundary"])
    q.add_argument("--spec", help="JSON with ladder / reference / scheme overrides")
    q.add_argument("--scheme", default="linear", choices=["linear", "quadratic"])
    q.add_argument("--table")
    q.set_defaults(func=cmd_study)

    q = sub.add_parser("cell-curve", parents=[common], help="K(h) samples")
    q.add_argument("--h-min", type=float, default=-0.2)
    q.add_argument("--h-max", type=float, default=0.2)
    q.add_argument("--samples", type=int, default=33)
    q.add_argument("--H-cell", type=float)
    q.add_argument("--check-monotone", action="store_true")
    q.set_defaults(func=cmd_cell_curve)

    q = sub.add_parser("interp-boundary", parents=[common], help="interpolation order near the cell boundary")
    q.add_argument("--h-max-ladder", type=float, nargs="+", default=[0.10, 0.18, 0.23, 0.245])
    q.add_argument("--dh-ladder", type=int, nargs="+", default=[10, 20, 40, 80])
    q.add_argument("--table")
    q.set_defaults(func=cmd_interp_boundary)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("config error: --workers: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, FormatError, MetadataMismatch) as exc:
        for path, reason in getattr(exc, "errors", [("", str(exc))]):
            print(f"config error: {path or '<root>'}: {reason}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # parameter checks in the library (ranges, step multiples)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, HeightOutOfRange, MeshError, SampleFailed, FloatingPointError, np.linalg.LinAlgError) as exc:
        _diagnostic(args.out, type(exc).__name__, str(exc),
                    {"traceback": traceback.format_exc(limit=5), **_exc_details(exc)})
        return EXIT_NUMERIC


def _exc_details(exc):
    return {k: getattr(exc, k) for k in ("node", "time", "value", "h") if hasattr(exc, k)}


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
