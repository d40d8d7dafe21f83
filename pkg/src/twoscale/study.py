"""Convergence studies: refinement ladders, reference runs and order fits."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ScenarioConfig
from .coupled import Trajectory, error_norms, run_simulation
from .exceptions import ConfigError, HeightOutOfRange
from .mesh import disk_mesh_rings, square_mesh_from_divisions
from .precompute import ConductivityTable, estimate_interp_error, make_interpolant

KINDS = ("dh", "dt", "macro_mesh", "micro_mesh", "interp_boundary")
FIELDS = ("errTheta", "errVartheta", "errH")


@dataclass
class StudySpec:
    """``ladder`` holds the refined parameter per level.

    dh: table sizes ``N`` (so ``dh = 1/N``); dt: time steps; macro_mesh:
    divisions per side of the macro square; micro_mesh: rings of the disk
    mesh; interp_boundary: upper ends ``h_max`` of the probe interval.
    """

    kind: str
    ladder: list
    reference: float | int
    scheme: str = "linear"
    out: str | None = None
    # interp_boundary only: table sizes used for each order fit
    dh_ladder: list = field(default_factory=lambda: [10, 20, 40, 80])

    def validate(self):
        errs = []
        if self.kind not in KINDS:
            errs.append(("kind", f"must be one of {KINDS}"))
        lad = list(self.ladder)
        if not lad:
            errs.append(("ladder", "must not be empty"))
        d = np.diff(np.asarray(lad, dtype=float))
        if len(lad) > 1 and not (np.all(d > 0) or np.all(d < 0)):
            errs.append(("ladder", "must be strictly monotone"))
        if self.kind != "interp_boundary" and lad:
            finer = _finer(self.kind)
            if not all(finer(self.reference, v) for v in lad):
                errs.append(("reference", "must be strictly finer than every ladder entry"))
        if self.scheme not in ("linear", "quadratic"):
            errs.append(("scheme", "must be 'linear' or 'quadratic'"))
        if errs:
            raise ConfigError(errs)


def _finer(kind):
    if kind == "dt":
        return lambda ref, v: ref < v
    return lambda ref, v: ref > v  # N, divisions, rings


def level_size(kind: str, value) -> float:
    """Step size represented by a ladder value (used for order fits)."""
    if kind == "dh":
        return 1.0 / value
    if kind == "dt":
        return float(value)
    if kind == "macro_mesh":
        return 1.0 / value
    if kind == "micro_mesh":
        return 1.0 / value
    return float(value)


@dataclass
class ErrorReport:
    kind: str
    parameter: list
    errors: dict  # field -> list per level
    orders: dict  # field -> fitted order or None
    residuals: dict  # field -> least-squares residual or None
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("level,errTheta,errVartheta,errH\n")
            for k, p in enumerate(self.parameter):
                row = [self.errors[f][k] for f in FIELDS]
                fh.write(f"{_num(p)}," + ",".join(repr(float(v)) for v in row) + "\n")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


def _num(x):
    return "" if x is None else repr(float(x))


def fit_order(sizes, errors):
    """Least-squares slope of ``log(err)`` against ``log(size)``.

    Returns ``(order, residual)``; ``(None, None)`` with fewer than two usable
    levels.
    """
    s = np.asarray(sizes, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = (e > 0) & np.isfinite(e)
    if ok.sum() < 2:
        return None, None
    x, y = np.log(s[ok]), np.log(e[ok])
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return float(coef[0]), res


def local_orders(sizes, errors):
    """Orders between consecutive levels, coarse to fine."""
    idx = np.argsort(sizes)[::-1]
    s = np.asarray(sizes, dtype=float)[idx]
    e = np.asarray(errors, dtype=float)[idx]
    return np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])


def pre_plateau(sizes, errors, break_factor: float = 0.5, min_order: float = 1.0):
    """Indices of the leading levels (coarse to fine) before the curve flattens.

    A level starts the plateau when the local order into it drops below
    ``break_factor`` times the previous local order, or below ``min_order``.
    """
    idx = np.argsort(sizes)[::-1]
    p = local_orders(sizes, errors)
    n = len(idx)
    for k, pk in enumerate(p):
        if not np.isfinite(pk) or pk < min_order or (k > 0 and pk < break_factor * p[k - 1]):
            n = k + 1
            break
    return [int(i) for i in idx[:n]]


# -- running ----------------------------------------------------------------------

class StudyRunner:
    """Runs ladders against a cached reference.

    ``table`` is the finest conductivity table.  References are cached as
    ``.npz`` files in ``cache_dir``, keyed by a hash of the config, the
    discretization and the table values.  With ``workers > 1`` the ladder
    levels run in a process pool; results do not depend on the worker count.
    """

    def __init__(self, config: ScenarioConfig, table: ConductivityTable, cache_dir: str | None = None,
                 workers: int = 1):
        self.config = config
        self.table = table
        self.cache_dir = cache_dir
        self.workers = workers

    def _key(self, cfg, **extra):
        payload = dict(cfg.to_dict(), table=hashlib.sha256(np.ascontiguousarray(self.table.K_values)).hexdigest(),
                       grid=[float(self.table.h_grid[0]), float(self.table.h_grid[-1]), self.table.N], **extra)
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def _level(self, kind, value, scheme, reference=False):
        """``(config, interpolant, macro divisions, micro rings)`` of one level."""
        cfg = self.config
        ipl = make_interpolant(self.table, "quadratic")
        div = rings = None
        if kind == "dh":
            ipl = make_interpolant(self.table.coarsen_to(int(value)), "quadratic" if reference else scheme)
        elif kind == "dt":
            cfg = cfg.replace(dt=float(value))
        elif kind == "macro_mesh":
            div = int(value)
        else:
            rings = int(value)
        return cfg, ipl, div, rings

    def reference(self, spec: StudySpec) -> Trajectory:
        cfg, ipl, div, rings = self._level(spec.kind, spec.reference, spec.scheme, reference=True)
        path = None
        if self.cache_dir:
            key = self._key(cfg, kind=spec.kind, ref=spec.reference)
            os.makedirs(self.cache_dir, exist_ok=True)
            path = os.path.join(self.cache_dir, f"ref_{key}.npz")
            if os.path.exists(path):
                return Trajectory.load(path)
        traj = _simulate(cfg, ipl, div, rings)
        if path:
            tmp = f"{path}.tmp{os.getpid()}.npz"
            traj.save(tmp)
            os.replace(tmp, path)
        return traj

    def run(self, spec: StudySpec) -> ErrorReport:
        spec.validate()
        if spec.kind == "interp_boundary":
            return self.interp_boundary(spec)
        ref = self.reference(spec)
        jobs = [self._level(spec.kind, v, spec.scheme) for v in spec.ladder]
        if self.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(min(self.workers, len(jobs))) as ex:
                trajs = list(ex.map(_simulate_job, jobs))
        else:
            trajs = [_simulate_job(j) for j in jobs]
        errs = {f: [] for f in FIELDS}
        for traj in trajs:
            e = error_norms(traj, ref)
            for f in FIELDS:
                errs[f].append(e[f])
        sizes = [level_size(spec.kind, v) for v in spec.ladder]
        orders, resid = {}, {}
        for f in FIELDS:
            orders[f], resid[f] = fit_order(sizes, errs[f])
        report = ErrorReport(spec.kind, list(spec.ladder), errs, orders, resid,
                             extra={"reference": spec.reference, "scheme": spec.scheme})
        levels, pre_orders = {}, {}
        for f in FIELDS:
            if len(sizes) > 1 and all(e > 0 for e in errs[f]):
                pre = pre_plateau(sizes, errs[f])
                levels[f] = pre
                pre_orders[f] = fit_order([sizes[i] for i in pre], [errs[f][i] for i in pre])[0]
            else:
                levels[f], pre_orders[f] = list(range(len(sizes))), orders[f]
        report.extra["pre_plateau_levels"] = levels
        report.extra["pre_plateau_orders"] = pre_orders
        if spec.out:
            write_report(report, spec.out)
        return report

    def interp_boundary(self, spec: StudySpec) -> ErrorReport:
        return interp_boundary_study(self.table, spec.ladder, spec.dh_ladder, out=spec.out)


def _simulate(cfg, ipl, divisions=None, rings=None) -> Trajectory:
    macro = None if divisions is None else square_mesh_from_divisions(int(divisions), cfg.macro_pattern)
    micro = None if rings is None else disk_mesh_rings(cfg.r, rings)
    traj = run_simulation(cfg, ipl, macro, micro)
    if not traj.summary["completed"]:
        raise HeightOutOfRange(traj.summary["message"], node=traj.summary.get("node"),
                               time=traj.summary.get("time"), value=traj.summary.get("value"))
    return traj


def _simulate_job(job):
    return _simulate(*job)


def interp_boundary_study(table: ConductivityTable, h_max_ladder, dh_ladder=(10, 20, 40, 80),
                          n_probe: int = 1000, lower: float | None = None, out: str | None = None) -> ErrorReport:
    """Interpolation order of ``K`` on ``[-h_max, h_max]`` for each ``h_max``.

    The reference is the quadratic spline through the full table.  For each
    scheme, the sup error over ``n_probe`` uniform probes is fitted against
    ``dh = 1/N``.  A fixed ``lower`` replaces ``-h_max`` as the left end.
    """
    ref = make_interpolant(table, "quadratic")
    sizes = [1.0 / n for n in dh_ladder]
    errors = {}
    orders = {}
    resid = {}
    for scheme in ("linear", "quadratic"):
        per = []
        o, rs = [], []
        for hm in h_max_ladder:
            lo = -hm if lower is None else lower
            e = [estimate_interp_error(make_interpolant(table.coarsen_to(n), scheme), ref, n_probe, lo, hm)
                 for n in dh_ladder]
            per.append(e)
            fo, fr = fit_order(sizes, e)
            o.append(fo)
            rs.append(fr)
        errors[scheme] = per
        orders[scheme] = o
        resid[scheme] = rs
    report = ErrorReport("interp_boundary", list(h_max_ladder), errors, orders, resid,
                         extra={"dh_ladder": list(dh_ladder), "lower": lower, "n_probe": n_probe})
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "interp_boundary.csv"), "w") as fh:
            fh.write("h_max,scheme," + ",".join(f"err_N{n}" for n in dh_ladder) + ",order\n")
            for scheme in ("linear", "quadratic"):
                for hm, e, o in zip(h_max_ladder, errors[scheme], orders[scheme]):
                    fh.write(f"{_num(hm)},{scheme}," + ",".join(repr(float(x)) for x in e) + f",{_num(o)}\n")
        report.to_json(os.path.join(out, "interp_boundary.json"))
        from .svg import loglog_chart

        series = []
        for scheme in ("linear", "quadratic"):
            for hm, e in zip(h_max_ladder, errors[scheme]):
                series.append((f"{scheme} h_max={hm}", sizes, e))
        with open(os.path.join(out, "interp_boundary.svg"), "w") as fh:
            fh.write(loglog_chart(series, "dh", "sup error", "Interpolation error near the cell boundary"))
    return report


def write_report(report: ErrorReport, out: str):
    from .svg import loglog_chart

    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, f"study_{report.kind}.csv"))
    report.to_json(os.path.join(out, f"study_{report.kind}.json"))
    sizes = [level_size(report.kind, v) for v in report.parameter]
    series = [(f, sizes, report.errors[f]) for f in FIELDS]
    label = {"dh": "dh", "dt": "dt", "macro_mesh": "H_M", "micro_mesh": "H_m / r"}.get(report.kind, "size")
    with open(os.path.join(out, f"study_{report.kind}.svg"), "w") as fh:
        fh.write(loglog_chart(series, label, "error", f"Convergence: {report.kind}"))


def default_spec(kind: str, scheme: str = "linear") -> StudySpec:
    """Desk-scale ladders."""
    if kind == "dh":
        return StudySpec("dh", [10, 20, 40, 80], 320, scheme)
    if kind == "dt":
        return StudySpec("dt", [0.4, 0.2, 0.1, 0.05], 0.0125, scheme)
    if kind == "macro_mesh":
        return StudySpec("macro_mesh", [4, 8, 16, 32], 64, scheme)
    if kind == "micro_mesh":
        return StudySpec("micro_mesh", [2, 4, 8], 16, scheme)
    if kind == "interp_boundary":
        return StudySpec("interp_boundary", [0.10, 0.18, 0.23, 0.245], math.nan, scheme)
    raise ValueError(kind)


__all__ = ["StudySpec", "ErrorReport", "StudyRunner", "fit_order", "pre_plateau", "interp_boundary_study",
           "default_spec"]
