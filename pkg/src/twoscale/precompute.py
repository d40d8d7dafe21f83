"""Offline phase: sampled conductivity tables and their interpolants.

A :class:`ConductivityTable` holds ``K(h_i)`` on a uniform grid.  The
interpolant is a scikit-learn style regressor (``fit`` on heights and the
three independent tensor components, ``predict`` returns components), so it
can be validated, cloned and compared like any other estimator.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from . import __version__
from .cell import effective_conductivity, resolve_h_cell
from .exceptions import FormatError, MetadataMismatch, SampleFailed, TwoScaleError

FORMAT_NAME = "twoscale-conductivity-table"
FORMAT_VERSION = 1


def components(K) -> np.ndarray:
    """``(..., 2, 2)`` tensors to ``(..., 3)`` components ``K11, K12, K22``."""
    K = np.asarray(K, dtype=float)
    return np.stack([K[..., 0, 0], 0.5 * (K[..., 0, 1] + K[..., 1, 0]), K[..., 1, 1]], axis=-1)


def tensors(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    out = np.empty(c.shape[:-1] + (2, 2))
    out[..., 0, 0] = c[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = c[..., 1]
    out[..., 1, 1] = c[..., 2]
    return out


@dataclass
class ConductivityTable:
    h_grid: np.ndarray
    K_values: np.ndarray  # (N+1, 2, 2)
    meta: dict = field(default_factory=dict)
    h_cell: np.ndarray | None = None  # mesh size used per sample

    @property
    def N(self) -> int:
        return len(self.h_grid) - 1

    @property
    def dh(self) -> float:
        return float(self.h_grid[-1] - self.h_grid[0]) / self.N

    def validate(self) -> None:
        h = np.asarray(self.h_grid, dtype=float)
        K = np.asarray(self.K_values, dtype=float)
        if h.ndim != 1 or len(h) < 3:
            raise FormatError("height grid needs at least 3 samples")
        if K.shape != (len(h), 2, 2) or not np.all(np.isfinite(K)):
            raise FormatError("conductivity values must be finite 2x2 tensors, one per height")
        steps = np.diff(h)
        if np.any(steps <= 0):
            raise FormatError("height grid must be strictly increasing")
        if np.max(np.abs(steps - (h[-1] - h[0]) / (len(h) - 1))) > 1e-14:
            raise FormatError("height grid is not uniform")
        if np.max(np.abs(K - np.swapaxes(K, 1, 2))) > 1e-10:
            raise FormatError("conductivity tensors are not symmetric")
        if np.linalg.eigvalsh(0.5 * (K + np.swapaxes(K, 1, 2))).min() <= 0:
            raise FormatError("conductivity tensors are not positive definite")

    def subsample(self, step: int) -> "ConductivityTable":
        """Every ``step``-th sample; ``N`` must be divisible by ``step``."""
        if step < 1 or self.N % step:
            raise ValueError(f"N={self.N} is not divisible by {step}")
        meta = dict(self.meta, N=self.N // step)
        hc = None if self.h_cell is None else self.h_cell[::step]
        return ConductivityTable(self.h_grid[::step].copy(), self.K_values[::step].copy(), meta, hc)

    def coarsen_to(self, N: int) -> "ConductivityTable":
        return self.subsample(self.N // N) if N != self.N else self

    def to_csv(self, path) -> None:
        c = components(self.K_values)
        with open(path, "w") as fh:
            fh.write("h,K11,K12,K22\n")
            for h, row in zip(self.h_grid, c):
                fh.write(",".join(repr(float(v)) for v in (h, *row)) + "\n")


def grid(h_min: float, h_max: float, N: int) -> np.ndarray:
    return np.linspace(h_min, h_max, N + 1)


def _sample(args):
    h, H_cell, K_cell, r = args
    try:
        et = effective_conductivity(h, H_cell, K_cell, r=r)
    except TwoScaleError as exc:
        raise SampleFailed(h, exc) from exc
    except (ValueError, MemoryError) as exc:
        raise SampleFailed(h, exc) from exc
    return et.k, et.h_cell


def build_table(h_min: float, h_max: float, N: int, H_cell: float, K_cell=0.1, r: float = 0.25,
                workers: int = 1, progress=None) -> ConductivityTable:
    """Solve the cell problem at ``N + 1`` uniform heights.

    Samples are independent; with ``workers > 1`` they run in a process pool
    and results are collected in grid order, so the table does not depend on
    the worker count.
    """
    if N < 2:
        raise ValueError("need N >= 2")
    for h in (h_min, h_max):
        rho = r + h
        if not (0 < rho < 0.5) or 2 * resolve_h_cell(rho, H_cell) >= min(rho, 0.5 - rho):
            raise ValueError(f"height {h} is outside the meshable range for r={r}")
    hs = grid(h_min, h_max, N)
    K_cell = np.asarray(K_cell, dtype=float)
    jobs = [(float(h), H_cell, K_cell, r) for h in hs]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            for k, res in enumerate(ex.map(_sample, jobs)):
                results.append(res)
                if progress:
                    progress(k, hs[k], res[0])
    else:
        for k, job in enumerate(jobs):
            results.append(_sample(job))
            if progress:
                progress(k, hs[k], results[-1][0])
    K = np.array([res[0] for res in results])
    hc = np.array([res[1] for res in results])
    meta = dict(r=float(r), K_cell=K_cell.tolist() if K_cell.ndim else float(K_cell),
                H_cell=float(H_cell), h_min=float(h_min), h_max=float(h_max), N=int(N),
                version=__version__)
    table = ConductivityTable(hs, K, meta, hc)
    table.validate()
    return table


def save_table(table: ConductivityTable, path) -> None:
    """Single JSON document; floats are written with ``repr`` so loading is bit exact."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": table.meta,
        "h": [float(x) for x in table.h_grid],
        "K": [[float(v) for v in k.ravel()] for k in table.K_values],
    }
    if table.h_cell is not None:
        doc["h_cell"] = [float(x) for x in table.h_cell]
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, path)


def _same(a, b) -> bool:
    return np.allclose(np.asarray(a, dtype=float) * np.ones((2, 2)), np.asarray(b, dtype=float) * np.ones((2, 2)),
                       rtol=1e-12, atol=0)


def load_table(path, r: float | None = None, K_cell=None) -> ConductivityTable:
    """Read a table and check it against the active ``r`` and cell conductivity."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read table {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise FormatError("not a conductivity table")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported table version {doc.get('version')}")
    try:
        h = np.array(doc["h"], dtype=float)
        K = np.array(doc["K"], dtype=float).reshape(-1, 2, 2)
        meta = dict(doc["meta"])
        hc = np.array(doc["h_cell"], dtype=float) if "h_cell" in doc else None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed table: {exc}") from exc
    table = ConductivityTable(h, K, meta, hc)
    table.validate()
    if r is not None and ("r" not in meta or not np.isclose(meta["r"], r, rtol=1e-12, atol=0)):
        raise MetadataMismatch(f"table radius {meta.get('r')} does not match r={r}")
    if K_cell is not None and ("K_cell" not in meta or not _same(meta["K_cell"], K_cell)):
        raise MetadataMismatch(f"table conductivity {meta.get('K_cell')} does not match {K_cell}")
    return table


# -- interpolation --------------------------------------------------------------

class ConductivityInterpolator(RegressorMixin, BaseEstimator):
    """Interpolant of ``K(h)`` with constant extension outside the sampled range.

    ``scheme='linear'`` is the piecewise linear interpolant.  ``'quadratic'``
    is the C^1 quadratic spline with knots at sample midpoints.  Its two free
    end conditions are set by ``end``: ``'not-a-knot'`` drops the first and
    last midpoint knot, ``'linear'`` makes the first and last pieces linear.

    ``fit(h, K)`` takes heights of shape ``(n,)`` or ``(n, 1)`` and components
    ``(n, 3)`` ordered ``K11, K12, K22``; ``predict`` returns the same layout.
    """

    def __init__(self, scheme: str = "quadratic", end: str = "linear"):
        self.scheme = scheme
        self.end = end

    def fit(self, X, y):
        if self.scheme not in ("linear", "quadratic"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.end not in ("not-a-knot", "linear"):
            raise ValueError(f"unknown end condition {self.end!r}")
        X, y = check_X_y(np.reshape(X, (-1, 1)), y, multi_output=True, y_numeric=True)
        y = y.reshape(len(y), -1)
        h = X[:, 0]
        if np.any(np.diff(h) <= 0):
            raise ValueError("heights must be strictly increasing")
        if len(h) < 3:
            raise ValueError("need at least 3 samples")
        self.h_ = h
        self.values_ = y
        self.n_features_in_ = 1
        if self.scheme == "quadratic":
            if self.end == "not-a-knot":
                self.spline_ = make_interp_spline(h, y, k=2)
            else:
                mid = 0.5 * (h[1:] + h[:-1])
                t = np.r_[[h[0]] * 3, mid, [h[-1]] * 3]
                nc = y.shape[1]
                self.spline_ = make_interp_spline(h, y, k=2, t=t,
                                                  bc_type=([(2, np.zeros(nc))], [(2, np.zeros(nc))]))
        return self

    def predict(self, X):
        check_is_fitted(self, "values_")
        h = check_array(np.reshape(X, (-1, 1)), ensure_all_finite=True)[:, 0]
        return self._eval(h)

    def _eval(self, h):
        hc = np.clip(h, self.h_[0], self.h_[-1])
        if self.scheme == "linear":
            return np.column_stack([np.interp(hc, self.h_, self.values_[:, k]) for k in range(self.values_.shape[1])])
        out = self.spline_(hc)
        # node values exactly, independent of spline round-off
        idx = np.searchsorted(self.h_, hc)
        hit = (idx < len(self.h_)) & (self.h_[np.minimum(idx, len(self.h_) - 1)] == hc)
        out[hit] = self.values_[idx[hit]]
        return out

    def derivative(self, h):
        """``dK/dh`` components (zero outside the sampled range)."""
        check_is_fitted(self, "values_")
        h = np.asarray(h, dtype=float).ravel()
        inside = (h >= self.h_[0]) & (h <= self.h_[-1])
        if self.scheme == "linear":
            slopes = np.diff(self.values_, axis=0) / np.diff(self.h_)[:, None]
            k = np.clip(np.searchsorted(self.h_, h, side="right") - 1, 0, len(slopes) - 1)
            d = slopes[k]
        else:
            d = self.spline_.derivative()(np.clip(h, self.h_[0], self.h_[-1]))
        d[~inside] = 0.0
        return d

    def tensor(self, h):
        """Interpolated ``(..., 2, 2)`` tensors, symmetric by construction."""
        h = np.asarray(h, dtype=float)
        return tensors(self._eval(h.ravel()).reshape(h.shape + (3,)))


Interpolant = ConductivityInterpolator


def make_interpolant(table: ConductivityTable, scheme: str = "quadratic", end: str = "linear"):
    return ConductivityInterpolator(scheme=scheme, end=end).fit(table.h_grid, components(table.K_values))


def interp(ipl: ConductivityInterpolator, h):
    """Interpolated tensor at ``h`` (scalar or array)."""
    return ipl.tensor(h)


def estimate_interp_error(coarse, reference, n_probe: int = 1000, lo: float | None = None,
                          hi: float | None = None) -> float:
    """Max entrywise ``|K_coarse - K_ref|`` over ``n_probe`` uniform probes.

    The probe interval defaults to the reference sample range.
    """
    lo = reference.h_[0] if lo is None else lo
    hi = reference.h_[-1] if hi is None else hi
    probes = np.linspace(lo, hi, n_probe)
    return float(np.max(np.abs(coarse.predict(probes) - reference.predict(probes))))


def table_filename(h_min, h_max, N, H_cell, K_cell=0.1, r=0.25) -> str:
    k = np.asarray(K_cell, dtype=float)
    ktag = f"{float(k):g}" if k.ndim == 0 else "-".join(f"{x:g}" for x in k.ravel())
    return f"table_r{r:g}_K{ktag}_H{H_cell:g}_h{h_min:g}_{h_max:g}_N{N}.json"


def cached_table(directory, h_min, h_max, N, H_cell, K_cell=0.1, r=0.25, workers=1, progress=None):
    """Load the matching table from ``directory`` or build and store it."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, table_filename(h_min, h_max, N, H_cell, K_cell, r))
    if os.path.exists(path):
        try:
            return load_table(path, r=r, K_cell=K_cell)
        except (FormatError, MetadataMismatch):
            pass
    table = build_table(h_min, h_max, N, H_cell, K_cell, r, workers=workers, progress=progress)
    save_table(table, path)
    return table
