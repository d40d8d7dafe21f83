"""Scenario configuration: JSON schema, defaults, validation and sources.

A config is a flat JSON object.  Unknown keys are rejected so typos surface
as errors instead of silently falling back to defaults.  Every validation
failure is reported as ``(field_path, reason)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import ConfigError

SCHEMES = ("linear", "quadratic")
COUPLINGS = ("slaved", "literal")
TIME_SCHEMES = ("product", "natural")


@dataclass
class ScenarioConfig:
    """Geometry, material, source and discretization parameters.

    Defaults are the desk-scale values; :meth:`paper_scale` returns the
    full-resolution preset.
    """

    r: float = 0.25
    K_cell: list = field(default_factory=lambda: [[0.1, 0.0], [0.0, 0.1]])
    kappa: list = field(default_factory=lambda: [[0.1, 0.0], [0.0, 0.1]])
    theta0: Any = 0.0
    vartheta0: Any = 0.0
    theta_ref: float = 0.0
    v_speed: float = 0.1
    T_end: float = 2.0
    dt: float = 0.1
    H_M: float = 0.1
    H_m: float = 0.12
    macro_pattern: str = "crossed"
    source: Any = field(default_factory=lambda: {"kind": "moving_square"})
    micro_source: Any = field(default_factory=lambda: {"kind": "zero"})
    h_margin: float = 0.005
    # interpolant and the table it is built from
    scheme: str = "quadratic"
    table_path: str | None = None
    h_min: float = -0.245
    h_max: float = 0.245
    N: int = 320
    H_cell: float = 5e-3
    # solver variants
    coupling: str = "slaved"
    time_scheme: str = "product"

    @classmethod
    def paper_scale(cls, **overrides) -> "ScenarioConfig":
        base = dict(T_end=10.0, H_M=0.05, H_m=0.06, H_cell=5e-4)
        base.update(overrides)
        return cls(**base)

    # -- (de)serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, paper_scale: bool = False) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError([("", "config must be a JSON object")])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError([(k, "unknown field") for k in unknown])
        cfg = cls.paper_scale(**data) if paper_scale else cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, paper_scale: bool = False) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"invalid JSON: {exc}")]) from exc
        except OSError as exc:
            raise ConfigError([("", f"cannot read config: {exc}")]) from exc
        return cls.from_dict(data, paper_scale=paper_scale)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def digest(self, *fields_: str) -> str:
        """Stable hash of the config (or of selected fields) for caching."""
        d = self.to_dict()
        if fields_:
            d = {k: d[k] for k in fields_}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # -- validation -------------------------------------------------------------
    def validate(self) -> None:
        errs = []

        def num(name, lo=None, hi=None, lo_open=True, hi_open=False):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                errs.append((name, "must be a finite number"))
                return False
            if lo is not None and (v <= lo if lo_open else v < lo):
                errs.append((name, f"must be {'>' if lo_open else '>='} {lo}"))
                return False
            if hi is not None and (v >= hi if hi_open else v > hi):
                errs.append((name, f"must be {'<' if hi_open else '<='} {hi}"))
                return False
            return True

        num("r", 0.0, 0.5, hi_open=True)
        num("dt", 0.0)
        num("T_end", 0.0)
        num("H_M", 0.0, 1.0)
        num("H_m", 0.0)
        num("H_cell", 0.0, 0.25)
        num("v_speed", 0.0, lo_open=False)
        num("theta_ref")
        num("h_margin", 0.0, lo_open=False)
        if num("h_min") and num("h_max") and self.h_min >= self.h_max:
            errs.append(("h_max", "must exceed h_min"))
        if isinstance(self.r, (int, float)) and isinstance(self.H_m, (int, float)) and self.H_m >= self.r:
            errs.append(("H_m", "micro mesh size must be below the radius"))
        if not isinstance(self.N, int) or isinstance(self.N, bool) or self.N < 2:
            errs.append(("N", "must be an integer >= 2"))
        for name in ("K_cell", "kappa"):
            try:
                m = np.asarray(getattr(self, name), dtype=float)
                if m.shape != (2, 2) or not np.all(np.isfinite(m)):
                    raise ValueError
            except (TypeError, ValueError):
                errs.append((name, "must be a finite 2x2 matrix"))
        if self.scheme not in SCHEMES:
            errs.append(("scheme", f"must be one of {SCHEMES}"))
        if self.coupling not in COUPLINGS:
            errs.append(("coupling", f"must be one of {COUPLINGS}"))
        if self.time_scheme not in TIME_SCHEMES:
            errs.append(("time_scheme", f"must be one of {TIME_SCHEMES}"))
        if self.macro_pattern not in ("crossed", "diagonal"):
            errs.append(("macro_pattern", "must be 'crossed' or 'diagonal'"))
        if self.table_path is not None and not isinstance(self.table_path, str):
            errs.append(("table_path", "must be a string or null"))
        for name in ("theta0", "vartheta0"):
            errs.extend(_check_field_spec(name, getattr(self, name)))
        errs.extend(_check_source(["source"], self.source, macro=True))
        errs.extend(_check_source(["micro_source"], self.micro_source, macro=False))
        if errs:
            raise ConfigError(errs)


# -- initial data and sources -------------------------------------------------

def _check_field_spec(name, spec):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return [] if math.isfinite(spec) else [(name, "must be finite")]
    if isinstance(spec, dict) and spec.get("kind") == "bump":
        bad = [k for k in spec if k not in ("kind", "center", "radius", "amplitude")]
        out = [(f"{name}.{k}", "unknown field") for k in bad]
        try:
            c = np.asarray(spec.get("center", [0.5, 0.5]), dtype=float)
            rad = float(spec.get("radius", 0.25))
            amp = float(spec.get("amplitude", 1.0))
            if c.shape != (2,) or rad <= 0 or not math.isfinite(amp):
                raise ValueError
        except (TypeError, ValueError):
            out.append((name, "bump needs center [x, y], radius > 0 and finite amplitude"))
        return out
    return [(name, "must be a number or {'kind': 'bump', ...}")]


def _check_source(path, spec, macro):
    p = ".".join(path)
    if not isinstance(spec, dict) or "kind" not in spec:
        return [(p, "must be an object with a 'kind'")]
    kind = spec["kind"]
    allowed = {"zero": (), "constant": ("value",)}
    if macro:
        allowed["moving_square"] = ("amplitude", "speed", "t_off")
    if kind not in allowed:
        return [(f"{p}.kind", f"must be one of {sorted(allowed)}")]
    out = [(f"{p}.{k}", "unknown field") for k in spec if k != "kind" and k not in allowed[kind]]
    for k in allowed[kind]:
        if k in spec:
            v = spec[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                out.append((f"{p}.{k}", "must be a finite number"))
    if kind == "constant" and "value" not in spec:
        out.append((f"{p}.value", "required"))
    return out


def field_function(spec):
    """Evaluable initial field ``g(points) -> values`` from a config spec."""
    if isinstance(spec, (int, float)):
        val = float(spec)
        return lambda p: np.full(np.shape(p)[:-1], val)
    c = np.asarray(spec.get("center", [0.5, 0.5]), dtype=float)
    rad = float(spec.get("radius", 0.25))
    amp = float(spec.get("amplitude", 1.0))

    def bump(p):
        q = ((np.asarray(p) - c) ** 2).sum(axis=-1) / rad**2
        return amp * np.where(q < 1.0, (1.0 - q) ** 2, 0.0)

    return bump


def moving_square_source(x, t, amplitude=0.75, speed=0.6 / 5.0, t_off=5.0):
    """Smoothed square step moving right along ``y = 0.7`` and switching off
    at ``t_off``: ``0.75 clip(g) clip(5 - t)`` with
    ``g = 2 - 10 |x - (0.2 + 0.12 t, 0.7)|_inf``."""
    x = np.asarray(x, dtype=float)
    cx = 0.2 + speed * t
    g = 2.0 - 10.0 * np.maximum(np.abs(x[..., 0] - cx), np.abs(x[..., 1] - 0.7))
    return amplitude * np.clip(g, 0.0, 1.0) * min(max(t_off - t, 0.0), 1.0)


def macro_source(spec):
    """``F(x, t)`` callable from a config spec, or ``None`` when zero."""
    kind = spec["kind"]
    if kind == "zero":
        return None
    if kind == "constant":
        val = float(spec["value"])
        return lambda x, t: np.full(np.shape(x)[:-1], val)
    kw = {k: float(v) for k, v in spec.items() if k != "kind"}
    return lambda x, t: moving_square_source(x, t, **kw)


def micro_source(spec):
    """``f(y_moved, t)`` callable (same value for every macro point), or ``None``."""
    if spec["kind"] == "zero":
        return None
    val = float(spec["value"])
    return lambda y, t: np.full(np.shape(y)[:-1], val)
