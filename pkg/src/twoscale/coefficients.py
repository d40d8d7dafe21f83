"""Closed-form macro coefficients for disk inclusions and assumption checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import HeightOutOfRange


@dataclass(frozen=True)
class MacroCoefficients:
    C: np.ndarray
    L: np.ndarray
    dC_dh: np.ndarray
    dL_dh: np.ndarray


def macro_coeffs(h, r: float, check: bool = True) -> MacroCoefficients:
    """Heat capacity ``C = 1 - pi (r+h)^2``, interface length ``L = 2 pi (r+h)``
    and their derivatives.  Vectorized over ``h``."""
    h = np.asarray(h, dtype=float)
    rho = r + h
    if check and (np.any(rho <= 0.0) or np.any(rho >= 0.5)):
        bad = h[(rho <= 0.0) | (rho >= 0.5)].ravel()[0]
        raise HeightOutOfRange(f"h={bad:.6g} puts the inclusion radius outside (0, 0.5)", value=float(bad))
    return MacroCoefficients(
        C=1.0 - math.pi * rho**2,
        L=2.0 * math.pi * rho,
        dC_dh=-2.0 * math.pi * rho,
        dL_dh=np.full_like(rho, 2.0 * math.pi),
    )


@dataclass
class AssumptionReport:
    passed: bool
    failures: list = field(default_factory=list)  # (label, reason)

    def __bool__(self):
        return self.passed


def _spd(m) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2) or not np.all(np.isfinite(m)) or not np.allclose(m, m.T, atol=1e-14):
        return False
    return bool(np.linalg.eigvalsh(m).min() > 0)


def validate_assumptions(config) -> AssumptionReport:
    """Check the structural assumptions on a scenario.

    A1: both conductivities symmetric positive definite.
    A2: sources finite and bounded.
    A3: reference inclusion compactly inside the unit cell.
    A4: initial data bounded.
    """
    from .config import field_function, macro_source, micro_source

    fails = []
    if not _spd(config.K_cell):
        fails.append(("A1", "cell conductivity is not symmetric positive definite"))
    if not _spd(config.kappa):
        fails.append(("A1", "micro conductivity is not symmetric positive definite"))

    probe = np.stack(np.meshgrid(np.linspace(0, 1, 21), np.linspace(0, 1, 21)), axis=-1)
    try:
        F = macro_source(config.source)
        f = micro_source(config.micro_source)
        for t in np.linspace(0.0, config.T_end, 11):
            for src in (F, f):
                if src is not None and not np.all(np.isfinite(src(probe, t))):
                    raise ValueError
    except (KeyError, TypeError, ValueError):
        fails.append(("A2", "source is not finite"))

    r = config.r
    if not (isinstance(r, (int, float)) and 0 < r < 0.5):
        fails.append(("A3", f"inclusion radius {r} is not compactly inside the unit cell"))

    try:
        for spec in (config.theta0, config.vartheta0):
            if not np.all(np.isfinite(field_function(spec)(probe))):
                raise ValueError
    except (AttributeError, TypeError, ValueError):
        fails.append(("A4", "initial data is not bounded"))
    return AssumptionReport(passed=not fails, failures=fails)
