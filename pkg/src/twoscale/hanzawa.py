"""Hanzawa coordinate transform for a disk inclusion.

Two variants are provided.  The tubular map ``s_h = y + h psi(y)`` only moves
points inside a collar of width ``a`` around the reference circle and is
admissible for ``|h| <= a/8``.  The radial map scales the whole plane about
the disk center and stays valid for any ``h > -r``.

All functions are vectorized over a trailing ``(..., 2)`` point axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import HeightOutOfRange

# derivative profile of the cut-off: plateau height and knot positions in |t|
_P = 2.5
_T0, _T1, _T2, _T3 = 0.5, 0.6, 0.9, 1.0
_RAMP = 0.1


@dataclass(frozen=True)
class DiskGeometry:
    center: tuple = (0.5, 0.5)
    r: float = 0.25
    a: float | None = None

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("radius must be positive")
        a = self.a
        if a is None:
            a = 0.999 * min(self.r, 0.5 - self.r)
            object.__setattr__(self, "a", float(a))
        if not (0 < a <= min(self.r, 0.5 - self.r) + 1e-15):
            raise ValueError(f"tubular radius a={a} must lie in (0, min(r, 0.5 - r)]")

    @property
    def a_star(self) -> float:
        return self.a / 8.0


def cutoff_chi(t):
    """Cut-off ``chi`` and its derivative.

    ``chi = 1`` on ``|t| <= 1/2`` and ``0`` for ``|t| >= 1``.  In between,
    ``-chi'`` is a trapezoid of height 5/2 with smoothstep ramps of width 0.1,
    so ``chi`` is C^2 and ``|chi'| <= 5/2``.
    """
    t = np.asarray(t, dtype=float)
    tau = np.abs(t)
    value = np.ones_like(tau)
    slope = np.zeros_like(tau)  # d chi / d tau

    s = (tau - _T0) / _RAMP
    m = (tau > _T0) & (tau < _T1)
    value[m] = 1.0 - _P * _RAMP * (s[m] ** 3 - 0.5 * s[m] ** 4)
    slope[m] = -_P * (3 * s[m] ** 2 - 2 * s[m] ** 3)

    m = (tau >= _T1) & (tau <= _T2)
    value[m] = 1.0 - (0.5 * _P * _RAMP + _P * (tau[m] - _T1))
    slope[m] = -_P

    s = (_T3 - tau) / _RAMP
    m = (tau > _T2) & (tau < _T3)
    value[m] = _P * _RAMP * (s[m] ** 3 - 0.5 * s[m] ** 4)
    slope[m] = -_P * (3 * s[m] ** 2 - 2 * s[m] ** 3)

    m = tau >= _T3
    value[m] = 0.0
    slope[m] = 0.0
    return value, np.sign(t) * slope


def _polar(y, geom: DiskGeometry):
    y = np.asarray(y, dtype=float)
    rel = y - np.asarray(geom.center, dtype=float)
    dist = np.sqrt((rel**2).sum(axis=-1))
    if np.any(dist == 0.0):
        raise ValueError("psi is undefined at the disk center")
    n = rel / dist[..., None]
    return rel, dist, n


def psi_and_jacobian(y, geom: DiskGeometry):
    """``psi(y) = n chi(d/a)`` and its Jacobian ``D psi``.

    With ``n = (y - c)/|y - c|`` and ``d = |y - c| - r``:
    ``D psi = chi/|y-c| (I - n n^T) + chi'/a n n^T``.
    """
    _, dist, n = _polar(y, geom)
    chi, dchi = cutoff_chi((dist - geom.r) / geom.a)
    psi = n * chi[..., None]
    nn = n[..., :, None] * n[..., None, :]
    eye = np.eye(2)
    D = (chi / dist)[..., None, None] * (eye - nn) + (dchi / geom.a)[..., None, None] * nn
    return psi, D


def _check_tubular(h, geom):
    if abs(h) > geom.a_star * (1 + 1e-12):
        raise HeightOutOfRange(f"|h|={abs(h):.6g} exceeds a*={geom.a_star:.6g} for the tubular map", value=h)


def map_tubular(y, h: float, geom: DiskGeometry):
    """Return ``(s_h(y), F_h, J_h)`` for the cut-off based map."""
    _check_tubular(h, geom)
    y = np.asarray(y, dtype=float)
    psi, D = psi_and_jacobian(y, geom)
    s = y + h * psi
    F = np.eye(2) + h * D
    J = np.linalg.det(F)
    return s, F, J


def map_radial(y, h: float, geom: DiskGeometry):
    """Return ``(s_h(y), F_h, J_h)`` for the radial scaling ``c + (1 + h/r)(y - c)``."""
    if not h > -0.99 * geom.r:
        raise HeightOutOfRange(f"h={h:.6g} collapses the disk (radius {geom.r})", value=h)
    y = np.asarray(y, dtype=float)
    lam = 1.0 + h / geom.r
    c = np.asarray(geom.center, dtype=float)
    s = c + lam * (y - c)
    F = np.broadcast_to(lam * np.eye(2), y.shape[:-1] + (2, 2)).copy()
    J = np.full(y.shape[:-1], lam * lam)
    return s, F, J


def h_derivatives(y, h: float, geom: DiskGeometry):
    """``(d/dh F_h^{-1}, d/dh J_h)`` for the tubular map.

    ``d F^{-1} = -F^{-1} D psi F^{-1}`` and, in 2D,
    ``d det(I + h D) = tr D + 2 h det D``.
    """
    _check_tubular(h, geom)
    _, D = psi_and_jacobian(y, geom)
    Finv = np.linalg.inv(np.eye(2) + h * D)
    dFinv = -Finv @ D @ Finv
    dJ = np.trace(D, axis1=-2, axis2=-1) + 2.0 * h * np.linalg.det(D)
    return dFinv, dJ


@dataclass(frozen=True)
class TransformedCoeffs:
    c: np.ndarray
    kappa: np.ndarray
    v: np.ndarray
    f: np.ndarray


def transformed_coeffs(y, h: float, dh_dt: float, kappa_micro, f_source=None,
                       geom: DiskGeometry | None = None, variant: str = "radial"):
    """Pull-back coefficients ``c = J``, ``kappa = J F^-1 kappa F^-T``,
    ``v = J F^-1 d_t s`` and ``f = J f(s_h)`` at points ``y``.

    ``f_source`` is a callable of the moved points (or ``None`` for zero).
    """
    geom = geom or DiskGeometry(center=(0.0, 0.0))
    y = np.asarray(y, dtype=float)
    kap = np.asarray(kappa_micro, dtype=float)
    if variant == "radial":
        s, F, J = map_radial(y, h, geom)
        ds = dh_dt * (y - np.asarray(geom.center)) / geom.r
    elif variant == "tubular":
        s, F, J = map_tubular(y, h, geom)
        psi, _ = psi_and_jacobian(y, geom)
        ds = dh_dt * psi
    else:
        raise ValueError(f"unknown variant {variant!r}")
    Finv = np.linalg.inv(F)
    kappa = J[..., None, None] * (Finv @ kap @ np.swapaxes(Finv, -1, -2))
    kappa = 0.5 * (kappa + np.swapaxes(kappa, -1, -2))
    v = J[..., None] * np.einsum("...ij,...j->...i", Finv, ds)
    f = np.zeros_like(J) if f_source is None else J * np.asarray(f_source(s), dtype=float)
    return TransformedCoeffs(c=J, kappa=kappa, v=v, f=f)


def radial_scalars(h, r: float, dh_dt=0.0):
    """Per-height scalars of the radial map used by the coupled solver:
    ``(c, dc_dh, gamma)`` with ``c = (1+h/r)^2``, ``dc/dh = 2(1+h/r)/r`` and
    ``v(h) = gamma (y - c)``, ``gamma = (1+h/r) dh_dt / r``."""
    lam = 1.0 + np.asarray(h, dtype=float) / r
    return lam * lam, 2.0 * lam / r, lam * np.asarray(dh_dt, dtype=float) / r
