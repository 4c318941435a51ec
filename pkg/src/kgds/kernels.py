"""Kernels E, K0, K1 of the de Sitter integral transform.

All kernels broadcast over ``z``, ``t`` and ``b`` arrays for a scalar mass
``M``.  The hypergeometric argument and its complement are formed from
factored differences so that neither loses digits near the light cone
(``zeta -> 0``) nor for large ``t - b`` (``zeta -> 1``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .errors import DomainError
from .quadrature import integrate
from .specfun import hyp2f1, hyp2f1_excess

LN4 = math.log(4.0)
CONE_RTOL = 1e-12
TOL_SCAN = 1e-10
CONE_MARGIN = 1e-9


@dataclass(frozen=True)
class KernelArg:
    z: float
    t: float
    b: float = 0.0
    M: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.b <= self.t and self.z >= 0.0 and self.M >= 0.0):
            raise DomainError("KernelArg needs 0 <= b <= t, z >= 0, M >= 0")
        if self.z > cone_radius(self.t, self.b) * (1 + CONE_RTOL):
            raise DomainError("KernelArg needs z <= e^{-b} - e^{-t}")

    @property
    def phi(self) -> float:
        return cone_radius(self.t)

    @property
    def zeta(self) -> float:
        q_b, q_t = math.exp(-self.b), math.exp(-self.t)
        return ((q_b - q_t) ** 2 - self.z**2) / ((q_b + q_t) ** 2 - self.z**2)


def cone_radius(t, b=0.0):
    """``e^{-b} - e^{-t}``: radius at time t of the cone issued at time b."""
    t = np.asarray(t, dtype=float)
    b = np.asarray(b, dtype=float)
    out = -np.exp(-b) * np.expm1(-(t - b))
    return float(out) if out.ndim == 0 else out


def _check_mass(M):
    if not np.isfinite(M) or M < 0:
        raise DomainError(f"M must be finite and >= 0, got {M}")


def _geometry(z, t, b):
    """Return ``(A, B, Dz, Bz, zeta, 1 - zeta)`` with A the cone radius."""
    q_b = np.exp(-b)
    q_t = np.exp(-t)
    A = -q_b * np.expm1(-(t - b))
    B = q_b + q_t
    Dz = (A - z) * (A + z)
    Bz = (B - z) * (B + z)
    zeta = Dz / Bz
    one_minus = 4.0 * q_b * q_t / Bz
    return A, B, Dz, Bz, zeta, one_minus


def _e_formula(z, t, b, M):
    """The E formula evaluated without domain checks (broadcasting)."""
    z, t, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z, t, b)))
    _, _, _, Bz, zeta, om = _geometry(z, t, b)
    a = 0.5 - M
    zeta = np.clip(zeta, 0.0, None)
    F = hyp2f1(a, a, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    log_pre = M * (b + t) - M * LN4 + (M - 0.5) * np.log(Bz)
    return np.exp(log_pre) * F


def _scalarize(out, *inputs):
    return float(out) if all(np.ndim(v) == 0 for v in inputs) else out


def kernel_E(z, t, b, M):
    """E(z, t; 0, b; M) on 0 <= b <= t, 0 <= z <= e^{-b} - e^{-t}."""
    _check_mass(M)
    zz, tt, bb = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z, t, b)))
    if np.any(bb < 0) or np.any(bb > tt):
        raise DomainError("E needs 0 <= b <= t")
    A = cone_radius(tt, bb)
    if np.any(zz < 0) or np.any(zz > A * (1 + CONE_RTOL) + 1e-300):
        raise DomainError("E needs 0 <= z <= e^{-b} - e^{-t}")
    zz = np.minimum(zz, A)
    return _scalarize(_e_formula(zz, tt, bb, M), z, t, b)


def kernel_K1(z, t, M):
    """K1(z, t; M) = E(z, t; 0, 0; M)."""
    return kernel_E(z, t, 0.0 * np.asarray(t, dtype=float), M)


def _k0_closed(z, t, M):
    # X*F1 + Y*F2 = -D/2 + zeta*(X*G1 + Y*G2) with G = (F - 1)/zeta, so the
    # 1/D factor of the closed form cancels exactly.
    q = np.exp(-t)
    _, _, _, Bz, zeta, om = _geometry(z, t, np.zeros_like(t))
    zeta = np.clip(zeta, 0.0, None)
    a = 0.5 - M
    X = q - 1.0 + M * (q * q - 1.0 - z * z)
    Y = (1.0 - q * q + z * z) * (0.5 + M)
    G1 = hyp2f1_excess(a, a, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    G2 = hyp2f1_excess(a - 1.0, a, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    log_pre = t * M - M * LN4 + (M - 0.5) * np.log(Bz)
    return np.exp(log_pre) * (-0.5 + (X * G1 + Y * G2) / Bz)


def _k0_literal(z, t, M):
    q = np.exp(-t)
    A, _, D, Bz, zeta, om = _geometry(z, t, np.zeros_like(t))
    a = 0.5 - M
    F1 = hyp2f1(a, a, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    F2 = hyp2f1(-0.5 - M, 0.5 - M, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    bracket = (q - 1.0 + M * (q * q - 1.0 - z * z)) * F1 + (1.0 - q * q + z * z) * (0.5 + M) * F2
    return 4.0**-M * np.exp(t * M) * Bz ** (M - 0.5) / D * bracket


def _k0_derivative(z, t, M):
    # -d/db of P(b) F(a, a; 1; zeta(b)) at b = 0, with dF/dzeta = a^2 F(a+1, a+1; 2; zeta)
    q = np.exp(-t)
    A, B, D, Bz, zeta, om = _geometry(z, t, np.zeros_like(t))
    zeta = np.clip(zeta, 0.0, None)
    a = 0.5 - M
    F = hyp2f1(a, a, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    if a == 0.0:
        dF = np.zeros_like(F)
    else:
        dF = a * a * hyp2f1(a + 1.0, a + 1.0, 2.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    dBz = -2.0 * B
    dzeta = (-2.0 * A * Bz - D * dBz) / (Bz * Bz)
    P = np.exp(t * M - M * LN4 + (M - 0.5) * np.log(Bz))
    return -P * ((M + (M - 0.5) * dBz / Bz) * F + dF * dzeta)


def _half_integer_k(M):
    k = M - 0.5
    if k < 0 or not float(k).is_integer():
        raise DomainError(f"half-integer formula needs M = k + 1/2, got M={M}")
    return int(k)


def _k0_half_integer(z, t, M):
    k = _half_integer_k(M)
    r = z
    et = np.exp(t)
    q = np.exp(-t)
    _, _, _, Bz, zeta, om = _geometry(z, t, np.zeros_like(t))
    Fk = hyp2f1(-k, -k, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    Fk1 = hyp2f1(1 - k, 1 - k, 2.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    term1 = 8 * k**2 * et * ((r * r + 1) * et**2 - 1) * Fk1
    term2 = ((1 + et) ** 2 - r * r) * (et**2 * (2 * k * (r * r + 1) + r * r - 1) - 2 * k - 2 * et - 1) * Fk
    return 4.0 ** (-k - 1) * np.exp((k + 0.5) * t) * ((1 + q) ** 2 - r * r) ** (k - 2) * (term1 + term2)


def _k0_half_integer_intermediate(z, t, M):
    k = _half_integer_k(M)
    r = z
    et = np.exp(t)
    q = np.exp(-t)
    _, _, _, Bz, zeta, om = _geometry(z, t, np.zeros_like(t))
    Fk = hyp2f1(-k, -k, 1.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    Fk1 = hyp2f1(1 - k, 1 - k, 2.0, zeta.ravel(), om.ravel()).reshape(zeta.shape)
    ratio = (-et**2 * (M * r * r + M - 1) + M + et) / ((r * r - 1) * et**2 - 2 * et - 1)
    return -(4.0 ** -M) * np.exp(M * t) * ((q + 1) ** 2 - r * r) ** k * (ratio * Fk - k**2 * Fk1)


_K0_METHODS = {
    "closed": _k0_closed,
    "literal": _k0_literal,
    "derivative": _k0_derivative,
    "half_integer": _k0_half_integer,
    "half_integer_intermediate": _k0_half_integer_intermediate,
}

K0Method = Literal["closed", "literal", "derivative", "half_integer", "half_integer_intermediate"]


def kernel_K0(z, t, M, method: K0Method = "closed"):
    """K0(z, t; M) = -dE/db at b = 0, for 0 <= z <= 1 - e^{-t}, t > 0.

    ``closed`` regroups the hypergeometric closed form so the cone factor
    cancels (finite up to and including z = 1 - e^{-t}); ``literal`` is the
    same formula evaluated literally and is singular on the cone.
    """
    _check_mass(M)
    zz, tt = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(t, dtype=float))
    if np.any(tt <= 0):
        raise DomainError("K0 needs t > 0")
    phi = cone_radius(tt)
    if np.any(zz < 0) or np.any(zz > phi * (1 + CONE_RTOL)):
        raise DomainError("K0 needs 0 <= z <= 1 - e^{-t}")
    zz = np.minimum(zz, phi)
    if method == "literal" and np.any((phi - zz) * (phi + zz) <= 0):
        raise DomainError("literal K0 form is singular on the cone z = 1 - e^{-t}")
    try:
        fn = _K0_METHODS[method]
    except KeyError:
        raise ValueError(f"unknown K0 method {method!r}") from None
    return _scalarize(fn(zz, tt, M), z, t)


def k0_one_sided_difference(z, t, M, h: float):
    """``-dE/db`` at b = 0 by the second-order one-sided difference with step ``h``."""
    e0, e1, e2 = (kernel_E(z, t, k * h, M) for k in (0, 1, 2))
    return -(-3.0 * e0 + 4.0 * e1 - e2) / (2.0 * h)


def sinh_over(M, x):
    """``sinh(M x) / M`` with the removable M -> 0 limit handled by series."""
    if M < 1e-6:
        return x * (1.0 + (M * x) ** 2 / 6.0)
    return math.sinh(M * x) / M


def verify_kernel_identities(t, b, M, quad_tol=1e-10):
    """Residuals of the three integral identities behind the de Sitter
    maximum principle: returns ``(res_E, res_K1, res_K0)``."""
    if not (0 <= b < t):
        raise DomainError("need 0 <= b < t")
    _check_mass(M)
    kw = dict(atol=quad_tol, rtol=1e-15, grade="right", levels=6, raise_on_failure=True)
    A = cone_radius(t, b)
    phi = cone_radius(t)
    int_E = integrate(lambda r: _e_formula(np.minimum(r, A), t, b, M), 0.0, A, **kw).value
    int_K1 = integrate(lambda r: _e_formula(np.minimum(r, phi), t, 0.0, M), 0.0, phi, **kw).value
    int_K0 = integrate(lambda r: _k0_closed(np.minimum(r, phi), np.full_like(r, t), M), 0.0, phi, **kw).value
    res_E = abs(int_E - 0.5 * sinh_over(M, t - b))
    res_K1 = abs(2.0 * int_K1 - sinh_over(M, t))
    res_K0 = abs(math.exp(t / 2) + 2.0 * int_K0 - math.cosh(M * t))
    return res_E, res_K1, res_K0


@dataclass
class PositivityReport:
    M: float
    which: str
    t_range: tuple[float, float]
    z_resolution: int
    t_resolution: int
    min_value: float
    argmin: tuple[float, ...]
    max_value: float
    argmax: tuple[float, ...]
    sign_change: bool
    tol_scan: float = TOL_SCAN
    n_errors: int = 0
    errors: list[str] = field(default_factory=list)
    samples: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d

    def write_csv(self, path) -> None:
        cols = ["z", "t", "b", "value"] if self.which == "E" else ["z", "t", "value"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.samples:
                vals = row if self.which == "E" else (row[0], row[1], row[3])
                w.writerow([repr(float(v)) for v in vals])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def positivity_scan(M, t_max, nz=64, nt=64, which="K0", t_min=0.0, nb=8,
                    tol_scan=TOL_SCAN) -> PositivityReport:
    """Evaluate a kernel on a (z, t) grid with t in (t_min, t_max] and
    0 <= z <= (1 - margin) * cone radius, and report its extreme values.

    For ``which="E"`` the source time runs over ``b = t*k/nb``, k < nb.
    """
    if nz < 16 or nt < 16:
        raise ValueError("nz and nt must be >= 16")
    if t_max <= t_min:
        raise ValueError("need t_max > t_min")
    ts = t_min + (t_max - t_min) * np.arange(1, nt + 1) / nt
    fracs = np.arange(nb) / nb if which == "E" else np.zeros(1)
    rows = []
    errors = []
    for t in ts:
        for f in fracs:
            b = f * t
            A = cone_radius(t, b)
            zs = (1.0 - CONE_MARGIN) * A * np.linspace(0.0, 1.0, nz)
            try:
                if which == "E":
                    vals = kernel_E(zs, t, b, M)
                elif which == "K1":
                    vals = kernel_K1(zs, np.full_like(zs, t), M)
                elif which == "K0":
                    vals = kernel_K0(zs, np.full_like(zs, t), M)
                else:
                    raise ValueError(f"unknown kernel {which!r}")
            except (ArithmeticError, DomainError) as exc:
                errors.append(f"t={t!r} b={b!r}: {exc}")
                vals = np.full_like(zs, np.nan)
            rows.append(np.column_stack([zs, np.full_like(zs, t), np.full_like(zs, b), vals]))
    samples = np.vstack(rows)
    v = samples[:, 3]
    good = np.isfinite(v)
    i_min = np.flatnonzero(good)[np.argmin(v[good])]
    i_max = np.flatnonzero(good)[np.argmax(v[good])]
    keep = slice(0, 3) if which == "E" else slice(0, 2)
    min_v, max_v = float(v[i_min]), float(v[i_max])
    return PositivityReport(
        M=float(M), which=which, t_range=(float(t_min), float(t_max)),
        z_resolution=nz, t_resolution=nt,
        min_value=min_v, argmin=tuple(map(float, samples[i_min, keep])),
        max_value=max_v, argmax=tuple(map(float, samples[i_max, keep])),
        sign_change=bool(min_v < -tol_scan and max_v > tol_scan),
        tol_scan=tol_scan, n_errors=len(errors), errors=errors, samples=samples,
    )
