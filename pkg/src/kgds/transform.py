"""Linear Klein-Gordon solutions by integral transforms of wave solutions,
and sampled checks of the resulting one-sided comparison inequalities.

Two spatial settings are supported: ``line`` (x real, d'Alembert waves) and
``radial3`` (x is a radius, radially symmetric 3-D waves).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Literal

import numpy as np

from .errors import InvalidInputError
from .kernels import _e_formula, _k0_closed, cone_radius, sinh_over
from .quadrature import integrate
from .specfun import bessel_i0, bessel_i1_over_x
from .wave_oracle import FieldSampler, dalembert_1d, radial_wave_3d

Dim = Literal["line", "radial3"]

TOL_MP = 1e-7
TOL_SH = 1e-6
H_SH = 1e-3


def _zero_sampler() -> FieldSampler:
    return FieldSampler(lambda x: np.zeros(np.shape(x)), support_radius=0.0, name="zero")


@dataclass(frozen=True)
class CauchyData:
    phi0: FieldSampler
    phi1: FieldSampler
    dim: Dim = "line"

    def __post_init__(self):
        if self.dim not in ("line", "radial3"):
            raise InvalidInputError(f"unknown dimension tag {self.dim!r}")

    @property
    def support_radius(self) -> float:
        return max(self.phi0.support_radius, self.phi1.support_radius)


@dataclass(frozen=True)
class SourceTerm:
    """``f(x, b)``, vectorized in x for scalar b."""

    f: Callable[[np.ndarray, float], np.ndarray]
    sign: Literal["nonpositive", "unknown"] = "unknown"

    @classmethod
    def zero(cls) -> "SourceTerm":
        return cls(lambda x, b: np.zeros(np.shape(x)), "nonpositive")

    def at(self, b: float) -> FieldSampler:
        return FieldSampler(lambda x: self.f(x, b))


def wave_value(phi: FieldSampler, dim: Dim, x, s):
    """Free wave solution with data (phi, 0) at position x and time s."""
    if dim == "line":
        return dalembert_1d(phi, x, s)
    return radial_wave_3d(phi, np.abs(x), s)


def _quad(f, a, b, tol, grade=None):
    return integrate(f, a, b, atol=tol, rtol=1e-14, grade=grade, levels=4,
                     raise_on_failure=True).value


def _is_zero_source(src: SourceTerm | None) -> bool:
    return src is None


# ---------------------------------------------------------------- Minkowski

def _bessel_weight(M, t, r):
    s = np.sqrt(np.maximum(t * t - r * r, 0.0))
    return bessel_i0(M * s)


def _bessel_weight_dt(M, t, r):
    # d/dt I0(M sqrt(t^2 - r^2)) = M^2 t I1(M s) / (M s)
    s = np.sqrt(np.maximum(t * t - r * r, 0.0))
    return M * M * t * bessel_i1_over_x(M * s)


def minkowski_kg_solution(data: CauchyData, src: SourceTerm | None, M: float, x: float,
                          t: float, quad_tol: float = 1e-10) -> float:
    """Solution of ``u_tt - Laplace u - M^2 u = f`` from Cauchy data by the
    I0-weighted superposition of free waves."""
    if M < 0 or t < 0:
        raise InvalidInputError("need M >= 0 and t >= 0")
    dim = data.dim
    u = float(wave_value(data.phi0, dim, x, t))
    if t == 0.0:
        return u
    u += _quad(lambda r: _bessel_weight_dt(M, t, r) * wave_value(data.phi0, dim, x, r), 0.0, t, quad_tol)
    u += _quad(lambda r: _bessel_weight(M, t, r) * wave_value(data.phi1, dim, x, r), 0.0, t, quad_tol)
    if not _is_zero_source(src):
        def inner(b):
            tb = t - b
            if tb <= 0:
                return 0.0
            fb = src.at(b)
            return _quad(lambda r: _bessel_weight(M, tb, r) * wave_value(fb, dim, x, r), 0.0, tb, quad_tol)

        u += _quad(lambda bs: np.array([inner(b) for b in bs]), 0.0, t, quad_tol)
    return u


# ---------------------------------------------------------------- de Sitter

def desitter_source_solution(src: SourceTerm, M: float, x: float, t: float,
                             dim: Dim = "radial3", quad_tol: float = 1e-10) -> float:
    """Zero-data solution of ``u_tt - e^{-2t} Laplace u - M^2 u = f``: the
    double integral of ``2 v_f(x, r; b) E(r, t; 0, b; M)`` over the curved
    triangle ``0 <= b <= t``, ``0 <= r <= e^{-b} - e^{-t}``."""
    if M < 0 or t <= 0:
        raise InvalidInputError("need M >= 0 and t > 0")

    def inner(b):
        A = cone_radius(t, b)
        if A <= 0:
            return 0.0
        fb = src.at(b)
        g = lambda r: _e_formula(np.minimum(r, A), t, b, M) * wave_value(fb, dim, x, r)
        return _quad(g, 0.0, A, quad_tol)

    return 2.0 * _quad(lambda bs: np.array([inner(b) for b in bs]), 0.0, t, quad_tol)


def desitter_cauchy_solution(data: CauchyData, M: float, x: float, t: float,
                             quad_tol: float = 1e-10) -> float:
    """Solution of ``u_tt - e^{-2t} Laplace u - M^2 u = 0`` from Cauchy data:
    ``e^{t/2} v_{u0}(x, phi(t)) + 2 int_0^phi v_{u0} K0 dr + 2 int_0^phi v_{u1} K1 dr``
    with ``phi(t) = 1 - e^{-t}``."""
    if M < 0 or t <= 0:
        raise InvalidInputError("need M >= 0 and t > 0")
    dim = data.dim
    phi = cone_radius(t)
    tt = lambda r: np.full(np.shape(r), t)
    u = math.exp(t / 2) * float(wave_value(data.phi0, dim, x, phi))
    k0 = lambda r: _k0_closed(np.minimum(r, phi), tt(r), M) * wave_value(data.phi0, dim, x, r)
    k1 = lambda r: _e_formula(np.minimum(r, phi), t, 0.0, M) * wave_value(data.phi1, dim, x, r)
    u += 2.0 * _quad(k0, 0.0, phi, quad_tol, grade="right")
    u += 2.0 * _quad(k1, 0.0, phi, quad_tol, grade="right")
    return u


def desitter_half_mass_solution(data: CauchyData, x: float, t: float, quad_tol: float = 1e-10) -> float:
    """The elementary-kernel form at M = 1/2 (tail representation)."""
    dim = data.dim
    phi = cone_radius(t)
    e = math.exp(t / 2)
    u = e * float(wave_value(data.phi0, dim, x, phi))
    u -= 0.5 * e * _quad(lambda r: wave_value(data.phi0, dim, x, r), 0.0, phi, quad_tol)
    u += e * _quad(lambda r: wave_value(data.phi1, dim, x, r), 0.0, phi, quad_tol)
    return u


# ---------------------------------------------------------------- maximum principles

@dataclass
class MaxPrincipleReport:
    space: Literal["minkowski", "desitter"]
    M: float
    n_points: int
    worst_violation: float
    t_threshold: float
    passed: bool
    tol_mp: float = TOL_MP
    n_skipped: int = 0
    rows: list[tuple[float, float, float, float, float]] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "u", "rhs", "violation"])
            for row in self.rows:
                w.writerow([repr(float(v)) for v in row])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def fd_laplacian(phi: FieldSampler, dim: Dim, x, h: float = H_SH):
    x = np.asarray(x, dtype=float)
    if dim == "line":
        return (phi(x + h) - 2 * phi(x) + phi(x - h)) / (h * h)
    r = np.abs(x)
    d2 = (phi(r + h) - 2 * phi(r) + phi(np.abs(r - h))) / (h * h)
    d1 = (phi(r + h) - phi(np.abs(r - h))) / (2 * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = np.where(r > h, d2 + 2 * d1 / np.where(r > h, r, 1.0), 3 * d2)
    return lap


def _reach_grid(dim, xs, reaches, n=64):
    pts = []
    for x, rho in zip(xs, reaches):
        lo, hi = x - rho, x + rho
        if dim == "radial3":
            lo, hi = max(0.0, abs(x) - rho), abs(x) + rho
        pts.append(np.linspace(lo, hi, n))
    return np.unique(np.concatenate(pts + [np.asarray(xs, dtype=float)]))


def _check_sampler(phi: FieldSampler, dim: Dim, grid: np.ndarray, label: str) -> None:
    vals = phi(grid)
    if np.any(vals > 0):
        raise InvalidInputError(f"{label} must be nonpositive; max value {float(vals.max())!r}")
    lap = fd_laplacian(phi, dim, grid)
    if np.any(lap > TOL_SH):
        i = int(np.argmax(lap))
        raise InvalidInputError(
            f"{label} is not superharmonic: FD Laplacian {float(lap[i])!r} at x={float(grid[i])!r}")


def _check_preconditions(data, src, grid, t_max):
    _check_sampler(data.phi0, data.dim, grid, "u(x,0)")
    _check_sampler(data.phi1, data.dim, grid, "u_t(x,0)")
    if src is not None:
        for b in np.linspace(0.0, t_max, 11):
            _check_sampler(src.at(b), data.dim, grid, f"f(x,{b:.3g})")


def _source_bound(src, M, x, t, quad_tol):
    if src is None:
        return 0.0
    g = lambda bs: np.array([float(src.f(np.asarray(x, dtype=float), b)) * sinh_over(M, t - b) for b in bs])
    return _quad(g, 0.0, t, quad_tol)


def _rhs(data, src, M, x, t, quad_tol):
    return (math.cosh(M * t) * float(data.phi0(np.asarray(x, dtype=float)))
            + sinh_over(M, t) * float(data.phi1(np.asarray(x, dtype=float)))
            + _source_bound(src, M, x, t, quad_tol))


def _assemble(space, M, rows, threshold, n_skipped, tol_mp):
    viol = [r[4] for r in rows]
    worst = max([0.0] + viol)
    return MaxPrincipleReport(space, float(M), len(rows), worst, threshold, worst <= tol_mp,
                              tol_mp, n_skipped, rows)


def check_max_principle_minkowski(data: CauchyData, src: SourceTerm | None, M: float,
                                  points: Iterable[tuple[float, float]], quad_tol: float = 1e-10,
                                  tol_mp: float = TOL_MP) -> MaxPrincipleReport:
    """Sample ``u <= cosh(Mt) u0 + sinh(Mt)/M u1 + int f sinh(M(t-b))/M db``
    and ``u <= 0``.  Precondition failures raise InvalidInputError."""
    pts = [(float(x), float(t)) for x, t in points]
    if not pts:
        raise InvalidInputError("no sample points")
    xs, ts = zip(*pts)
    _check_preconditions(data, src, _reach_grid(data.dim, xs, ts), max(ts))
    rows = []
    for x, t in pts:
        u = minkowski_kg_solution(data, src, M, x, t, quad_tol)
        rhs = _rhs(data, src, M, x, t, quad_tol)
        rows.append((x, t, u, rhs, max(u - rhs, u)))
    return _assemble("minkowski", M, rows, 0.0, 0, tol_mp)


def desitter_threshold(M: float) -> float:
    """``ln(M/(M-1))`` for M > 1."""
    if M <= 1:
        raise InvalidInputError("threshold needs M > 1")
    return math.log(M / (M - 1.0))


def check_max_principle_desitter(data: CauchyData, src: SourceTerm | None, M: float,
                                 points: Iterable[tuple[float, float]], quad_tol: float = 1e-10,
                                 tol_mp: float = TOL_MP) -> MaxPrincipleReport:
    """As the Minkowski check, for the de Sitter equation.  Samples with
    ``t < ln(M/(M-1))`` are skipped unless u(x,0) vanishes identically on the
    sampled region, in which case every M >= 0 and t > 0 is admitted."""
    pts = [(float(x), float(t)) for x, t in points]
    if not pts:
        raise InvalidInputError("no sample points")
    xs, ts = zip(*pts)
    grid = _reach_grid(data.dim, xs, [cone_radius(t) for t in ts])
    _check_preconditions(data, src, grid, max(ts))
    phi0_zero = bool(np.all(data.phi0(grid) == 0.0))
    if phi0_zero:
        threshold = 0.0
    else:
        threshold = desitter_threshold(M)
    kept = [(x, t) for x, t in pts if t >= threshold and t > 0]
    rows = []
    for x, t in kept:
        u = desitter_cauchy_solution(data, M, x, t, quad_tol)
        if src is not None:
            u += desitter_source_solution(src, M, x, t, data.dim, quad_tol)
        rhs = _rhs(data, src, M, x, t, quad_tol)
        rows.append((x, t, u, rhs, max(u - rhs, u)))
    return _assemble("desitter", M, rows, threshold, len(pts) - len(kept), tol_mp)


def tail_functional(v: Callable[[np.ndarray], np.ndarray], s: float, quad_tol: float = 1e-12) -> float:
    """``v(s) - (1/2) int_0^s v(r) dr``."""
    if not (0.0 <= s <= 1.0):
        raise InvalidInputError("s must lie in [0, 1]")
    vs = float(v(np.asarray(s, dtype=float)))
    if s == 0.0:
        return vs
    return vs - 0.5 * _quad(lambda r: v(r), 0.0, s, quad_tol)
