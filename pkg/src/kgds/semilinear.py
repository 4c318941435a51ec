"""Semilinear Higgs-type equation in de Sitter space.

The substitution ``u = e^{3t/2} psi`` turns
``psi_tt + 3 psi_t - e^{-2t} Laplace psi = mu^2 psi - lambda psi^3`` into
``u_tt - e^{-2t} Laplace u - M^2 u = -lambda e^{-3t} u^3`` with
``M^2 = 9/4 + mu^2``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import ConfigError, InvalidInputError, NumericalFailure
from .kernels import _e_formula, cone_radius
from .quadrature import gauss_legendre
from .transform import CauchyData, SourceTerm, desitter_cauchy_solution, desitter_source_solution
from .wave_oracle import R_MIN


@dataclass(frozen=True)
class PicardConfig:
    M: float
    lam: float
    t_max: float
    n_iter: int = 8
    x_grid: tuple[float, ...] = ()
    t_grid: tuple[float, ...] = ()
    quad_tol: float = 1e-10
    n_gauss: int = 16
    tol: float = 1e-12

    def __post_init__(self):
        if self.n_iter < 1:
            raise ConfigError("n_iter must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.M < 0:
            raise ConfigError("M must be >= 0")

    @property
    def mu2(self) -> float:
        return self.M**2 - 2.25

    @classmethod
    def from_mu(cls, mu2: float, lam: float, t_max: float, **kw) -> "PicardConfig":
        if mu2 < 0:
            raise ConfigError("mu^2 must be >= 0")
        return cls(M=math.sqrt(2.25 + mu2), lam=lam, t_max=t_max, **kw)

    def lattice(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.asarray(self.x_grid, dtype=float)
        ts = np.asarray(self.t_grid, dtype=float)
        if ts.size == 0:
            ts = np.linspace(0.0, self.t_max, 21)
        if xs.size < 4 or ts.size < 4:
            raise ConfigError("lattice needs at least 4 points per axis")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ts) <= 0) or ts[0] != 0.0:
            raise ConfigError("lattice axes must increase and t must start at 0")
        return xs, ts


def g_apply(src: SourceTerm, cfg: PicardConfig, dim: str = "radial3") -> np.ndarray:
    """``G[f]`` on the lattice by adaptive quadrature (t = 0 rows are zero)."""
    xs, ts = cfg.lattice()
    out = np.zeros((xs.size, ts.size))
    for j, t in enumerate(ts):
        if t <= 0:
            continue
        for i, x in enumerate(xs):
            out[i, j] = desitter_source_solution(src, cfg.M, x, t, dim, cfg.quad_tol)
    return out


class _GOperator:
    """``G`` on lattice data via a fixed Gauss rule over ``(b, s)``, ``r = A(b) s``."""

    def __init__(self, xs, ts, M, n_gauss, dim):
        self.xs, self.ts, self.dim = xs, ts, dim
        gb, wb = gauss_legendre(n_gauss, 0.0, 1.0)
        gs, ws = gauss_legendre(n_gauss, 0.0, 1.0)
        T = ts[None, :, None, None]
        B = T * gb[None, None, :, None]
        A = cone_radius(T, B)
        R = A * gs[None, None, None, :]
        E = _e_formula(np.broadcast_to(R, (1, ts.size, n_gauss, n_gauss)),
                       np.broadcast_to(T, (1, ts.size, n_gauss, n_gauss)),
                       np.broadcast_to(B, (1, ts.size, n_gauss, n_gauss)), M)
        self.weight = 2.0 * T * wb[None, None, :, None] * ws[None, None, None, :] * A * E
        shape = (xs.size, ts.size, n_gauss, n_gauss)
        self.X = np.broadcast_to(xs[:, None, None, None], shape)
        self.R = np.broadcast_to(R, shape)
        self.B = np.broadcast_to(B, shape)

    def _eval(self, spl, y, b, dx=0):
        y = np.clip(y, self.xs[0], self.xs[-1])
        b = np.clip(b, self.ts[0], self.ts[-1])
        return spl.ev(y.ravel(), b.ravel(), dx=dx).reshape(y.shape)

    def __call__(self, g):
        spl = RectBivariateSpline(self.xs, self.ts, g, kx=3, ky=3)
        X, R, B = self.X, self.R, self.B
        if self.dim == "line":
            v = 0.5 * (self._eval(spl, X + R, B) + self._eval(spl, X - R, B))
        else:
            far = X > R_MIN
            Xs = np.where(far, X, 1.0)
            v_far = ((X + R) * self._eval(spl, X + R, B)
                     + (X - R) * self._eval(spl, np.abs(X - R), B)) / (2 * Xs)
            v_near = self._eval(spl, R, B) + R * self._eval(spl, R, B, dx=1)
            v = np.where(far, v_far, v_near)
        return np.sum(self.weight * v, axis=(2, 3))


@dataclass
class PicardReport:
    iterations: int
    differences: list[float]
    converged: bool
    diverged: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def cauchy_lattice(data: CauchyData, M: float, xs, ts, quad_tol=1e-10) -> np.ndarray:
    u0 = np.empty((len(xs), len(ts)))
    for j, t in enumerate(ts):
        for i, x in enumerate(xs):
            if t == 0:
                u0[i, j] = float(data.phi0(np.asarray(x)))
            else:
                u0[i, j] = desitter_cauchy_solution(data, M, x, t, quad_tol)
    return u0


def picard_weak_solution(data: CauchyData, cfg: PicardConfig) -> tuple[np.ndarray, PicardReport]:
    """Iterate ``u <- u0 - G[lambda e^{-3t} u^3]`` on the lattice."""
    xs, ts = cfg.lattice()
    u0 = cauchy_lattice(data, cfg.M, xs, ts, cfg.quad_tol)
    if cfg.lam == 0.0:
        return u0, PicardReport(1, [0.0], True, False)
    G = _GOperator(xs, ts, cfg.M, cfg.n_gauss, data.dim)
    damp = cfg.lam * np.exp(-3.0 * ts)[None, :]
    u = u0
    diffs: list[float] = []
    growth = 0
    diverged = False
    for _ in range(cfg.n_iter):
        new = u0 - G(damp * u**3)
        if not np.all(np.isfinite(new)):
            diverged = True
            break
        diffs.append(float(np.max(np.abs(new - u))))
        u = new
        if len(diffs) > 1 and diffs[-1] > diffs[-2]:
            growth += 1
            if growth >= 3:
                diverged = True
                break
        else:
            growth = 0
        if diffs[-1] <= cfg.tol * max(1.0, float(np.max(np.abs(u)))):
            break
    converged = not diverged and diffs[-1] <= cfg.tol * max(1.0, float(np.max(np.abs(u))))
    return u, PicardReport(len(diffs), diffs, converged, diverged)


# ---------------------------------------------------------------- Duffing reduction

@dataclass
class Trajectory:
    t: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    energy: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "psi", "dpsi"])
            for row in zip(self.t, self.psi, self.dpsi):
                w.writerow([repr(float(v)) for v in row])


def rk4_integrate(rhs, y0, t_end, dt):
    """Classical RK4 with a fixed step; returns times and states."""
    n = int(round(t_end / dt))
    if n < 1 or not math.isclose(n * dt, t_end, rel_tol=1e-9):
        raise InvalidInputError("t_end must be a positive multiple of dt")
    y = np.array(y0, dtype=float)
    out = np.empty((n + 1, y.size))
    out[0] = y
    for k in range(n):
        t = k * dt
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return np.arange(n + 1) * dt, out


def duffing_energy(psi, dpsi, mu2, lam):
    return 0.5 * dpsi**2 - 0.5 * mu2 * psi**2 + 0.25 * lam * psi**4


def duffing_ode(psi0: float, psi1: float, mu2: float, lam: float, t_end: float,
                dt: float = 1e-3) -> Trajectory:
    """RK4 for ``psi'' + 3 psi' = mu^2 psi - lambda psi^3``.

    The energy ``psi'^2/2 - mu^2 psi^2/2 + lambda psi^4/4`` cannot increase
    for the exact flow; growth beyond roundoff aborts the run.
    """
    if dt <= 0 or t_end <= 0:
        raise InvalidInputError("dt and t_end must be positive")

    def rhs(t, y):
        return np.array([y[1], -3.0 * y[1] + mu2 * y[0] - lam * y[0] ** 3])

    t, y = rk4_integrate(rhs, [psi0, psi1], t_end, dt)
    energy = duffing_energy(y[:, 0], y[:, 1], mu2, lam)
    if not np.all(np.isfinite(y)):
        raise NumericalFailure("Duffing trajectory became non-finite")
    rise = np.diff(energy)
    if np.any(rise > 1e-8 * (1.0 + np.abs(energy[:-1]))):
        k = int(np.argmax(rise))
        raise NumericalFailure(f"energy increased at t={t[k]!r}; reduce dt")
    return Trajectory(t, y[:, 0], y[:, 1], energy)


# ---------------------------------------------------------------- functionals

def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def grid_integral(values: np.ndarray, dx: float) -> float:
    """Trapezoid-rule integral of an n^3 (or n^d) array with spacing dx."""
    v = np.asarray(values, dtype=float)
    out = v
    for axis in range(v.ndim):
        w = trapezoid_weights(v.shape[axis])
        out = np.tensordot(w, out, axes=([0], [0]))
    return float(out) * dx**v.ndim


def _values(field):
    return np.asarray(getattr(field, "values", field), dtype=float)


@dataclass
class FunctionalSeries:
    times: np.ndarray
    F_values: np.ndarray
    sigma: int
    nu_lower: list[float | None]
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "F", "nu_lower"])
            for t, F, nu in zip(self.times, self.F_values, self.nu_lower):
                w.writerow([repr(float(t)), repr(float(F)), "" if nu is None else repr(float(nu))])


SUPPORT_TOL = 1e-9


def f_functional(snapshots: Sequence, dx: float, M: float, source_integral=None,
                 boundary_shells: int = 2, damping: float = 0.0) -> FunctionalSeries:
    """``F(t) = int u dx`` per snapshot and the residual of
    ``F'' + damping F' - M^2 F = int f`` at interior snapshot times
    (uniform snapshot spacing required).

    ``snapshots`` are Field3D-like objects (``values``, ``time``);
    ``source_integral`` is a callable of t, an array aligned with the
    snapshots, or None for no source.
    """
    if not snapshots:
        raise InvalidInputError("no snapshots")
    times = np.array([float(s.time) for s in snapshots])
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("snapshot times must increase")
    Fs = []
    nus = []
    for s in snapshots:
        v = _values(s)
        mass = float(np.sum(np.abs(v)))
        if mass > 0:
            shell = np.ones(v.shape, dtype=bool)
            k = boundary_shells
            shell[(slice(k, -k),) * v.ndim] = False
            # the explicit stencil leaks exponentially small values outward
            if float(np.sum(np.abs(v[shell]))) > SUPPORT_TOL * mass:
                raise InvalidInputError(f"support touches the boundary at t={s.time!r}")
        Fs.append(grid_integral(v, dx))
        nus.append(l3_weight_measure(v, dx))
    F = np.array(Fs)
    if source_integral is None:
        S = np.zeros_like(times)
    elif callable(source_integral):
        S = np.array([source_integral(t) for t in times])
    else:
        S = np.asarray(source_integral, dtype=float)
    residual = np.zeros(0)
    if times.size >= 3:
        h = np.diff(times)
        if not np.allclose(h, h[0], rtol=1e-9):
            raise InvalidInputError("residual needs uniformly spaced snapshots")
        h = h[0]
        d2 = (F[2:] - 2 * F[1:-1] + F[:-2]) / h**2
        d1 = (F[2:] - F[:-2]) / (2 * h)
        residual = d2 + damping * d1 - M * M * F[1:-1] - S[1:-1]
    sigma = 1 if F[0] >= 0 else -1
    return FunctionalSeries(times, F, sigma, nus, residual)


def field_integral(obj, dx: float | None = None) -> float:
    """Integral over R^3 of a radial profile sampler or a gridded field."""
    from .quadrature import integrate
    if hasattr(obj, "eval") and callable(obj.eval):
        R = obj.support_radius
        if not math.isfinite(R):
            raise InvalidInputError("radial sampler needs a finite support radius")
        g = lambda r: 4 * math.pi * r * r * obj(r)
        return integrate(g, 0.0, R, atol=1e-14, rtol=1e-13, grade="right").value
    if dx is None:
        dx = getattr(obj, "dx", None)
    if dx is None:
        raise InvalidInputError("gridded field needs dx")
    return grid_integral(_values(obj), dx)


@dataclass(frozen=True)
class SignCondition:
    lhs_plus: float
    lhs_minus: float
    satisfied_sigma: int
    coefficient: float


def sign_change_condition(psi0, psi1, mu: float, form: Literal["higgs", "kg"] = "higgs",
                          dx: float | None = None) -> SignCondition:
    """``sigma * (c int psi0 + d int psi1)`` for sigma = +1 and -1.

    ``higgs``: c = sqrt(9 + 4 mu^2) + 3, d = 2.  ``kg``: c = mu (read as M),
    d = 1.  ``satisfied_sigma`` is the sigma giving a positive value, or 0.
    """
    I0 = field_integral(psi0, dx)
    I1 = field_integral(psi1, dx)
    if form == "higgs":
        c, d = math.sqrt(9.0 + 4.0 * mu * mu) + 3.0, 2.0
    elif form == "kg":
        c, d = mu, 1.0
    else:
        raise ValueError(f"unknown form {form!r}")
    val = c * I0 + d * I1
    sigma = 1 if val > 0 else (-1 if val < 0 else 0)
    return SignCondition(val, -val, sigma, c)


def l3_weight_measure(field, dx: float | None = None, tol: float = 1e-12) -> float | None:
    """``|int psi|^3 / |int psi^3|``, or None when the denominator is below
    ``tol * int |psi|^3``."""
    v = _values(field)
    if dx is None:
        dx = getattr(field, "dx", 1.0)
    num = abs(grid_integral(v, dx)) ** 3
    den = grid_integral(v**3, dx)
    ref = grid_integral(np.abs(v) ** 3, dx)
    if ref == 0.0 or abs(den) <= tol * ref:
        return None
    return num / abs(den)


# ---------------------------------------------------------------- wall profiles

@dataclass(frozen=True)
class WallResidual:
    max_residual: float
    kappa: float
    h: float
    velocity: float
    n_samples: int


_D2_4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _d2(f, x, e, h):
    return sum(c * f(x + k * h * e) for c, k in zip(_D2_4, range(-2, 3))) / (h * h)


def static_wall_residual(mu: float, lam: float, N=(1.0, 0.0, 0.0), x0=(0.0, 0.0, 0.0), h: float = 1e-3,
                         velocity: float = 0.0, kappa: float | None = None, n_samples: int = 201,
                         seed: int = 0) -> WallResidual:
    """Max of ``|psi_tt - Laplace psi - mu^2 psi + lambda psi^3|`` for the wall
    ``(mu/sqrt(lambda)) tanh(kappa g (N.(x - x0) - v t))``, ``g = 1/sqrt(1 - v^2)``,
    with 4th-order central differences of step h in x and t.

    ``kappa`` defaults to ``mu^2 / 2``.
    """
    N = np.asarray(N, dtype=float)
    if abs(np.linalg.norm(N) - 1.0) > 1e-12:
        raise InvalidInputError("N must be a unit vector")
    if h <= 0:
        raise InvalidInputError("h must be positive")
    if not (0.0 <= velocity < 1.0):
        raise InvalidInputError("velocity must lie in [0, 1)")
    if lam <= 0:
        raise InvalidInputError("lambda must be positive")
    k = mu * mu / 2.0 if kappa is None else float(kappa)
    gamma = 1.0 / math.sqrt(1.0 - velocity**2)
    amp = mu / math.sqrt(lam)
    x0 = np.asarray(x0, dtype=float)

    def psi(X):
        # X holds (x, y, z, t) in the last axis
        s = (X[..., :3] - x0) @ N - velocity * X[..., 3]
        return amp * np.tanh(k * gamma * s)

    rng = np.random.default_rng(seed)
    width = 4.0 / max(k * gamma, 1e-12)
    s = np.linspace(-width, width, n_samples)
    pts = np.zeros((n_samples, 4))
    shift = rng.uniform(-1.0, 1.0, (n_samples, 3))
    shift -= np.outer(shift @ N, N)
    pts[:, :3] = x0 + s[:, None] * N[None, :] + shift
    pts[:, 3] = rng.uniform(0.0, 1.0, n_samples) if velocity else 0.0
    pts[:, :3] += velocity * pts[:, 3:4] * N[None, :]
    eye = np.eye(4)
    lap = sum(_d2(psi, pts, eye[i], h) for i in range(3))
    ptt = _d2(psi, pts, eye[3], h)
    p = psi(pts)
    res = ptt - lap - mu * mu * p + lam * p**3
    return WallResidual(float(np.max(np.abs(res))), k, h, velocity, n_samples)
