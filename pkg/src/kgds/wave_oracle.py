"""Solutions of the free wave equation with data (phi, 0) or (0, phi)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

R_MIN = 1e-6

Smoothness = Literal["C0", "C2", "Cinf"]


@dataclass(frozen=True)
class FieldSampler:
    """A vectorized real function of position.

    For line and radial samplers ``eval`` maps an array of reals to reals; for
    3-D samplers it maps an ``(..., 3)`` array of points to reals.  ``deriv``
    optionally gives the exact derivative of a line or radial profile.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    support_radius: float = math.inf
    smoothness: Smoothness = "Cinf"
    name: str = ""
    deriv: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))


def constant(c: float, points: bool = False) -> FieldSampler:
    """Constant sampler; with ``points`` it accepts ``(..., 3)`` arrays."""
    if points:
        return FieldSampler(lambda x: np.full(np.shape(x)[:-1], float(c)), name=f"const({c})")
    return FieldSampler(lambda x: np.full(np.shape(x), float(c)), name=f"const({c})")


def bump(radius: float = 0.2, amplitude: float = 1.0, center: float = 0.0) -> FieldSampler:
    """``amplitude * exp(1/R^2 - 1/(R^2 - (x - center)^2))`` inside the ball, 0 outside."""
    R2 = radius * radius

    def f(x):
        d2 = (np.asarray(x, dtype=float) - center) ** 2
        inside = d2 < R2
        out = np.zeros(np.shape(d2))
        out[inside] = amplitude * np.exp(1.0 / R2 - 1.0 / (R2 - d2[inside]))
        return out

    def df(x):
        d = np.asarray(x, dtype=float) - center
        gap = R2 - d * d
        inside = gap > 0
        out = np.zeros(np.shape(d))
        g = gap[inside]
        out[inside] = -2 * d[inside] / (g * g) * amplitude * np.exp(1.0 / R2 - 1.0 / g)
        return out

    return FieldSampler(f, support_radius=abs(center) + radius, name=f"bump({radius})", deriv=df)


@dataclass(frozen=True)
class SphereRule:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta) times
    the trapezoid rule in the azimuth.  Exact for spherical harmonics of
    degree < ``order``."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int = field(default=32)

    @classmethod
    def product(cls, order: int = 32) -> "SphereRule":
        if order < 1:
            raise ValueError("order must be >= 1")
        mu, w_mu = np.polynomial.legendre.leggauss(order)
        n_az = 2 * order
        az = 2 * np.pi * np.arange(n_az) / n_az
        sin_t = np.sqrt(1.0 - mu * mu)
        nodes = np.stack(
            [np.outer(sin_t, np.cos(az)), np.outer(sin_t, np.sin(az)), np.outer(mu, np.ones(n_az))],
            axis=-1,
        ).reshape(-1, 3)
        weights = np.outer(w_mu / 2.0, np.full(n_az, 1.0 / n_az)).ravel()
        return cls(nodes, weights, order)


def dalembert_1d(phi: FieldSampler, x, t):
    """``(phi(x + t) + phi(x - t)) / 2``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = 0.5 * (phi(x + t) + phi(x - t))
    return float(out) if out.ndim == 0 else out


def _fd_derivative(phi, s, h):
    return (phi(s + h) - phi(np.abs(s - h))) / (2 * h)


def radial_wave_3d(phi: FieldSampler, r, t):
    """Radial 3-D solution with data (phi, 0): the average of ``w = r*phi(|r|)``
    at ``r + t`` and ``r - t``, divided by ``r``.  For ``r <= R_MIN`` the limit
    ``phi(t) + t*phi'(t)`` is used, with a central difference when the
    sampler has no ``deriv``."""
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
    out = np.empty(r.shape)
    near = r <= R_MIN
    far = ~near
    if far.any():
        rf, tf = r[far], t[far]
        out[far] = ((rf + tf) * phi(rf + tf) + (rf - tf) * phi(np.abs(rf - tf))) / (2 * rf)
    if near.any():
        tn = t[near]
        if phi.deriv is not None:
            dphi = phi.deriv(tn)
        else:
            dphi = _fd_derivative(phi, tn, 1e-5 * np.maximum(1.0, tn))
        out[near] = phi(tn) + tn * dphi
    return float(out) if out.ndim == 0 else out


_DEFAULT_RULE: SphereRule | None = None


def _default_rule() -> SphereRule:
    global _DEFAULT_RULE
    if _DEFAULT_RULE is None:
        _DEFAULT_RULE = SphereRule.product(32)
    return _DEFAULT_RULE


def sphere_mean(phi: FieldSampler, x, radius, rule: SphereRule | None = None) -> float:
    rule = rule or _default_rule()
    pts = np.asarray(x, dtype=float)[None, :] + radius * rule.nodes
    return float(rule.weights @ phi(pts))


def kirchhoff_3d(phi: FieldSampler, x, t, rule: SphereRule | None = None,
                 variant: Literal["velocity", "displacement"] = "velocity", grad=None) -> float:
    """Kirchhoff solution at ``(x, t)``.

    ``velocity``: data (0, phi), i.e. ``t`` times the spherical mean.
    ``displacement``: data (phi, 0), the time derivative of the former,
    ``mean + t * mean(d/dt phi(x + t w))``.  ``grad`` (points -> (..., 3))
    is used for the radial derivative when given, else a central difference.
    """
    rule = rule or _default_rule()
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    mean = sphere_mean(phi, x, t, rule)
    if variant == "velocity":
        return t * mean
    if variant != "displacement":
        raise ValueError(f"unknown variant {variant!r}")
    if t == 0.0:
        return mean
    if grad is not None:
        pts = x[None, :] + t * rule.nodes
        radial = np.einsum("ij,ij->i", np.asarray(grad(pts)), rule.nodes)
        dmean = float(rule.weights @ radial)
    else:
        h = 1e-5 * max(1.0, t)
        dmean = (sphere_mean(phi, x, t + h, rule) - sphere_mean(phi, x, t - h, rule)) / (2 * h)
    return mean + t * dmean
