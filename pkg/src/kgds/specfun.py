"""Special functions used by the kernels.

Real Gauss hypergeometric function on ``[0, 1)`` (power series near the
origin, the ``1 - z`` connection formulas near one, including the logarithmic
cases) and the modified Bessel functions ``I0`` and ``I1`` by power series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import psi as _digamma
from scipy.special import rgamma as _rgamma

from .errors import ConvergenceError, DomainError

TERM_CAP = 100_000
CONNECTION_SWITCH = 0.75
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class EvalResult:
    value: float
    est_error: float
    terms_used: int


def _is_nonpos_int(a: float) -> bool:
    return a <= 0 and float(a).is_integer()


def _is_int(a: float) -> bool:
    return float(a).is_integer()


def _as_array(z):
    return np.atleast_1d(np.asarray(z, dtype=float))


def _power_series(a, b, c, z, tol, skip_first=False, cap=TERM_CAP):
    """Sum ``sum_n (a)_n (b)_n / ((c)_n n!) z^n`` elementwise.

    With ``skip_first`` the series of ``(F - 1) / z`` is summed instead.
    Returns ``(value, est_error, terms_used)``.
    """
    z = np.asarray(z, dtype=float)
    if skip_first and a * b == 0.0:
        return np.zeros(z.shape), np.zeros(z.shape), 1
    if skip_first:
        term = np.full(z.shape, a * b / c, dtype=np.longdouble)
        n = 1
    else:
        term = np.ones(z.shape, dtype=np.longdouble)
        n = 0
    total = term.copy()
    abs_total = np.abs(total)
    err = np.zeros(z.shape)
    active = np.ones(z.shape, dtype=bool)
    poly = _is_nonpos_int(a) or _is_nonpos_int(b)
    while n < cap and active.any():
        ratio = (a + n) * (b + n) / ((c + n) * (n + 1.0))
        n += 1
        if ratio == 0.0:
            # terminating series: the partial sum is exact
            err[active] = 0.0
            active[:] = False
            break
        term = term * (ratio * z)
        total = np.where(active, total + term, total)
        abs_total = np.where(active, abs_total + np.abs(term), abs_total)
        if poly:
            continue
        # geometric bound on the tail using the sup of the remaining ratios
        nxt = abs((a + n) * (b + n) / ((c + n) * (n + 1.0)))
        rho = z * max(nxt, 1.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            tail = np.abs(term).astype(float) * rho / (1.0 - rho)
        tail = np.where(rho < 1.0, tail, np.inf)
        scale = np.abs(total).astype(float)
        done = active & (tail <= tol * np.maximum(scale, 1e-300)) & (n > abs(a) + abs(b) + 1)
        err = np.where(done, tail, err)
        active &= ~done
    if active.any():
        raise ConvergenceError(
            f"2F1({a}, {b}; {c}; z) series hit the {cap}-term cap at z={float(z[active].max())}"
        )
    err = err + n * _EPS * abs_total.astype(float)
    return total.astype(float), err, n


def _log_connection(a, b, m, w, tol):
    """A&S 15.3.10/15.3.11: ``F(a, b; a+b+m; 1-w)`` for integer ``m >= 0``."""
    c = a + b + m
    gc = math.gamma(c)
    val = np.zeros_like(w)
    err = np.zeros_like(w)
    if m > 0:
        coef = math.gamma(m) * gc * _rgamma(a + m) * _rgamma(b + m)
        term = np.ones_like(w)
        finite = np.zeros_like(w)
        for n in range(m):
            finite = finite + term
            if n + 1 < m:
                term = term * (a + n) * (b + n) / ((n + 1.0) * (1.0 - m + n)) * w
        val = coef * finite
        err = m * _EPS * np.abs(val)
    pref = -((-w) ** m) * gc * _rgamma(a) * _rgamma(b)
    if np.all(pref == 0.0):
        return val, err, m
    logw = np.log(w)
    # psi(n+1), psi(n+m+1), psi(a+n+m), psi(b+n+m) advanced by recurrence
    p1 = _digamma(1.0)
    p2 = _digamma(m + 1.0)
    p3 = _digamma(a + m)
    p4 = _digamma(b + m)
    coeff = 1.0 / math.factorial(m)
    wn = np.ones_like(w)
    total = np.zeros_like(w, dtype=np.longdouble)
    abs_total = np.zeros_like(w)
    n = 0
    while n < TERM_CAP:
        term = coeff * wn * (logw - p1 - p2 + p3 + p4)
        total += term
        abs_total += np.abs(term)
        # next coefficient and digamma shifts
        coeff *= (a + m + n) * (b + m + n) / ((n + 1.0) * (n + m + 1.0))
        p1 += 1.0 / (n + 1.0)
        p2 += 1.0 / (n + m + 1.0)
        p3 += 1.0 / (a + n + m)
        p4 += 1.0 / (b + n + m)
        wn = wn * w
        n += 1
        nxt = np.abs(coeff * wn) * (np.abs(logw) + abs(p1) + abs(p2) + abs(p3) + abs(p4))
        if np.all(nxt <= 0.25 * tol * np.maximum(np.abs(total).astype(float), 1e-300)) and n > 2:
            tail = 2.0 * nxt
            break
    else:
        raise ConvergenceError("logarithmic connection series did not converge")
    series = total.astype(float)
    val = val + pref * series
    err = err + np.abs(pref) * (tail + n * _EPS * abs_total)
    return val, err, m + n


def _connection(a, b, c, z, w, tol):
    """Evaluate ``F(a, b; c; z)`` for ``z`` near one, ``w = 1 - z``."""
    s = c - a - b
    outer = 1.0
    if s < 0:
        # Euler transformation flips the sign of c - a - b
        outer = w**s
        a, b = c - a, c - b
        s = -s
        if _is_nonpos_int(a) or _is_nonpos_int(b):
            v, e, n = _power_series(a, b, c, z, tol)
            return outer * v, np.abs(outer) * e, n
    if _is_int(s):
        v, e, n = _log_connection(a, b, int(round(s)), w, tol)
        return outer * v, np.abs(outer) * e, n
    gc = math.gamma(c)
    a1 = gc * math.gamma(s) * _rgamma(c - a) * _rgamma(c - b)
    a2 = gc * math.gamma(-s) * _rgamma(a) * _rgamma(b)
    v1, e1, n1 = _power_series(a, b, 1.0 - s, w, tol)
    v2, e2, n2 = _power_series(c - a, c - b, 1.0 + s, w, tol)
    ws = w**s
    val = a1 * v1 + a2 * ws * v2
    err = abs(a1) * e1 + abs(a2) * ws * e2 + 4 * _EPS * (abs(a1 * v1) + np.abs(a2 * ws * v2))
    return outer * val, np.abs(outer) * err, max(n1, n2)


def hyp2f1(a, b, c, z, one_minus_z=None, tol=1e-15, with_error=False):
    """Real ``2F1(a, b; c; z)`` for ``z`` in ``[0, 1)``, vectorized over ``z``.

    ``one_minus_z`` may be passed when ``1 - z`` is known more accurately than
    ``z`` itself (arguments close to one).
    """
    a, b, c = float(a), float(b), float(c)
    if _is_nonpos_int(c):
        raise DomainError(f"c={c} is a non-positive integer")
    zz = _as_array(z)
    ww = 1.0 - zz if one_minus_z is None else _as_array(one_minus_z)
    if np.any((zz < 0) | (ww <= 0)) or np.any(~np.isfinite(zz)):
        raise DomainError("hypergeometric argument outside [0, 1)")
    out = np.empty_like(zz)
    err = np.empty_like(zz)
    terms = 0
    if _is_nonpos_int(a) or _is_nonpos_int(b):
        out, err, terms = _power_series(a, b, c, zz, tol)
    elif _is_nonpos_int(c - a) or _is_nonpos_int(c - b):
        s = c - a - b
        v, e, terms = _power_series(c - a, c - b, c, zz, tol)
        out, err = ww**s * v, ww**s * e
    else:
        near = zz > CONNECTION_SWITCH
        if (~near).any():
            out[~near], err[~near], terms = _power_series(a, b, c, zz[~near], tol)
        if near.any():
            v, e, n = _connection(a, b, c, zz[near], ww[near], tol)
            out[near], err[near] = v, e
            terms = max(terms, n)
    if np.ndim(z) == 0:
        out, err = float(out[0]), float(err[0])
    if with_error:
        return out, err, terms
    return out


def hyp2f1_excess(a, b, c, z, one_minus_z=None, tol=1e-15):
    """``(F(a, b; c; z) - 1) / z`` without cancellation at small ``z``."""
    zz = _as_array(z)
    ww = 1.0 - zz if one_minus_z is None else _as_array(one_minus_z)
    out = np.empty_like(zz)
    small = zz <= 0.5
    if small.any():
        out[small] = _power_series(float(a), float(b), float(c), zz[small], tol, skip_first=True)[0]
    if (~small).any():
        f = hyp2f1(a, b, c, zz[~small], ww[~small], tol)
        out[~small] = (f - 1.0) / zz[~small]
    return float(out[0]) if np.ndim(z) == 0 else out


def gauss_2f1_diag(a: float, c: float, z: float, tol: float = 1e-15) -> EvalResult:
    """F(a, a; c; z) for c in {1, 2} and 0 <= z < 1, with an error estimate."""
    if c not in (1, 2):
        raise DomainError(f"c must be 1 or 2, got {c}")
    if not (0.0 <= z < 1.0):
        raise DomainError(f"z={z} outside [0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    value, err, terms = hyp2f1(a, a, c, z, tol=tol, with_error=True)
    return EvalResult(float(value), float(err), max(int(terms), 1))


def _bessel_series(x, order):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    if np.any(ax > 700.0):
        raise OverflowError("Bessel I argument beyond the double range")
    q = (ax.astype(np.longdouble) / 2) ** 2
    term = np.ones_like(q) if order == 0 else ax.astype(np.longdouble) / 2
    total = term.copy()
    k = 0
    while True:
        k += 1
        term = term * q / (k * (k + order))
        total += term
        if np.all(term <= total * 1e-21):
            break
    out = total.astype(float)
    if order == 1:
        out = np.where(x < 0, -out, out)
    return out


def bessel_i0(x):
    """Modified Bessel function of the first kind, order zero."""
    out = _bessel_series(x, 0)
    return float(out) if np.ndim(x) == 0 else out


def bessel_i1(x):
    """Modified Bessel function of the first kind, order one (``I0' = I1``)."""
    out = _bessel_series(x, 1)
    return float(out) if np.ndim(x) == 0 else out


def bessel_i1_over_x(x):
    """``I1(x) / x``, finite at the origin (limit 1/2)."""
    x = np.asarray(x, dtype=float)
    q = (np.abs(x).astype(np.longdouble) / 2) ** 2
    term = np.full_like(q, 0.5)
    total = term.copy()
    k = 0
    while True:
        k += 1
        term = term * q / (k * (k + 1))
        total += term
        if np.all(term <= total * 1e-21):
            break
    out = total.astype(float)
    return float(out) if np.ndim(x) == 0 else out
