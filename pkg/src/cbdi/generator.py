"""Extended generator of the process and Lyapunov certificates.

``apply_generator`` evaluates

    Xf(x) = -I(x) f'(x) - gamma x f'(x) + (sigma^2/2) x f''(x)
            + x int (f(x+u) - f(x) - u f'(x) 1{u <= 1}) pi(du)

on a :class:`TestFunction`. The Lyapunov functions ``f1(z) = int_kappa^z u/I``
and ``f2(z) = int_kappa^z 1/I`` get closed forms for the logistic and pure
power drifts and cached cumulative quadrature otherwise; below ``kappa`` they
are continued by the cubic ``s z^2 (z - kappa) / kappa^2``, which vanishes
with its slope at 0 and matches value and slope at ``kappa``.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import drift as _drift
from ._quad import Cumulative, PowerLog, TOL_EXP, Z_QUAD, quad, quad_log, tail_integrable
from .classifier import _density_asym, flow_integral
from .drift import check_B1, check_B2, geometric_grid
from .errors import UndecidableError
from .mechanism import truncated_moment

F1, F2, CUSTOM = "LyapunovF1", "LyapunovF2", "Custom"

SLACK = 1e-3


@dataclass(frozen=True)
class TestFunction:
    """A C2 test function with optional stable increments.

    ``increment(x, u)`` returns ``f(x+u) - f(x)`` and ``comp_increment(x, u)``
    returns ``f(x+u) - f(x) - u f'(x)``; both default to direct differences.
    ``growth`` is a ``PowerLog`` bounding ``f`` at infinity, ``None`` meaning
    bounded.
    """

    __test__ = False

    f: Callable
    df: Callable
    d2f: Callable
    tag: str = CUSTOM
    increment: Optional[Callable] = None
    comp_increment: Optional[Callable] = None
    growth: Optional[PowerLog] = None
    kappa: float = 0.0

    def incr(self, x, u):
        v = self.increment(x, u) if self.increment is not None else None
        return self.f(x + u) - self.f(x) if v is None else v

    def comp(self, x, u):
        v = self.comp_increment(x, u) if self.comp_increment is not None else None
        if v is None:
            if u <= 0.5 * max(x, 1e-3):
                df0 = self.df(x)
                return quad(lambda y: self.df(y) - df0, x, x + u)[0]
            return self.incr(x, u) - u * self.df(x)
        return v


def _log1p_minus(t):
    """``log(1 + t) - t`` without cancellation for small ``t``."""
    if abs(t) < 1e-3:
        return t * t * (-0.5 + t * (1.0 / 3.0 - 0.25 * t))
    return math.log1p(t) - t


def _expm1_minus(p, t):
    """``(1 + t)**p - 1 - p t`` without cancellation for small ``t``."""
    if abs(t) < 1e-3:
        return t * t * (0.5 * p * (p - 1) + t * p * (p - 1) * (p - 2) / 6.0)
    return math.expm1(p * math.log1p(t)) - p * t


def _antiderivative_growth(p, q):
    """Growth of ``int^h u**p (log u)**q du``; ``None`` when bounded."""
    if tail_integrable(p, q):
        return None
    if abs(p + 1.0) <= TOL_EXP:
        return PowerLog(1.0, 0.0, q + 1.0)
    return PowerLog(1.0, p + 1.0, q)


def _extend(kappa, f, df, d2f, s):
    """Glue the cubic continuation below ``kappa`` onto ``f`` on ``[kappa, inf)``."""
    A = s / (kappa * kappa)

    def F(z):
        return f(z) if z >= kappa else A * z * z * (z - kappa)

    def dF(z):
        return df(z) if z >= kappa else A * z * (3 * z - 2 * kappa)

    def d2F(z):
        return d2f(z) if z >= kappa else A * (6 * z - 2 * kappa)

    return F, dF, d2F


def _kinks(d):
    if isinstance(d, _drift.PowerLog):
        return (d.z0,)
    return tuple(getattr(d, "kinks", ()))


def lyapunov_f1(d):
    """``f1(z) = int_kappa^z u / I(u) du``."""
    k = d.kappa
    I = lambda z: float(d.eval(z))
    dI = lambda z: float(d.eval_deriv(z))
    df = lambda z: z / I(z)
    d2f = lambda z: (I(z) - z * dI(z)) / I(z) ** 2
    inc = comp = None
    if isinstance(d, _drift.Logistic):
        c = d.c
        f = lambda z: (2.0 / c) * math.log(z / k)
        inc = lambda x, u: (2.0 / c) * math.log1p(u / x)
        comp = lambda x, u: (2.0 / c) * _log1p_minus(u / x)
    elif isinstance(d, _drift.PowerLog) and d.beta_hat == 0.0 and k >= d.z0:
        c, p = d.c, 2.0 - d.alpha_hat
        if abs(p) <= TOL_EXP:
            f = lambda z: math.log(z / k) / c
            inc = lambda x, u: math.log1p(u / x) / c
            comp = lambda x, u: _log1p_minus(u / x) / c
        else:
            f = lambda z: (z ** p - k ** p) / (c * p)
            inc = lambda x, u: x ** p * math.expm1(p * math.log1p(u / x)) / (c * p)
            comp = lambda x, u: x ** p * _expm1_minus(p, u / x) / (c * p)
    else:
        f = Cumulative(df, k, _kinks(d), vg=lambda z: z / d.eval(z),
                       vdg=lambda z: (1.0 - z * d.eval_deriv(z) / d.eval(z)) / d.eval(z))
    F, dF, d2F = _extend(k, f, df, d2f, df(k))
    a = d.asymptotic()
    growth = None if a is None else _antiderivative_growth(1.0 - a.power, -a.logpow)
    if inc is not None:
        inc, comp = _guard(k, inc), _guard(k, comp)
    return TestFunction(F, dF, d2F, F1, inc, comp, growth, k)


def lyapunov_f2(d):
    """``f2(z) = int_kappa^z du / I(u)``."""
    k = d.kappa
    I = lambda z: float(d.eval(z))
    dI = lambda z: float(d.eval_deriv(z))
    df = lambda z: 1.0 / I(z)
    d2f = lambda z: -dI(z) / I(z) ** 2
    inc = comp = None
    if isinstance(d, _drift.Logistic):
        c = d.c
        f = lambda z: (2.0 / c) * (1.0 / k - 1.0 / z)
        inc = lambda x, u: (2.0 / c) * u / (x * (x + u))
        comp = lambda x, u: -(2.0 / c) * u * u / (x * x * (x + u))
    elif isinstance(d, _drift.PowerLog) and d.beta_hat == 0.0 and k >= d.z0:
        c, p = d.c, 1.0 - d.alpha_hat
        if abs(p) <= TOL_EXP:
            f = lambda z: math.log(z / k) / c
            inc = lambda x, u: math.log1p(u / x) / c
            comp = lambda x, u: _log1p_minus(u / x) / c
        else:
            f = lambda z: (z ** p - k ** p) / (c * p)
            inc = lambda x, u: x ** p * math.expm1(p * math.log1p(u / x)) / (c * p)
            comp = lambda x, u: x ** p * _expm1_minus(p, u / x) / (c * p)
    else:
        f = Cumulative(df, k, _kinks(d), vg=lambda z: 1.0 / d.eval(z),
                       vdg=lambda z: -(d.eval_deriv(z) / d.eval(z)) / d.eval(z))
    F, dF, d2F = _extend(k, f, df, d2f, df(k))
    a = d.asymptotic()
    growth = None if a is None else _antiderivative_growth(-a.power, -a.logpow)
    if inc is not None:
        inc, comp = _guard(k, inc), _guard(k, comp)
    return TestFunction(F, dF, d2F, F2, inc, comp, growth, k)


def _guard(k, fast):
    """Use a closed-form increment only from ``x >= kappa``; ``None`` asks for a direct difference."""
    return lambda x, u: fast(x, u) if x >= k else None


def exp_test_function(rate=1.0):
    """``f(x) = exp(-rate x)``, bounded with bounded derivatives on ``[0, inf)``."""
    r = rate
    f = lambda x: math.exp(-r * x)
    df = lambda x: -r * math.exp(-r * x)
    d2f = lambda x: r * r * math.exp(-r * x)

    def inc(x, u):
        return math.exp(-r * x) * math.expm1(-r * u)

    def comp(x, u):
        y = r * u
        if y < 1e-3:
            e = y * y * (0.5 - y / 6.0 + y * y / 24.0)
        else:
            e = math.expm1(-y) + y
        return math.exp(-r * x) * e

    return TestFunction(f, df, d2f, CUSTOM, inc, comp, None)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def _jump_finite(levy, tf):
    if levy.is_zero() or np.isfinite(levy.support_max) or tf.growth is None:
        return True
    dens = _density_asym(levy)
    return tail_integrable(tf.growth.power + dens.power, tf.growth.logpow + dens.logpow)


def jump_integral(levy, tf, x, return_error=False):
    """``int (f(x+u) - f(x) - u f'(x) 1{u <= 1}) pi(du)``; ``inf`` if divergent."""
    if levy.is_zero():
        return (0.0, 0.0) if return_error else 0.0
    if not _jump_finite(levy, tf):
        return (math.inf, 0.0) if return_error else math.inf
    eta = 0.0
    val, err = 0.0, 0.0
    if levy.small_exponent() > 0:
        eta = 1e-6 * min(1.0, max(x, 1e-6))
        m2 = truncated_moment(levy, 2, 0.0, eta)
        val += 0.5 * tf.d2f(x) * m2
        err += abs(tf.d2f(x)) * m2 * 1e-3

    v1, e1 = levy.integrate(lambda u: tf.comp(x, u), eta, 1.0)
    v2, e2 = levy.integrate(lambda u: tf.incr(x, u), 1.0, math.inf)
    val += v1 + v2
    err += e1 + e2
    return (val, err) if return_error else val


def apply_generator(m, d, tf, x, return_error=False):
    """Extended generator applied to ``tf`` at ``x > 0``."""
    fp = tf.df(x)
    local = -float(d.eval(x)) * fp - m.gamma * x * fp + 0.5 * m.sigma ** 2 * x * tf.d2f(x)
    j, e = jump_integral(m.levy, tf, x, True)
    val = local + x * j
    return (val, x * e) if return_error else val


def large_jump_term(levy, d, z):
    """``int_1^inf z tail(u) / I(u + z) du``, the term that vanishes when I is finite."""
    if levy.is_zero():
        return 0.0
    if not _jump_finite(levy, lyapunov_f2(d)):
        return math.inf
    f = lambda u: z * float(levy.tail(u)) / float(d.eval(u + z))
    top = levy.support_max if np.isfinite(levy.support_max) else math.inf
    if top <= 1.0:
        return 0.0
    pts = [p for p in levy.breakpoints() if 1.0 < p < top]
    hi = min(top, Z_QUAD)
    v, _ = quad_log(f, 1.0, hi, points=pts)
    if top > Z_QUAD:
        g = lambda s: f(math.exp(s)) * math.exp(s)
        v += quad(g, math.log(Z_QUAD), 700.0)[0]
    return v


# ---------------------------------------------------------------------------
# Lyapunov certificates
# ---------------------------------------------------------------------------

@dataclass
class MarginResult:
    """Outcome of a Lyapunov scan; ``certified`` is True when ``Xf <= -c`` beyond ``M``."""

    which: str
    certified: bool
    M: Optional[float]
    c: Optional[float]
    z: np.ndarray
    values: np.ndarray
    residual: np.ndarray
    eps: np.ndarray
    large_jump: Optional[np.ndarray] = None
    reason: str = ""

    def to_dict(self):
        return {"which": self.which, "certified": self.certified, "M": self.M,
                "c": self.c, "reason": self.reason}


def margin_grid(d, z_max=1e8):
    return geometric_grid(max(d.kappa, 1.0), z_max, 2.0 ** 0.25)


def lyapunov_margin(m, d, which="F2", grid=None):
    """Scan ``Xf1`` or ``Xf2`` over a geometric grid and certify ``Xf <= -c``.

    ``c`` is the certified level capped at 1, minus a ``1e-3`` slack, and
    ``M`` the smallest grid point beyond which every value (plus its
    quadrature residual) stays below ``-c``. The residual curves are
    ``eps1(z) = Xf1(z)/z + 1 - (sigma^2/2)(I - zI')/I^2`` and
    ``eps2(z) = Xf2(z) + 1 - int_1^inf z tail(u)/I(u+z) du``.
    """
    which = which.upper()
    if which not in ("F1", "F2"):
        raise ValueError("which must be 'F1' or 'F2'")
    z = margin_grid(d) if grid is None else np.asarray(grid, dtype=float)
    reason = ""
    if not check_B1(d):
        reason = "condition (B1) fails"
    elif which == "F2" and not check_B2(d):
        reason = "condition (B2) fails"
    tf = lyapunov_f1(d) if which == "F1" else lyapunov_f2(d)
    vals = np.empty_like(z)
    res = np.empty_like(z)
    for i, x in enumerate(z):
        vals[i], res[i] = apply_generator(m, d, tf, float(x), True)
    I = np.asarray(d.eval(z))
    lj = None
    if which == "F1":
        dI = np.asarray(d.eval_deriv(z))
        eps = vals / z + 1.0 - 0.5 * m.sigma ** 2 * (I - z * dI) / I ** 2
    else:
        lj = np.array([large_jump_term(m.levy, d, float(x)) for x in z])
        eps = vals + 1.0 - lj
    if reason:
        return MarginResult(which, False, None, None, z, vals, res, eps, lj, reason)
    upper = vals + res
    n = len(z)
    tail = upper[-max(n // 4, 1):]
    level = float(np.min(-tail)) if np.all(np.isfinite(tail)) else -math.inf
    c = min(level, 1.0) - SLACK
    if not c >= SLACK:
        return MarginResult(which, False, None, None, z, vals, res, eps, lj,
                            "no grid level certifies Xf <= -c with c >= 1e-3")
    ok = upper <= -c
    bad = np.nonzero(~ok)[0]
    first = 0 if bad.size == 0 else int(bad[-1]) + 1
    return MarginResult(which, True, float(z[first]), float(c), z, vals, res, eps, lj)


@dataclass(frozen=True)
class LyapunovVerdict:
    kind: str            # CDI_by_iii, MeanHit_by_ii, NonExplosive_by_i or None
    x0: Optional[float] = None
    f1: Optional[MarginResult] = None
    f2: Optional[MarginResult] = None

    def to_dict(self):
        return {"verdict": self.kind, "x0": self.x0,
                "f1": None if self.f1 is None else self.f1.to_dict(),
                "f2": None if self.f2 is None else self.f2.to_dict()}


def theorem_A_verdict(m, d):
    """Combine the two Lyapunov scans into the strongest available conclusion.

    ``CDI_by_iii`` needs both margins certified and a finite flow integral,
    ``MeanHit_by_ii`` needs the F1 margin, and ``NonExplosive_by_i`` needs
    (B1) plus a bound ``Xf1 <= C f1`` on the tail of the scan.
    """
    r1 = lyapunov_margin(m, d, "F1")
    r2 = lyapunov_margin(m, d, "F2")
    try:
        bounded = math.isfinite(flow_integral(d))
    except UndecidableError:
        bounded = False
    if r1.certified and r2.certified and bounded:
        return LyapunovVerdict("CDI_by_iii", r2.M, r1, r2)
    if r1.certified:
        return LyapunovVerdict("MeanHit_by_ii", r1.M, r1, r2)
    if check_B1(d) and _f_bound(r1, lyapunov_f1(d)):
        return LyapunovVerdict("NonExplosive_by_i", None, r1, r2)
    return LyapunovVerdict("None", None, r1, r2)


def _f_bound(r, tf):
    """``Xf <= C f`` on the tail of the scan for a finite ``C``."""
    z = r.z[-max(len(r.z) // 4, 1):]
    v = (r.values + r.residual)[-len(z):]
    f = np.array([tf.f(float(x)) for x in z])
    return bool(np.all(np.isfinite(v)) and np.all(f > 0))
