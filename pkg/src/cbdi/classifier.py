"""Boundary-classification integrals and sufficient-condition verdicts.

``integral_I``, ``integral_J`` and ``flow_integral`` integrate from the drift
threshold ``kappa`` to infinity: adaptive quadrature in ``log u`` up to
``1e8`` plus an exact power-log remainder beyond. Divergence is decided
before any quadrature, by exponent arithmetic on the tail and drift
asymptotics, and reported as ``math.inf``.

Verdicts are one-sided: ``Guaranteed`` or ``Inconclusive``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import drift as _drift
from ._quad import (Cumulative, PowerLog, TOL_EXP, Z_QUAD, powerlog_tail, quad_log,
                    tail_integrable)
from .errors import ConsistencyError, UndecidableError
from .mechanism import Mechanism, PointMass, _tail_open, psi_eval

GUARANTEED = "Guaranteed"
INCONCLUSIVE = "Inconclusive"

ROWS = ("a1", "a2", "a3", "a4", "a5", "b1", "b2", "b3", "b4", "b5")


# ---------------------------------------------------------------------------
# asymptotics
# ---------------------------------------------------------------------------

def _drift_asym(d):
    a = d.asymptotic()
    if a is None:
        raise UndecidableError("drift has no power-log asymptotics")
    return a


def _tail_asym(levy):
    """``PowerLog`` for the tail, or ``None`` when the support is bounded."""
    if levy.is_zero() or np.isfinite(levy.support_max):
        return None
    a = levy.asymptotic()
    if a is None:
        raise UndecidableError("Lévy tail has no power-log asymptotics")
    return a


def _density_asym(levy):
    """Leading power-log term of the density at infinity."""
    t = _tail_asym(levy)
    if t is None:
        return None
    alpha = -t.power
    if alpha > 0:
        return PowerLog(alpha * t.coef, t.power - 1.0, t.logpow, t.start)
    # slowly varying tail: density = -beta c u**-1 (log u)**(beta - 1)
    return PowerLog(-t.logpow * t.coef, -1.0, t.logpow - 1.0, t.start)


def _improper(f, lo, asym, points=()):
    """``int_lo^inf f`` as quadrature to ``Z`` plus the analytic remainder.

    ``asym`` equals ``f`` exactly on ``[asym.start, inf)`` or is ``None``
    when ``f`` vanishes beyond ``Z``. Returns ``(value, residual)``.
    """
    z_top = max(Z_QUAD, lo, 1.0 + 1e-9)
    if asym is not None:
        z_top = max(z_top, asym.start)
    val, err = quad_log(f, lo, z_top, points=points)
    if asym is not None:
        rem = powerlog_tail(asym.coef, asym.power, asym.logpow, z_top)
        if not math.isfinite(rem):
            return math.inf, 0.0
        val += rem
    return val, err


def _support_top(levy, kappa):
    return max(kappa, levy.support_max) if np.isfinite(levy.support_max) else None


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

def flow_integral(d, return_error=False):
    """``int_kappa^inf du / I(u)``."""
    k = d.kappa
    a = _drift_asym(d)
    inv = PowerLog(1.0 / a.coef, -a.power, -a.logpow, a.start)
    if not tail_integrable(inv.power, inv.logpow):
        return (math.inf, 0.0) if return_error else math.inf
    pts = (d.z0,) if isinstance(d, _drift.PowerLog) else ()
    v, e = _improper(lambda u: 1.0 / float(d.eval(u)), k, inv, pts)
    return (v, e) if return_error else v


def integral_I(levy, d, return_error=False):
    """``int_kappa^inf u tail(u) / I(u) du``; ``math.inf`` when divergent."""
    if levy.is_zero():
        return (0.0, 0.0) if return_error else 0.0
    k = d.kappa
    pts = list(levy.breakpoints())
    if isinstance(d, _drift.PowerLog):
        pts.append(d.z0)
    f = lambda u: u * float(levy.tail(u)) / float(d.eval(u))
    top = _support_top(levy, k)
    if top is not None:
        v, e = quad_log(f, k, top, points=pts) if top > k else (0.0, 0.0)
    else:
        t = _tail_asym(levy)
        try:
            a = _drift_asym(d)
        except UndecidableError:
            raise UndecidableError("integral I: drift and tail asymptotics both needed") from None
        integrand = PowerLog(t.coef / a.coef, t.power + 1.0 - a.power,
                             t.logpow - a.logpow, max(t.start, a.start))
        if not tail_integrable(integrand.power, integrand.logpow):
            return (math.inf, 0.0) if return_error else math.inf
        v, e = _improper(f, k, integrand, pts)
    return (v, e) if return_error else v


def integral_J(levy, d, return_error=False):
    """``int_kappa^inf (1 + u tail(u)) / I(u) du = flow + integral_I``."""
    f, ef = flow_integral(d, True)
    i, ei = integral_I(levy, d, True)
    v = f + i
    return (v, ef + ei) if return_error else v


# ---------------------------------------------------------------------------
# moment reformulation
# ---------------------------------------------------------------------------

def _G_closed(d):
    k = d.kappa
    if isinstance(d, _drift.Logistic):
        c = d.c
        return lambda h: (2.0 / c) * math.log(h / k) if h > k else 0.0
    if isinstance(d, _drift.PowerLog) and d.beta_hat == 0.0 and k >= d.z0:
        c, p = d.c, 2.0 - d.alpha_hat
        if abs(p) <= TOL_EXP:
            return lambda h: math.log(h / k) / c if h > k else 0.0
        return lambda h: (h ** p - k ** p) / (c * p) if h > k else 0.0
    return None


def make_G(d):
    """``G(h) = int_kappa^h u / I(u) du`` (zero below ``kappa``)."""
    g = _G_closed(d)
    if g is not None:
        return g
    pts = (d.z0,) if isinstance(d, _drift.PowerLog) else tuple(getattr(d, "kinks", ()))
    return Cumulative(lambda u: u / float(d.eval(u)), d.kappa, pts,
                      vg=lambda u: u / d.eval(u),
                      vdg=lambda u: (1.0 - u * d.eval_deriv(u) / d.eval(u)) / d.eval(u))


def moment_G(d, h):
    if h < d.kappa:
        raise ValueError("moment_G needs h >= kappa")
    return make_G(d)(h)


def _G_moment_finite(levy, d):
    """Finiteness of ``int G dpi`` from the asymptotics of ``G`` and the density."""
    if levy.is_zero() or np.isfinite(levy.support_max):
        return True
    a = _drift_asym(d)
    p, q = 1.0 - a.power, -a.logpow   # u / I(u) ~ u**p (log u)**q
    dens = _density_asym(levy)
    if tail_integrable(p, q):
        return True                   # G bounded, pi finite on [kappa, inf)
    if abs(p + 1.0) <= TOL_EXP:
        gp, gq = 0.0, q + 1.0         # G ~ (log h)**(q+1)
    else:
        gp, gq = p + 1.0, q
    return tail_integrable(gp + dens.power, gq + dens.logpow)


@dataclass(frozen=True)
class MomentResult:
    finite: bool
    value: float

    def __repr__(self):
        return f"Finite({self.value!r})" if self.finite else "Infinite"


def moment_criterion(levy, d, rtol=1e-6):
    """``int_kappa^inf G(h) pi(dh)``, cross-checked against ``integral_I``.

    The finiteness decision comes from the asymptotics of ``G`` and the
    density; the value from quadrature against the measure up to ``1e8``,
    closed beyond by parts with the exact power-log form of
    ``u tail(u) / I(u)``. Both must agree with ``integral_I`` (Fubini),
    otherwise ``ConsistencyError``.
    """
    if levy.is_zero():
        return MomentResult(True, 0.0)
    finite = _G_moment_finite(levy, d)
    i_val = integral_I(levy, d)
    if finite != math.isfinite(i_val):
        raise ConsistencyError(
            f"moment criterion finite={finite} but integral I = {i_val}")
    if not finite:
        return MomentResult(False, math.inf)
    G = make_G(d)
    k = d.kappa
    top = max(Z_QUAD, k)
    val, _ = levy.integrate(G, k * (1 - 1e-15), top)
    if levy.support_max > top:
        # beyond ``top``, by parts: G(top) pi((top, inf)) + int_top^inf u tail(u) / I(u) du
        t, a = _tail_asym(levy), _drift_asym(d)
        asym = PowerLog(t.coef / a.coef, t.power + 1.0 - a.power, t.logpow - a.logpow,
                        max(t.start, a.start))
        f = lambda u: u * float(levy.tail(u)) / float(d.eval(u))
        rem, _ = _improper(f, top, asym)
        val += G(top) * _tail_open(levy, top) + rem
    if abs(val - i_val) > rtol * max(abs(i_val), 1e-300) and abs(val - i_val) > 1e-12:
        raise ConsistencyError(
            f"Fubini mismatch: int G dpi = {val!r}, integral I = {i_val!r}")
    return MomentResult(True, val)


# ---------------------------------------------------------------------------
# regime table
# ---------------------------------------------------------------------------

def regime_table(alpha, beta, alpha_hat, beta_hat, tol=1e-12):
    """Rows of the power-log regime table satisfied by the exponents."""
    eq = lambda x, y: abs(x - y) <= tol
    out = set()
    s = alpha + alpha_hat
    if s > 2 + tol and 1 + tol < alpha_hat < 2 - tol:
        out |= {"a1", "b1"}
    if alpha > 1 + tol and eq(alpha_hat, 1):
        if beta_hat > tol:
            out.add("a2")
        if beta_hat > 1 + tol:
            out.add("b2")
    if eq(alpha_hat, 2):
        out |= {"a3", "b3"}
    if eq(s, 2) and 1 + tol < alpha_hat < 2 - tol and beta_hat - beta > 1 + tol:
        out |= {"a4", "b4"}
    if eq(alpha, 1) and eq(alpha_hat, 1) and beta_hat - beta > 1 + tol:
        if beta_hat > tol:
            out.add("a5")
        if beta_hat > 1 + tol:
            out.add("b5")
    return sorted(out)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass
class ClassificationReport:
    I_value: Optional[float]
    J_value: Optional[float]
    flow_integral: Optional[float]
    b1: _drift.CheckResult
    b2: _drift.CheckResult
    b3: _drift.CheckResult
    verdict_nonexplosion: str
    verdict_cdi: str
    table_row: Optional[list]
    kappa: float
    residual: float = 0.0
    comparison: Optional[dict] = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        num = lambda v: None if v is None else (("inf" if v == math.inf else v))
        return {
            "I_value": num(self.I_value), "J_value": num(self.J_value),
            "flow_integral": num(self.flow_integral),
            "b1": self.b1.to_dict(), "b2": self.b2.to_dict(), "b3": self.b3.to_dict(),
            "verdict_nonexplosion": self.verdict_nonexplosion,
            "verdict_cdi": self.verdict_cdi, "table_row": self.table_row,
            "kappa": self.kappa, "quadrature_residual": self.residual,
            "comparison": self.comparison, "notes": list(self.notes),
        }


def _exponents(levy, d):
    """``(alpha, beta, alpha_hat, beta_hat)`` when both sides are power-log."""
    try:
        t = _tail_asym(levy)
        a = _drift_asym(d)
    except UndecidableError:
        return None
    if t is None:
        return None
    return -t.power, t.logpow, a.power, a.logpow


def _direct(levy, d):
    b1 = _drift.check_B1(d)
    b2 = _drift.check_B2(d)
    res = 0.0
    notes = []
    try:
        i_val, ei = integral_I(levy, d, True)
        res += ei
    except UndecidableError as exc:
        i_val = None
        notes.append(str(exc))
    try:
        f_val, ef = flow_integral(d, True)
        res += ef
    except UndecidableError as exc:
        f_val = None
        notes.append(str(exc))
    j_val = None if (i_val is None or f_val is None) else i_val + f_val
    nonexp = GUARANTEED if (b1 and i_val is not None and math.isfinite(i_val)) else INCONCLUSIVE
    cdi = GUARANTEED if (b1 and b2 and j_val is not None and math.isfinite(j_val)) \
        else INCONCLUSIVE
    return b1, b2, i_val, f_val, j_val, nonexp, cdi, res, notes


def comparison_drift(levy, d):
    """A smaller pure-power drift that the theorem handles, if one exists.

    With tail exponent ``alpha`` and drift exponent ``alpha_hat``, any
    ``alpha'`` in ``(max(1, 2 - alpha), min(2, alpha_hat))`` gives a drift
    ``c' z**alpha'`` below ``I`` on ``[kappa, inf)`` for small enough ``c'``.
    """
    ex = _exponents(levy, d)
    if ex is None:
        return None
    alpha, _, ah, bh = ex
    lo, hi = max(1.0, 2.0 - alpha), min(2.0, ah)
    if not (alpha > 0 and hi - lo > 1e-6):
        return None
    ap = 0.5 * (lo + hi)
    k = d.kappa
    # d / z**ap ~ z**(ah - ap) (log z)**bh attains its minimum by log z = -bh / (ah - ap)
    top = max(Z_QUAD, 10 * k, math.exp(min(230.0, max(0.0, -2.0 * bh / (ah - ap)))))
    z = _drift.geometric_grid(k, top, 2 ** (1 / 32))
    ratio = np.asarray(d.eval(z)) / z ** ap
    c_small = 0.5 * float(np.min(ratio))
    if not c_small > 0:
        return None
    return _drift.PowerLog(c_small, ap, 0.0, z0=1.0, kappa_=max(1.0, k))


def classify(m, d):
    """Sufficient-condition verdicts for non-explosion and coming down from infinity."""
    levy = m.levy if isinstance(m, Mechanism) else m
    b1, b2, i_val, f_val, j_val, nonexp, cdi, res, notes = _direct(levy, d)
    comp = None
    if nonexp == INCONCLUSIVE or cdi == INCONCLUSIVE:
        dp = comparison_drift(levy, d)
        if dp is not None:
            _, _, _, _, _, ne2, cdi2, _, _ = _direct(levy, dp)
            if ne2 == GUARANTEED or cdi2 == GUARANTEED:
                comp = {"drift": dp.to_config(), "verdict_nonexplosion": ne2,
                        "verdict_cdi": cdi2}
                if ne2 == GUARANTEED:
                    nonexp = GUARANTEED
                if cdi2 == GUARANTEED:
                    cdi = GUARANTEED
                notes.append("verdict via comparison with a smaller drift")
    ex = _exponents(levy, d)
    row = regime_table(*ex) if ex is not None else None
    return ClassificationReport(i_val, j_val, f_val, b1, b2, _drift.check_B3(d),
                                nonexp, cdi, row, d.kappa, res, comp, notes)


# ---------------------------------------------------------------------------
# regular-variation cross-check
# ---------------------------------------------------------------------------

def regular_variation_check(m, d, u_lo=1e5, u_hi=1e8):
    """Compare ``int (1 + u |Psi(1/u)|) / I(u) du`` with the finiteness of J.

    For tails regularly varying with index ``alpha`` in ``(0, 1)``. The
    integrand's log-log slope is measured from ``psi_eval`` on
    ``[u_lo, u_hi]``; finiteness is read off that slope, so instances
    should keep the slope away from ``-1``.
    """
    levy = m.levy
    t = _tail_asym(levy)
    if t is None or not (0.0 < -t.power < 1.0):
        raise ValueError("regular-variation check needs a tail index in (0, 1)")
    u = np.geomspace(u_lo, u_hi, 7)
    vals = np.array([(1.0 + x * abs(psi_eval(m, 1.0 / x))) / float(d.eval(x)) for x in u])
    slope = float(np.polyfit(np.log(u), np.log(vals), 1)[0])
    finite_rv = slope < -1.0
    finite_j = math.isfinite(integral_J(levy, d))
    return {"slope": slope, "finite_rv": finite_rv, "finite_J": finite_j,
            "agree": finite_rv == finite_j}
