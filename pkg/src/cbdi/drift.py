"""Interaction drifts ``I`` and grid-certified checks of their structural conditions.

Conditions checked:

* ``check_A``: ``I(0) <= 0`` and ``I`` locally Lipschitz on ``(0, inf)``.
* ``check_B1``: on ``[kappa, inf)``, ``I`` is C1 and positive, ``I(z)/z`` is
  nondecreasing and tends to infinity, and ``int u / I(u) du`` diverges.
* ``check_B2``: ``I'(z)/z`` bounded on ``[kappa, inf)``.
* ``check_B3``: one-sided Lipschitz bound ``I(y+z) - I(y) >= -b z``.

Parametric families decide the asymptotic clauses by exponent arithmetic;
``Custom`` drifts fall back on growth tests along the grid.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._quad import PowerLog as _PL, TOL_EXP, tail_integrable
from .errors import ConfigError, NumericalError

LINEAR, LOGISTIC, POWER_LOG, CUSTOM = 0, 1, 2, 3

Z_MAX = 1e8
GRID_RATIO = 2.0 ** 0.125


def geometric_grid(lo, hi, ratio=GRID_RATIO):
    """Geometric grid from ``lo`` to ``hi`` (both included)."""
    n = max(int(math.ceil(math.log(hi / lo) / math.log(ratio))), 1)
    return np.geomspace(lo, hi, n + 1)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a condition check; truthy when it passed."""

    passed: bool
    reason: str = ""
    witness: Optional[float] = None
    b: Optional[float] = None

    def __bool__(self):
        return self.passed

    def to_dict(self):
        d = {"passed": self.passed}
        if self.reason:
            d["reason"] = self.reason
        if self.witness is not None:
            d["witness"] = self.witness
        if self.b is not None:
            d["b"] = self.b
        return d


class DriftSpec:
    """Base class: ``I``, ``I'`` and ``I''`` evaluators plus the threshold ``kappa``."""

    code = CUSTOM

    def eval(self, z):
        raise NotImplementedError

    def eval_deriv(self, z):
        raise NotImplementedError

    def eval_deriv2(self, z):
        raise NotImplementedError

    def asymptotic(self):
        """``PowerLog`` equal to ``I`` on ``[start, inf)``, or ``None``."""
        return None

    @property
    def kappa(self):
        raise NotImplementedError

    def kernel_params(self):
        return np.zeros(8)

    def to_config(self):
        raise NotImplementedError

    def __call__(self, z):
        return self.eval(z)


def _arr(z):
    return np.asarray(z, dtype=float)


def _ret(z, out):
    return float(out) if np.ndim(z) == 0 else out


@dataclass(frozen=True)
class Linear(DriftSpec):
    """``I(z) = a z``; reproduces a CB process with ``gamma + a``."""

    a: float
    kappa_: Optional[float] = None
    code = LINEAR

    def eval(self, z):
        return _ret(z, self.a * _arr(z))

    def eval_deriv(self, z):
        return _ret(z, np.full_like(_arr(z), self.a))

    def eval_deriv2(self, z):
        return _ret(z, np.zeros_like(_arr(z)))

    def asymptotic(self):
        return _PL(self.a, 1.0, 0.0, 1.0) if self.a > 0 else None

    @property
    def kappa(self):
        return 1.0 if self.kappa_ is None else self.kappa_

    def kernel_params(self):
        p = np.zeros(8)
        p[0] = self.a
        return p

    def to_config(self):
        return _with_kappa({"family": "linear", "a": self.a}, self.kappa_)


@dataclass(frozen=True)
class Logistic(DriftSpec):
    """``I(z) = (c/2) z**2``."""

    c: float
    kappa_: Optional[float] = None
    code = LOGISTIC

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("Logistic needs c > 0")

    def eval(self, z):
        z = _arr(z)
        with np.errstate(over="ignore"):
            return _ret(z, 0.5 * self.c * z * z)

    def eval_deriv(self, z):
        return _ret(z, self.c * _arr(z))

    def eval_deriv2(self, z):
        return _ret(z, np.full_like(_arr(z), self.c))

    def asymptotic(self):
        return _PL(0.5 * self.c, 2.0, 0.0, 1.0)

    @property
    def kappa(self):
        return 1.0 if self.kappa_ is None else self.kappa_

    def kernel_params(self):
        p = np.zeros(8)
        p[0] = self.c
        return p

    def to_config(self):
        return _with_kappa({"family": "logistic", "c": self.c}, self.kappa_)


@dataclass(frozen=True)
class PowerLog(DriftSpec):
    """``I(z) = c z**alpha_hat (log z)**beta_hat`` for ``z >= z0``.

    On ``[0, z0)`` a cubic ``a1 z + a2 z**2 + a3 z**3`` matches value,
    first and second derivative at ``z0``, so ``I`` is C2 with ``I(0) = 0``.
    """

    c: float
    alpha_hat: float
    beta_hat: float = 0.0
    z0: Optional[float] = None
    kappa_: Optional[float] = None
    code = POWER_LOG
    _cubic: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("PowerLog needs c > 0")
        z0 = self.z0
        if z0 is None:
            z0 = 1.0 if self.beta_hat == 0.0 else math.e
        if self.beta_hat != 0.0 and z0 <= 1.0:
            raise ConfigError("PowerLog with beta_hat != 0 needs z0 > 1")
        if z0 <= 0:
            raise ConfigError("PowerLog needs z0 > 0")
        object.__setattr__(self, "z0", float(z0))
        i0, i1, i2 = self._upper(np.array([z0]))
        A = np.array([[z0, z0 ** 2, z0 ** 3], [1.0, 2 * z0, 3 * z0 ** 2], [0.0, 2.0, 6 * z0]])
        coef = np.linalg.solve(A, np.array([i0[0], i1[0], i2[0]]))
        object.__setattr__(self, "_cubic", tuple(float(x) for x in coef))

    def _upper(self, z):
        """``(I, I', I'')`` of the power-log form for ``z >= z0``."""
        with np.errstate(over="ignore", invalid="ignore"):
            return self._upper_raw(z)

    def _upper_raw(self, z):
        s = np.log(z)
        ah, bh, c = self.alpha_hat, self.beta_hat, self.c
        e = c * z ** ah
        if bh == 0.0:
            d0 = e
            d1 = ah * e
            d2 = ah * ah * e
        else:
            d0 = e * s ** bh
            d1 = e * (ah * s ** bh + bh * s ** (bh - 1))
            d2 = e * (ah * ah * s ** bh + 2 * ah * bh * s ** (bh - 1)
                      + bh * (bh - 1) * s ** (bh - 2))
        # derivatives in z from derivatives in s = log z
        return d0, d1 / z, (d2 - d1) / (z * z)

    def _eval_all(self, z):
        z = np.atleast_1d(_arr(z))
        a1, a2, a3 = self._cubic
        hi = z >= self.z0
        out = [np.empty_like(z) for _ in range(3)]
        if np.any(hi):
            for o, v in zip(out, self._upper(z[hi])):
                o[hi] = v
        lo = ~hi
        zl = z[lo]
        out[0][lo] = zl * (a1 + zl * (a2 + zl * a3))
        out[1][lo] = a1 + zl * (2 * a2 + 3 * a3 * zl)
        out[2][lo] = 2 * a2 + 6 * a3 * zl
        return out

    def _scalar(self, z, order):
        """Scalar ``I``, ``I'`` or ``I''`` without array overhead."""
        z = float(z)
        if z < self.z0:
            a1, a2, a3 = self._cubic
            return (z * (a1 + z * (a2 + z * a3)), a1 + z * (2 * a2 + 3 * a3 * z),
                    2 * a2 + 6 * a3 * z)[order]
        ah, bh = self.alpha_hat, self.beta_hat
        try:
            e = self.c * z ** ah
        except OverflowError:
            e = math.inf
        if bh == 0.0:
            return (e, ah * e / z, ah * (ah - 1) * e / (z * z))[order]
        s = math.log(z)
        if order == 0:
            return e * s ** bh
        d1 = e * (ah * s ** bh + bh * s ** (bh - 1))
        if order == 1:
            return d1 / z
        d2 = e * (ah * ah * s ** bh + 2 * ah * bh * s ** (bh - 1)
                  + bh * (bh - 1) * s ** (bh - 2))
        return (d2 - d1) / (z * z)

    def eval(self, z):
        if np.ndim(z) == 0:
            return self._scalar(z, 0)
        return self._eval_all(z)[0]

    def eval_deriv(self, z):
        if np.ndim(z) == 0:
            return self._scalar(z, 1)
        return self._eval_all(z)[1]

    def eval_deriv2(self, z):
        if np.ndim(z) == 0:
            return self._scalar(z, 2)
        return self._eval_all(z)[2]

    def asymptotic(self):
        return _PL(self.c, self.alpha_hat, self.beta_hat, max(self.z0, self.kappa))

    @property
    def kappa(self):
        if self.kappa_ is not None:
            return self.kappa_
        k = max(1.0, self.z0)
        # (I/z)' >= 0 in s = log z iff (alpha_hat - 1) s + beta_hat >= 0
        if self.alpha_hat > 1.0 and self.beta_hat < 0.0:
            k = max(k, math.exp(-self.beta_hat / (self.alpha_hat - 1.0)))
        return k

    def kernel_params(self):
        p = np.zeros(8)
        p[:7] = (self.c, self.alpha_hat, self.beta_hat, self.z0) + self._cubic
        return p

    def to_config(self):
        return _with_kappa({"family": "power_log", "c": self.c, "alpha_hat": self.alpha_hat,
                            "beta_hat": self.beta_hat, "z0": self.z0}, self.kappa_)


@dataclass(frozen=True)
class Custom(DriftSpec):
    """User-supplied ``I`` and ``I'`` (vectorised callables).

    ``kinks`` lists points where ``I'`` is undefined. ``asymptotic`` may
    supply a ``PowerLog`` tail description; without it the asymptotic
    clauses are judged by growth tests on the grid.
    """

    f: Callable
    df: Callable
    d2f: Optional[Callable] = None
    kappa_: Optional[float] = None
    asym: Optional[_PL] = None
    kinks: tuple = ()
    name: str = "custom"
    code = CUSTOM

    def eval(self, z):
        return _ret(z, np.asarray(self.f(_arr(z)), dtype=float))

    def eval_deriv(self, z):
        zz = np.atleast_1d(_arr(z))
        if any(np.any(zz == k) for k in self.kinks):
            raise NumericalError("derivative undefined at a kink of the drift")
        return _ret(z, np.asarray(self.df(_arr(z)), dtype=float))

    def eval_deriv2(self, z):
        if self.d2f is not None:
            return _ret(z, np.asarray(self.d2f(_arr(z)), dtype=float))
        z = _arr(z)
        h = 1e-5 * np.maximum(z, 1e-3)
        return _ret(z, (np.asarray(self.df(z + h)) - np.asarray(self.df(z - h))) / (2 * h))

    def asymptotic(self):
        return self.asym

    @property
    def kappa(self):
        if self.kappa_ is not None:
            return self.kappa_
        return default_kappa(self)

    def to_config(self):
        raise ConfigError("Custom drifts cannot be written to a config file")


def default_kappa(d, z_max=Z_MAX):
    """Smallest grid point from which ``I > 0`` and ``I(z)/z`` is nondecreasing."""
    z = geometric_grid(1e-3, z_max)
    i = np.asarray(d.eval(z))
    q = i / z
    good = (i > 0) & np.append(np.diff(q) >= -1e-12 * np.abs(q[1:]), True)
    bad = np.nonzero(~good)[0]
    if bad.size == 0:
        return float(z[0])
    if bad[-1] + 1 >= z.size:
        return float(z[-1])
    return float(z[bad[-1] + 1])


def _with_kappa(cfg, kappa):
    if kappa is not None:
        cfg["kappa"] = kappa
    return cfg


def drift_from_config(cfg):
    """Build a drift from a ``[drift]`` mapping."""
    cfg = dict(cfg)
    fam = cfg.pop("family", None)
    kappa = cfg.pop("kappa", None)
    kappa = None if kappa is None else float(kappa)
    allowed = {"linear": {"a"}, "zero": set(), "logistic": {"c"},
               "power_log": {"c", "alpha_hat", "beta_hat", "z0"}}
    if fam not in allowed:
        raise ConfigError(f"drift.family: unknown family {fam!r}")
    unknown = set(cfg) - allowed[fam]
    if unknown:
        raise ConfigError(f"drift: unknown keys {sorted(unknown)}")
    try:
        if fam == "zero":
            return Linear(0.0, kappa)
        if fam == "linear":
            return Linear(float(cfg["a"]), kappa)
        if fam == "logistic":
            return Logistic(float(cfg["c"]), kappa)
        return PowerLog(float(cfg["c"]), float(cfg["alpha_hat"]),
                        float(cfg.get("beta_hat", 0.0)),
                        None if cfg.get("z0") is None else float(cfg["z0"]), kappa)
    except KeyError as exc:
        raise ConfigError(f"drift: missing key {exc.args[0]!r}") from None


# ---------------------------------------------------------------------------
# condition checks
# ---------------------------------------------------------------------------

def eval(d, z):  # noqa: A001 - mirrors the operation name
    return d.eval(z)


def eval_deriv(d, z):
    return d.eval_deriv(z)


def check_A(d, z_max=Z_MAX, per_block=64, refine=8):
    """``I(0) <= 0`` and bounded difference quotients on each dyadic block.

    On every block ``[2^k, 2^(k+1)]`` the largest difference quotient is
    computed on ``per_block`` and on ``refine * per_block`` intervals; a
    Lipschitz function keeps it stable under refinement while a jump makes
    it grow with the resolution (by ``refine`` for a jump, by its square
    root for a square-root cusp).
    """
    i0 = float(d.eval(0.0))
    if not i0 <= 0:
        return CheckResult(False, "I(0) > 0", witness=0.0)
    for k in range(-20, int(math.ceil(math.log2(z_max)))):
        z = np.linspace(2.0 ** k, 2.0 ** (k + 1), refine * per_block + 1)
        v = np.asarray(d.eval(z), dtype=float)
        if not np.all(np.isfinite(v)):
            return CheckResult(False, "non-finite value", witness=float(z[~np.isfinite(v)][0]))
        fine = np.abs(np.diff(v) / np.diff(z))
        coarse = np.abs(np.diff(v[::refine]) / np.diff(z[::refine]))
        j = int(np.argmax(fine))
        floor = 1e-9 * (1.0 + np.max(np.abs(v)) / z[-1])
        if fine[j] > 2.0 * coarse.max() + floor:
            return CheckResult(False, "difference quotients unbounded", witness=float(z[j]))
    return CheckResult(True)


def _parametric(d):
    if isinstance(d, PowerLog):
        return d.alpha_hat, d.beta_hat
    if isinstance(d, Logistic):
        return 2.0, 0.0
    if isinstance(d, Linear):
        return 1.0, 0.0
    a = d.asymptotic()
    if a is not None:
        return a.power, a.logpow
    return None


def _eff_slope(f, z_hi, decades=1.0):
    """Log-log slope of ``f`` over the last ``decades`` before ``z_hi``."""
    z_lo = z_hi / 10.0 ** decades
    a, b = float(f(z_lo)), float(f(z_hi))
    return (math.log(b) - math.log(a)) / (math.log(z_hi) - math.log(z_lo))


def check_B1(d, z_max=Z_MAX):
    """All four clauses of (B1) on ``[kappa, inf)``."""
    kappa = d.kappa
    z = geometric_grid(max(kappa, 1e-3), max(z_max, 10 * kappa))
    try:
        i = np.asarray(d.eval(z))
        di = np.asarray(d.eval_deriv(z))
    except NumericalError:
        return CheckResult(False, "I is not C1 on [kappa, inf)")
    if not np.all(np.isfinite(di)):
        return CheckResult(False, "I is not C1 on [kappa, inf)",
                           witness=float(z[~np.isfinite(di)][0]))
    if np.any(i <= 0):
        return CheckResult(False, "I is not positive on [kappa, inf)",
                           witness=float(z[np.argmax(i <= 0)]))
    q = i / z
    dq = np.diff(q)
    viol = dq < -1e-12 * np.abs(q[1:])
    if np.any(viol):
        return CheckResult(False, "I(z)/z is not nondecreasing",
                           witness=float(z[1:][viol][0]))
    par = _parametric(d)
    if par is not None:
        ah, bh = par
        grows = ah > 1.0 + TOL_EXP or (abs(ah - 1.0) <= TOL_EXP and bh > TOL_EXP)
        diverges = not tail_integrable(1.0 - ah, -bh)
    else:
        top = z[-1]
        slope = _eff_slope(lambda u: d.eval(u) / u, top, 4.0)
        grows = slope > 0.01 and q[-1] > q[-2]
        diverges = _eff_slope(lambda u: u / d.eval(u), top, 1.0) >= -1.0 - 0.01
    if not grows:
        return CheckResult(False, "I(z)/z does not tend to infinity")
    if not diverges:
        return CheckResult(False, "int u/I(u) du is finite")
    return CheckResult(True)


def check_B2(d, z_max=Z_MAX):
    """``I'(z)/z`` bounded on ``[kappa, inf)``."""
    kappa = d.kappa
    z = geometric_grid(max(kappa, 1e-3), max(z_max, 10 * kappa))
    try:
        r = np.asarray(d.eval_deriv(z)) / z
    except NumericalError:
        return CheckResult(False, "I' undefined on [kappa, inf)")
    if not np.all(np.isfinite(r)):
        return CheckResult(False, "I'(z)/z not finite", witness=float(z[~np.isfinite(r)][0]))
    par = _parametric(d)
    if par is not None:
        ah, bh = par
        e, l = ah - 2.0, bh
        ok = e < -TOL_EXP or (abs(e) <= TOL_EXP and l <= TOL_EXP)
        if not ok:
            return CheckResult(False, "I'(z)/z grows at infinity",
                               witness=float(z[np.argmax(np.abs(r))]))
    else:
        a = np.abs(r)
        n = a.size
        if a[-1] > 2.0 * a[max(n - 25, 0)] + 1e-12:
            return CheckResult(False, "I'(z)/z grows along the grid", witness=float(z[-1]))
    return CheckResult(True, b=None)


def _b3_level(d, z_max, n=121):
    g = np.concatenate([[0.0], np.geomspace(1e-6 * z_max, z_max, n - 1)])
    y = g[:, None]
    zz = g[None, 1:]
    incr = (np.asarray(d.eval(y + zz)) - np.asarray(d.eval(y))) / zz
    k = np.unravel_index(int(np.argmin(incr)), incr.shape)
    lvl = float(-incr[k])
    dg = np.concatenate([np.geomspace(1e-9, z_max, 4 * n)])
    try:
        dmin = float(np.min(d.eval_deriv(dg)))
        lvl = max(lvl, -dmin)
        d0 = float(np.asarray(d.eval_deriv(0.0)))
        lvl = max(lvl, -d0)
    except NumericalError:
        pass
    return max(lvl, 0.0), (float(g[k[0]]), float(g[1:][k[1]]))


def check_B3(d, z_max=100.0):
    """One-sided Lipschitz bound on ``[0, z_max]``.

    Returns ``Pass(b)`` with the smallest grid-certified ``b >= 0``. For the
    parametric families ``b = max(0, -inf I')`` in closed form. ``Fail`` is
    reported when the bound keeps growing with the window, i.e. no finite
    ``b`` works on ``[0, inf)``.
    """
    if isinstance(d, Linear):
        return CheckResult(True, b=float(max(0.0, -d.a)))
    if isinstance(d, Logistic):
        return CheckResult(True, b=0.0)
    b, wit = _b3_level(d, z_max)
    if isinstance(d, PowerLog):
        z = np.concatenate([np.linspace(0.0, d.z0, 2001), geometric_grid(d.z0, max(z_max, 1e8), 2 ** (1 / 32))])
        b = max(0.0, -float(np.min(d.eval_deriv(z))))
        return CheckResult(True, b=b)
    b_small, _ = _b3_level(d, z_max / 100.0)
    if b > 2.0 * b_small + 1e-9 and b > 1e-9:
        return CheckResult(False, "increments unbounded below", witness=wit[0] + wit[1])
    return CheckResult(True, b=b)
