"""Branching mechanisms: Lévy measures, the Lévy-Khintchine exponent and samplers.

A :class:`LevyMeasure` is described through its tail ``tail(u) = pi([u, inf))``.
Every family also exposes its density and atoms so integrals against the
measure can be written directly, plus an optional :class:`PowerLog`
description of the tail at infinity used for exponent arithmetic.

Conventions
-----------
* ``integrate(g, a, b)`` integrates over ``(a, b]``, matching the split of the
  branching mechanism into ``(0, 1]`` and ``(1, inf)``.
* ``truncated_moment(levy, p, a, b)`` integrates over ``[a, b)``, so jumps
  of size ``>= eps`` are exactly those simulated above a cutoff ``eps``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from ._quad import PowerLog, Z_QUAD, powerlog_tail, quad, quad_log
from .errors import ConfigError, EmptyMeasureError, NumericalError

# kernel family codes, shared with the simulation backends
ZERO, POINT_MASS, PARETO_LOG, TABULATED = 0, 1, 2, 3

_S_MAX = 745.0  # log of the largest representable jump
_S_TOP = 700.0  # upper end of quadrature in log-variable


class LevyMeasure:
    """Base class for the parametric Lévy measures."""

    code = ZERO

    # -- tail -----------------------------------------------------------
    def tail(self, u):
        raise NotImplementedError

    def tail_inverse(self, y):
        """Smallest ``h`` with ``tail(h) <= y`` (vectorised over ``y``)."""
        raise NotImplementedError

    def density(self, h):
        return 0.0

    def atoms(self):
        return ()

    def breakpoints(self):
        """Points where the density is not smooth."""
        return ()

    def asymptotic(self):
        """``PowerLog`` equal to the tail on ``[start, inf)``, or ``None``."""
        return None

    @property
    def support_max(self):
        return math.inf

    def small_exponent(self):
        """Exponent ``a`` with ``tail(h) ~ h**-a`` as ``h -> 0`` (``<= 0`` if finite)."""
        return 0.0

    def is_zero(self):
        return False

    def kernel_params(self):
        return np.zeros(8)

    def tables(self):
        """``(log_u, log_tail)`` node arrays for tabulated tails."""
        return np.zeros(0), np.zeros(0)

    def to_config(self):
        raise NotImplementedError

    # -- integrals against the measure -----------------------------------
    def integrate(self, g, a, b, **kw):
        """``int_(a, b] g(h) pi(dh)``; ``b`` may be ``inf``."""
        total, err = 0.0, 0.0
        for h, mass in self.atoms():
            if a < h <= b:
                total += mass * g(h)
        hi_c = min(b, self.support_max)
        if hi_c <= a or self._no_density():
            return total, err
        pts = [p for p in self.breakpoints() if a < p < hi_c]
        lo = a
        f = lambda h: g(h) * self.density(h)
        if lo == 0.0:
            first = min([p for p in pts] + [hi_c, 1.0])
            v, e = quad(f, 0.0, first, **kw)
            total, err = total + v, err + e
            lo = first
        top = min(hi_c, Z_QUAD)
        if top > lo:
            v, e = quad_log(f, lo, top, points=pts, **kw)
            total, err = total + v, err + e
        if hi_c > Z_QUAD and hi_c > lo:
            start = max(lo, Z_QUAD)
            s_top = min(math.log(hi_c), _S_TOP)
            gs = lambda s: f(math.exp(s)) * math.exp(s)
            v, e = quad(gs, math.log(start), s_top, **kw)
            total, err = total + v, err + e
            if s_top < math.log(hi_c):
                # beyond e**700 the integrand is taken constant (g bounded there)
                u_top = math.exp(s_top)
                total += g(u_top) * float(self.tail(u_top))
        return total, err

    def _no_density(self):
        return False


@dataclass(frozen=True)
class Zero(LevyMeasure):
    """The null measure (pure diffusion mechanisms)."""

    code = ZERO

    def tail(self, u):
        return np.zeros_like(np.asarray(u, dtype=float)) if np.ndim(u) else 0.0

    def tail_inverse(self, y):
        raise EmptyMeasureError("the zero measure has no jumps")

    def _no_density(self):
        return True

    @property
    def support_max(self):
        return 0.0

    def is_zero(self):
        return True

    def to_config(self):
        return {"family": "zero"}


@dataclass(frozen=True)
class PointMass(LevyMeasure):
    """``rate`` times a Dirac mass at ``h0``."""

    h0: float
    rate: float
    code = POINT_MASS

    def __post_init__(self):
        if not (self.h0 > 0 and self.rate > 0):
            raise ConfigError("PointMass needs h0 > 0 and rate > 0")
        if self.h0 < 1.0 and self.tail(1.0) == 0.0:
            raise ConfigError("a nonzero Lévy measure needs tail(1) > 0 (h0 >= 1)")

    def tail(self, u):
        return np.where(np.asarray(u) <= self.h0, self.rate, 0.0) if np.ndim(u) \
            else (self.rate if u <= self.h0 else 0.0)

    def tail_inverse(self, y):
        return np.full_like(np.asarray(y, dtype=float), self.h0) if np.ndim(y) else self.h0

    def atoms(self):
        return ((self.h0, self.rate),)

    def _no_density(self):
        return True

    @property
    def support_max(self):
        return self.h0

    def kernel_params(self):
        p = np.zeros(8)
        p[0], p[1] = self.h0, self.rate
        return p

    def to_config(self):
        return {"family": "point_mass", "h0": self.h0, "rate": self.rate}


@dataclass(frozen=True)
class ParetoLogTail(LevyMeasure):
    """Tail ``c_b u**-alpha (log u)**beta`` on ``[u0, inf)``.

    Below ``u0`` the measure is zero unless a small-jump density
    ``small_scale * h**(-1 - small_alpha)`` on ``(0, u0)`` is given
    (``small_alpha < 2``; ``small_alpha <= 0`` means finite activity).
    ``alpha = 0`` with ``beta < 0`` gives slowly varying tails with an
    infinite log-moment.
    """

    alpha: float
    beta: float = 0.0
    c_b: float = 1.0
    u0: float = 1.0
    small_alpha: float = 0.0
    small_scale: float = 0.0
    code = PARETO_LOG

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 2.0):
            raise ConfigError("ParetoLogTail needs alpha in [0, 2]")
        if self.alpha == 0.0 and not self.beta < 0.0:
            raise ConfigError("alpha = 0 needs beta < 0 for the tail to vanish")
        if self.c_b <= 0 or self.u0 < 1.0:
            raise ConfigError("ParetoLogTail needs c_b > 0 and u0 >= 1")
        if self.beta != 0.0:
            if self.u0 <= 1.0:
                raise ConfigError("beta != 0 needs u0 > 1")
            # tail decreasing on [u0, inf) iff alpha log u >= beta there
            if self.alpha * math.log(self.u0) < self.beta - 1e-12:
                raise ConfigError("tail increases beyond u0; raise u0 above exp(beta/alpha)")
        if self.small_scale < 0 or self.small_alpha >= 2.0:
            raise ConfigError("small-jump density needs scale >= 0 and small_alpha < 2")

    # tail in log-variable, shared with the kernels
    def _tail_s(self, s):
        t = self.c_b * np.exp(-self.alpha * s)
        if self.beta != 0.0:
            t = t * s ** self.beta
        return t

    @property
    def tail_u0(self):
        return float(self._tail_s(math.log(self.u0)))

    def _small_tail(self, u):
        a, s = self.small_alpha, self.small_scale
        if a == 0.0:
            return s * np.log(self.u0 / u)
        return s * (u ** -a - self.u0 ** -a) / a

    def tail(self, u):
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        hi = u >= self.u0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out[hi] = self._tail_s(np.log(u[hi]))
            lo = ~hi
            out[lo] = self.tail_u0
            if self.small_scale > 0:
                out[lo] += self._small_tail(u[lo])
        out[np.isinf(u)] = 0.0
        return float(out[0]) if scalar else out

    def tail_inverse(self, y):
        scalar = np.ndim(y) == 0
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        t0 = self.tail_u0
        hi = y <= t0
        out[hi] = self._inv_upper(y[hi])
        lo = ~hi
        if np.any(lo):
            if self.small_scale <= 0:
                out[lo] = self.u0
            else:
                a, s = self.small_alpha, self.small_scale
                d = y[lo] - t0
                if a == 0.0:
                    out[lo] = self.u0 * np.exp(-d / s)
                else:
                    out[lo] = (self.u0 ** -a + a * d / s) ** (-1.0 / a)
        return float(out[0]) if scalar else out

    def _inv_upper(self, y):
        if self.beta == 0.0:
            with np.errstate(divide="ignore", over="ignore"):
                s = np.log(self.c_b / y) / self.alpha
            return np.exp(np.minimum(s, _S_MAX))
        with np.errstate(over="ignore"):
            return np.exp(bisect_log_tail(self.alpha, self.beta, self.c_b,
                                          math.log(self.u0), y))

    def density(self, h):
        if h >= self.u0:
            L = math.log(h)
            if self.beta == 0.0:
                return self.c_b * self.alpha * h ** (-self.alpha - 1.0)
            return (self.c_b * h ** (-self.alpha - 1.0) * L ** (self.beta - 1.0)
                    * (self.alpha * L - self.beta))
        if self.small_scale > 0:
            return self.small_scale * h ** (-1.0 - self.small_alpha)
        return 0.0

    def breakpoints(self):
        return (self.u0,)

    def asymptotic(self):
        return PowerLog(self.c_b, -self.alpha, self.beta, self.u0)

    def small_exponent(self):
        return self.small_alpha if self.small_scale > 0 else 0.0

    def integrate(self, g, a, b, **kw):
        if self.small_scale <= 0:
            a = max(a, self.u0 * (1 - 1e-15))
        return super().integrate(g, a, b, **kw)

    def kernel_params(self):
        p = np.zeros(8)
        p[:6] = (self.alpha, self.beta, self.c_b, math.log(self.u0),
                 self.small_alpha, self.small_scale)
        p[6], p[7] = self.tail_u0, self.u0
        return p

    def to_config(self):
        return {"family": "pareto_log_tail", "alpha": self.alpha, "beta": self.beta,
                "c_b": self.c_b, "u0": self.u0, "small_alpha": self.small_alpha,
                "small_scale": self.small_scale}


def bisect_log_tail(alpha, beta, c_b, s_lo, y, iters=100):
    """Solve ``c_b exp(-alpha s) s**beta = y`` for ``s >= s_lo`` by bisection.

    The kernel runs the very same iteration so both backends agree.
    """
    y = np.asarray(y, dtype=float)
    lo = np.full_like(y, s_lo)
    hi = np.full_like(y, _S_MAX)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        t = c_b * np.exp(-alpha * mid) * mid ** beta
        above = t > y
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return hi


@dataclass(frozen=True)
class TabulatedTail(LevyMeasure):
    """Tail given on a grid, interpolated as a power law between nodes.

    No mass below the first node; beyond the last node the last segment's
    power law is extended.
    """

    u: tuple
    values: tuple
    code = TABULATED
    _lu: np.ndarray = field(init=False, repr=False, compare=False)
    _lt: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        t = np.asarray(self.values, dtype=float)
        if u.ndim != 1 or u.size < 2 or u.size != t.size:
            raise ConfigError("TabulatedTail needs matching grids of length >= 2")
        if np.any(np.diff(u) <= 0) or u[0] <= 0:
            raise ConfigError("TabulatedTail grid must be positive and increasing")
        if np.any(t <= 0) or np.any(np.diff(t) > 0):
            raise ConfigError("TabulatedTail values must be positive and non-increasing")
        if t[-1] >= t[-2]:
            raise ConfigError("last TabulatedTail segment must decrease (tail -> 0)")
        if self.tail(1.0) <= 0:
            raise ConfigError("tail(1) must be positive")
        object.__setattr__(self, "u", tuple(u))
        object.__setattr__(self, "values", tuple(t))
        object.__setattr__(self, "_lu", np.log(u))
        object.__setattr__(self, "_lt", np.log(t))

    def _slopes(self):
        return -np.diff(self._lt) / np.diff(self._lu)

    def tail(self, u):
        scalar = np.ndim(u) == 0
        lu = np.log(np.atleast_1d(np.asarray(u, dtype=float)))
        lnodes, ltail = np.log(self.u), np.log(self.values)
        k = np.clip(np.searchsorted(lnodes, lu, side="right") - 1, 0, len(lnodes) - 2)
        slope = (ltail[k + 1] - ltail[k]) / (lnodes[k + 1] - lnodes[k])
        out = np.exp(ltail[k] + slope * (lu - lnodes[k]))
        out = np.where(lu < lnodes[0], self.values[0], out)
        return float(out[0]) if scalar else out

    def tail_inverse(self, y):
        scalar = np.ndim(y) == 0
        ly = np.log(np.atleast_1d(np.asarray(y, dtype=float)))
        lnodes, ltail = np.log(self.u), np.log(self.values)
        # tail decreasing: find segment with ltail[k] >= ly > ltail[k+1]
        k = np.clip(np.searchsorted(-ltail, -ly, side="left") - 1, 0, len(lnodes) - 2)
        slope = (ltail[k + 1] - ltail[k]) / (lnodes[k + 1] - lnodes[k])
        with np.errstate(divide="ignore"):
            lu = np.where(slope < 0, lnodes[k] + (ly - ltail[k]) / slope, lnodes[k + 1])
        lu = np.where(ly >= ltail[0], lnodes[0], lu)
        out = np.exp(np.minimum(lu, _S_MAX))
        return float(out[0]) if scalar else out

    def density(self, h):
        if h < self.u[0]:
            return 0.0
        lu = math.log(h)
        lnodes = np.log(self.u)
        k = int(np.clip(np.searchsorted(lnodes, lu, side="right") - 1, 0, len(lnodes) - 2))
        slope = -self._slopes()[k]
        return -slope * float(self.tail(h)) / h

    def breakpoints(self):
        return self.u

    def asymptotic(self):
        k = float(self._slopes()[-1])
        return PowerLog(self.values[-1] * self.u[-1] ** k, -k, 0.0, self.u[-1])

    def tables(self):
        return np.log(np.asarray(self.u)), np.log(np.asarray(self.values))

    def kernel_params(self):
        p = np.zeros(8)
        p[0] = len(self.u)
        return p

    def to_config(self):
        return {"family": "tabulated_tail", "u": list(self.u), "tail": list(self.values)}

    def __hash__(self):
        return hash((self.u, self.values))


def levy_from_config(cfg):
    """Build a measure from a ``[mechanism.levy]`` mapping."""
    cfg = dict(cfg)
    fam = cfg.pop("family", None)
    builders = {
        "zero": (Zero, set()),
        "point_mass": (PointMass, {"h0", "rate"}),
        "pareto_log_tail": (ParetoLogTail, {"alpha", "beta", "c_b", "u0",
                                            "small_alpha", "small_scale"}),
        "tabulated_tail": (None, {"u", "tail"}),
    }
    if fam not in builders:
        raise ConfigError(f"mechanism.levy.family: unknown family {fam!r}")
    cls, allowed = builders[fam]
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"mechanism.levy: unknown keys {sorted(unknown)}")
    try:
        if fam == "tabulated_tail":
            return TabulatedTail(tuple(cfg["u"]), tuple(cfg["tail"]))
        return cls(**{k: float(v) for k, v in cfg.items()})
    except KeyError as exc:
        raise ConfigError(f"mechanism.levy: missing key {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ConfigError(f"mechanism.levy: {exc}") from None


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def tail(levy, u):
    """``pi([u, inf))`` for ``u > 0``."""
    if np.any(np.asarray(u) <= 0):
        raise ValueError("tail needs u > 0")
    return levy.tail(u)


def _tail_open(levy, u):
    """``pi((u, inf))``."""
    t = float(levy.tail(u))
    for h, mass in levy.atoms():
        if h == u:
            t -= mass
    return t


def _atom_mass(levy, lo, hi):
    return sum(m for h, m in levy.atoms() if lo <= h < hi)


def truncated_moment(levy, p, a, b):
    """``int_[a, b) h**p pi(dh)`` for ``p`` in {1, 2}.

    Computed from the tail by integration by parts,
    ``a**p tail(a) - b**p tail(b) + p int_a^b h**(p-1) tail(h) dh``,
    with the part beyond ``1e8`` taken from the tail's power-log form.
    Returns ``math.inf`` when the moment diverges.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if not (0.0 <= a < b):
        raise ValueError("need 0 <= a < b")
    if levy.is_zero():
        return 0.0
    if not np.isfinite(levy.support_max):
        pass
    elif a >= levy.support_max:
        return _atom_mass(levy, a, b) * (levy.support_max ** p)
    if isinstance(levy, PointMass):
        return levy.rate * levy.h0 ** p if a <= levy.h0 < b else 0.0
    if a == 0.0 and levy.small_exponent() >= p:
        return math.inf

    b_fin = min(b, Z_QUAD) if not np.isfinite(b) else b
    if np.isfinite(b) and b > Z_QUAD:
        b_fin = b
    f = lambda h: h ** (p - 1) * float(levy.tail(h))
    pts = list(levy.breakpoints())
    total = 0.0
    lo = a
    if a == 0.0:
        first = min([x for x in pts if x > 0] + [b_fin, 1.0])
        v, _ = quad(f, 0.0, first)
        total += v
        lo = first
    if b_fin > lo:
        v, _ = quad_log(f, lo, b_fin, points=pts)
        total += v
    total *= p
    head = 0.0 if a == 0.0 else a ** p * float(levy.tail(a))
    if np.isfinite(b):
        return head - b ** p * float(levy.tail(b)) + total
    asym = levy.asymptotic()
    if asym is None:
        raise NumericalError("no tail asymptotics for an infinite upper limit")
    rem = powerlog_tail(p * asym.coef, asym.power + p - 1, asym.logpow, b_fin)
    if not np.isfinite(rem):
        return math.inf
    return head + total + rem


def jump_quantile(levy, eps, q):
    """Jump size ``h >= eps`` whose conditional tail probability is ``q``."""
    t = float(levy.tail(eps))
    if not t > 0:
        raise EmptyMeasureError(f"no mass above {eps}")
    return levy.tail_inverse(np.asarray(q) * t)


def sample_jump_above(levy, eps, rng_stream, size=None):
    """Draw jump sizes from ``pi`` conditioned on ``[eps, inf)``.

    Inverse-tail sampling: closed form for power tails, bisection on the
    tail otherwise.  ``rng_stream`` is a :class:`cbdi.rng.RngStream`.
    """
    t = float(levy.tail(eps))
    if not (t > 0 and np.isfinite(t)):
        raise EmptyMeasureError(f"tail at {eps} is {t}; nothing to sample")
    q = rng_stream.random(size)
    return levy.tail_inverse(np.asarray(q) * t) if size is not None \
        else float(levy.tail_inverse(q * t))


def levy_integrability(levy):
    """``int (1 ^ h**2) pi(dh)``; finite for every admissible measure."""
    if levy.is_zero():
        return 0.0
    m2 = truncated_moment(levy, 2, 0.0, 1.0)
    return m2 + float(levy.tail(1.0))


@dataclass(frozen=True)
class Mechanism:
    """Branching triplet ``(sigma, gamma, levy)``; killing rate fixed at 0."""

    sigma: float = 0.0
    gamma: float = 0.0
    levy: LevyMeasure = field(default_factory=Zero)
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.check and not self.levy.is_zero():
            if not np.isfinite(levy_integrability(self.levy)):
                raise ConfigError("Lévy measure violates int (1 ^ h^2) pi(dh) < inf")
            if not self.levy.tail(1.0) > 0:
                raise ConfigError("a nonzero Lévy measure needs tail(1) > 0")
            z = np.concatenate([[0.0], np.geomspace(1e-3, 1e2, 11)])
            psi = np.array([psi_eval(self, zz) for zz in z])
            # convexity on a nonuniform grid: slopes must not decrease
            slopes = np.diff(psi) / np.diff(z)
            if np.any(np.diff(slopes) < -1e-7 * (1 + np.abs(slopes[1:]))):
                raise ConfigError("branching mechanism failed the convexity check")

    def psi(self, z):
        return psi_eval(self, z)

    def to_config(self):
        return {"sigma": self.sigma, "gamma": self.gamma, "levy": self.levy.to_config()}


def _compensated(z, h):
    y = z * h
    if y < 1e-3:
        return y * y * (0.5 - y / 6.0 + y * y / 24.0)
    return math.expm1(-y) + y


def psi_eval(m, z, return_error=False):
    """Branching mechanism ``Psi(z)`` at ``z >= 0`` (killing rate 0).

    The jump integral is split at ``h = 1``; jumps below ``eta`` are
    replaced by the second-order term ``z**2/2 m2(0, eta)``, whose error is
    at most ``z**3 eta m2(0, eta) / 6`` and is added to the residual.
    """
    if z < 0:
        raise ValueError("psi_eval needs z >= 0")
    val = 0.5 * m.sigma ** 2 * z * z + m.gamma * z
    err = 0.0
    levy = m.levy
    if z == 0.0 or levy.is_zero():
        return (val, err) if return_error else val
    eta = 0.0
    if levy.small_exponent() > 0:
        eta = min(1e-6, 1e-3 / z)
        m2 = truncated_moment(levy, 2, 0.0, eta)
        val += 0.5 * z * z * m2
        err += z ** 3 * eta * m2 / 6.0
    v1, e1 = levy.integrate(lambda h: _compensated(z, h), eta, 1.0)
    v2, e2 = levy.integrate(lambda h: math.expm1(-z * h), 1.0, math.inf)
    val += v1 + v2
    err += e1 + e2
    return (val, err) if return_error else val


def mechanism_from_config(cfg):
    cfg = dict(cfg)
    levy_cfg = cfg.pop("levy", {"family": "zero"})
    unknown = set(cfg) - {"sigma", "gamma"}
    if unknown:
        raise ConfigError(f"mechanism: unknown keys {sorted(unknown)}")
    return Mechanism(float(cfg.get("sigma", 0.0)), float(cfg.get("gamma", 0.0)),
                     levy_from_config(levy_cfg))
