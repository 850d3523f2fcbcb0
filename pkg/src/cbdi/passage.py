"""First-passage times, hitting-time means and explosion probes."""

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from .errors import ConfigError, ConsistencyError
from .simulator import (EXPLODED, SimConfig, simulate_coupled_ensemble,
                        simulate_ensemble)

BELOW, ABOVE = "below", "above"
NOT_HIT = math.inf


def first_passage(p, level, direction=BELOW):
    """First time the path ``p`` is ``<= level`` (below) or ``>= level`` (above).

    Times found during the simulation are used when the path carries them;
    otherwise the recorded values are scanned with linear interpolation
    inside the crossing interval, except that an upward crossing through a
    recorded jump is placed at the jump time.  Returns :data:`NOT_HIT`.
    """
    if direction not in (BELOW, ABOVE):
        raise ValueError("direction must be 'below' or 'above'")
    key = (direction, float(level))
    if key in p.passage:
        t = p.passage[key]
        return NOT_HIT if math.isnan(t) else t
    t, v = p.times, p.values
    hit = v <= level if direction == BELOW else v >= level
    if not np.any(hit):
        return NOT_HIT
    k = int(np.argmax(hit))
    if k == 0:
        return float(t[0])
    t0, t1, v0, v1 = t[k - 1], t[k], v[k - 1], v[k]
    if direction == ABOVE and p.jumps.size:
        jt = p.jumps[:, 0]
        inside = (jt > t0) & (jt <= t1)
        if np.any(inside):
            return float(jt[inside].min())
    if not np.isfinite(v1):
        return float(min(t0 if math.isnan(p.event_time) else p.event_time, t1))
    return float(t0 + (t1 - t0) * (v0 - level) / (v0 - v1))


@dataclass
class PassageEstimate:
    """Monte Carlo summary of a first-passage time.

    With censored paths the mean counts them at the horizon and is a lower
    bound (``lower_bound`` set); when every path is censored the mean is
    ``inf``.
    """

    level: float
    direction: str
    mean: float
    stderr: float
    censored_fraction: float
    n: int
    t_max: float
    lower_bound: bool = False
    samples: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"level": self.level, "direction": self.direction,
                "mean": "inf" if math.isinf(self.mean) else self.mean,
                "stderr": self.stderr, "censored_fraction": self.censored_fraction,
                "n": self.n, "t_max": self.t_max, "lower_bound": self.lower_bound}


def _summarise(tau, t_max):
    """Mean, standard error and censored fraction along axis 0."""
    cens = np.isnan(tau)
    filled = np.where(cens, t_max, tau)
    n = tau.shape[0]
    mean = filled.mean(axis=0)
    se = filled.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se, cens.mean(axis=0)


def _lean(cfg, **kw):
    return dataclasses.replace(cfg, max_points=2, record_jumps=False, stop_when_passed=True, **kw)


def mean_hitting(m, d, x0, level, cfg=None, direction=BELOW, max_doublings=2,
                 censor_limit=0.01):
    """Mean first-passage time over ``cfg.n_paths`` independent paths.

    When more than ``censor_limit`` of the paths are censored the run is
    repeated with a doubled horizon, at most ``max_doublings`` times.  The
    random streams are indexed by step, so a longer run extends the same
    paths.
    """
    cfg = cfg or SimConfig(t_max=50.0, n_paths=1000)
    if direction == BELOW and not level < x0:
        return PassageEstimate(float(level), direction, 0.0, 0.0, 0.0, cfg.n_paths, cfg.t_max)
    if direction == ABOVE and not level > x0:
        return PassageEstimate(float(level), direction, 0.0, 0.0, 0.0, cfg.n_paths, cfg.t_max)
    run = _lean(cfg)
    for attempt in range(max_doublings + 1):
        kw = {"below": [level]} if direction == BELOW else {"above": [level]}
        res = simulate_ensemble(m, d, x0, run, **kw)
        tau = (res.tau_below if direction == BELOW else res.tau_above)[:, 0, 0]
        cens = float(np.isnan(tau).mean())
        if cens <= censor_limit or attempt == max_doublings:
            break
        run = dataclasses.replace(run, t_max=2 * run.t_max)
    return _estimate(tau, level, direction, run.t_max)


def _estimate(tau, level, direction, t_max):
    n = tau.size
    cens = float(np.isnan(tau).mean())
    if cens == 1.0:
        return PassageEstimate(float(level), direction, math.inf, math.nan, 1.0, n, t_max,
                               True, tau)
    mean, se, _ = _summarise(tau[:, None], t_max)
    return PassageEstimate(float(level), direction, float(mean[0]), float(se[0]), cens, n,
                           t_max, cens > 0, tau)


@dataclass
class CDIReport:
    """Coupled mean hitting times of a level from a grid of starts."""

    level: float
    x_grid: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    censored: np.ndarray
    last_increment: float
    last_increment_se: float
    saturated: bool
    limit: float
    n: int
    t_max: float

    def to_dict(self):
        return {"level": self.level, "x_grid": self.x_grid.tolist(),
                "means": self.means.tolist(), "stderrs": self.stderrs.tolist(),
                "censored": self.censored.tolist(), "last_increment": self.last_increment,
                "last_increment_se": self.last_increment_se, "saturated": self.saturated,
                "limit": self.limit, "n": self.n, "t_max": self.t_max}


def cdi_certificate(m, d, cfg=None, x_grid=(1e1, 1e2, 1e4, 1e6), level=1.0, atol=1e-3,
                    max_doublings=2, censor_limit=0.01):
    """Mean of ``tau_level^-`` from each start of ``x_grid`` under shared noise.

    The sequence of means is nondecreasing (up to Monte Carlo error) and a
    bounded limit is the empirical sign of finite mean hitting times from
    infinity.  ``saturated`` holds when the last increment is within
    ``atol`` plus three standard errors of the paired differences.
    """
    cfg = cfg or SimConfig(t_max=50.0, n_paths=200)
    x_grid = np.asarray(x_grid, dtype=float)
    if not level < x_grid.min():
        raise ConfigError("the level must lie below the smallest start")
    run = _lean(cfg)
    for attempt in range(max_doublings + 1):
        res = simulate_coupled_ensemble(m, d, x_grid, run, below=[level])
        tau = res.tau_below[:, :, 0]
        cens = np.isnan(tau).mean(axis=0)
        if cens.max() <= censor_limit or attempt == max_doublings:
            break
        run = dataclasses.replace(run, t_max=2 * run.t_max)
    mean, se, cens = _summarise(tau, run.t_max)
    n = tau.shape[0]
    filled = np.where(np.isnan(tau), run.t_max, tau)
    diffs = np.diff(filled, axis=1)
    dse = diffs.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(diffs.shape[1])
    dmean = diffs.mean(axis=0)
    if np.any(dmean < -3 * dse - 1e-9):
        raise ConsistencyError("coupled mean hitting times decrease along the grid")
    last, last_se = float(dmean[-1]), float(dse[-1])
    return CDIReport(float(level), x_grid, mean, se, cens, last, last_se,
                     bool(abs(last) <= atol + 3 * last_se), float(mean[-1]), n, run.t_max)


def clopper_pearson_upper(k, n, conf=0.95):
    """One-sided upper confidence bound for a binomial proportion."""
    if k >= n:
        return 1.0
    return float(beta_dist.ppf(conf, k + 1, n - k))


@dataclass
class ExplosionReport:
    """Fractions of paths reaching the cap and ten times the cap."""

    caps: tuple
    fractions: tuple
    stderrs: tuple
    upper_bounds: tuple
    n: int
    t_max: float

    @property
    def fraction(self):
        return self.fractions[0]

    @property
    def cap_change(self):
        """Relative change of the fraction between the two caps."""
        a, b = self.fractions
        if a == b:
            return 0.0
        return abs(b - a) / max(a, b)

    def to_dict(self):
        return {"caps": list(self.caps), "fractions": list(self.fractions),
                "stderrs": list(self.stderrs), "upper_bounds": list(self.upper_bounds),
                "cap_change": self.cap_change, "n": self.n, "t_max": self.t_max}


def explosion_probe(m, d, x0, cfg=None, conf=0.95):
    """Fraction of paths reaching ``x_explode`` and ``10 * x_explode`` by ``t_max``.

    Both runs use the same streams and let the kernel raise its jump
    cutoff at huge states, so they differ only in where the cap sits.
    """
    cfg = cfg or SimConfig(t_max=5.0, n_paths=10_000, dt=1e-2)
    caps = (cfg.x_explode, 10.0 * cfg.x_explode)
    fr, se, ub = [], [], []
    for cap in caps:
        res = simulate_ensemble(m, d, x0, _lean(cfg, x_explode=cap, adaptive_cutoff=True))
        k = int((res.status == EXPLODED).sum())
        n = res.status.size
        p = k / n
        fr.append(p)
        se.append(math.sqrt(p * (1 - p) / n))
        ub.append(clopper_pearson_upper(k, n, conf))
    return ExplosionReport(caps, tuple(fr), tuple(se), tuple(ub), cfg.n_paths, cfg.t_max)
