import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from cbdi.drift import Linear, Logistic
from cbdi.errors import ConfigError
from cbdi.mechanism import Mechanism, ParetoLogTail, PointMass, psi_eval
from cbdi.passage import (ABOVE, BELOW, NOT_HIT, cdi_certificate, clopper_pearson_upper,
                          explosion_probe, first_passage, mean_hitting)
from cbdi.simulator import PathRecord, SimConfig, simulate_coupled_ensemble, simulate_path

SQUARE = Logistic(2.0)
NONE = Linear(0.0)


def _rec(t, v, status="Alive", event=math.nan, jumps=None):
    jumps = np.zeros((0, 2)) if jumps is None else np.asarray(jumps, dtype=float)
    return PathRecord(np.asarray(t, float), np.asarray(v, float), status, event, jumps)


# ---------------------------------------------------------------------------
# first_passage on hand-made records
# ---------------------------------------------------------------------------

def test_interpolates_inside_step():
    p = _rec([0, 1, 2], [4.0, 3.0, 1.0])
    assert first_passage(p, 2.0) == pytest.approx(1.5)
    assert first_passage(p, 3.5, ABOVE) == 0.0


def test_start_at_level_is_zero():
    assert first_passage(_rec([0, 1], [5.0, 6.0]), 5.0, BELOW) == 0.0


def test_not_hit():
    assert first_passage(_rec([0, 1], [5.0, 6.0]), 1.0) == NOT_HIT
    assert math.isinf(NOT_HIT)


def test_upward_jump_crosses_at_jump_time():
    p = _rec([0, 1, 2], [1.0, 1.1, 7.0], jumps=[[1.25, 5.5]])
    assert first_passage(p, 5.0, ABOVE) == 1.25


def test_explosion_crosses_before_event():
    p = _rec([0, 1, 2, 3], [1.0, 2.0, math.inf, math.inf], "Exploded", 1.7)
    tau = first_passage(p, 1e6, ABOVE)
    assert 1.0 <= tau <= 1.7


def test_bad_direction():
    with pytest.raises(ValueError):
        first_passage(_rec([0, 1], [1, 2]), 1.0, "sideways")


@given(v=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=30),
       a=st.floats(0.0, 10.0), b=st.floats(0.0, 10.0))
def test_passage_monotone_in_level(v, a, b):
    p = _rec(np.arange(len(v)), v)
    lo, hi = sorted((a, b))
    assert first_passage(p, hi, BELOW) <= first_passage(p, lo, BELOW)
    assert first_passage(p, lo, ABOVE) <= first_passage(p, hi, ABOVE)


# ---------------------------------------------------------------------------
# simulated passages
# ---------------------------------------------------------------------------

def test_flow_passage_time():
    p = simulate_path(Mechanism(), SQUARE, 10.0, SimConfig(dt=1e-3, t_max=2.0), below=[1.0])
    assert first_passage(p, 1.0) == pytest.approx(0.9, rel=1e-4)
    # the scan of recorded values agrees with the time found in the kernel
    bare = _rec(p.times, p.values)
    assert first_passage(bare, 1.0) == pytest.approx(0.9, rel=1e-3)


def test_mean_hitting_flow():
    est = mean_hitting(Mechanism(), SQUARE, 10.0, 1.0, SimConfig(dt=1e-3, t_max=5.0, n_paths=4))
    assert est.mean == pytest.approx(0.9, rel=1e-4)
    assert est.stderr == 0.0 and est.censored_fraction == 0.0 and not est.lower_bound


def test_mean_hitting_trivial_levels():
    assert mean_hitting(Mechanism(), SQUARE, 5.0, 5.0).mean == 0.0
    assert mean_hitting(Mechanism(), SQUARE, 5.0, 4.0, direction=ABOVE).mean == 0.0


def test_all_censored_reports_infinite_mean():
    est = mean_hitting(Mechanism(), NONE, 5.0, 1.0, SimConfig(t_max=1.0, n_paths=3),
                       max_doublings=0)
    assert math.isinf(est.mean) and est.censored_fraction == 1.0 and est.lower_bound


def _positive_root(m):
    return brentq(lambda q: psi_eval(m, q), 1e-6, 50.0)


@pytest.mark.parametrize("t", [1.0, 4.0, 8.0])
def test_subcritical_censoring_matches_survival(t):
    m = Mechanism(1.0, 1.0)
    assert psi_eval(m, 1.0) > 0          # no positive root: extinction is certain
    n = 2000
    est = mean_hitting(m, NONE, 1.0, 0.0, SimConfig(dt=1e-2, t_max=t, n_paths=n, seed=3),
                       max_doublings=0)
    # survival of the Feller diffusion: 1 - exp(-2 gamma x / (sigma^2 (e^{gamma t} - 1)))
    surv = -math.expm1(-2.0 / math.expm1(t))
    assert abs(est.censored_fraction - surv) <= 3 * math.sqrt(surv * (1 - surv) / n) + 1e-3


def test_supercritical_censoring_is_survival_probability():
    m = Mechanism(1.0, -1.0)
    q = _positive_root(m)
    assert q == pytest.approx(2.0, rel=1e-8)
    n = 2000
    est = mean_hitting(m, NONE, 1.0, 0.0, SimConfig(dt=1e-2, t_max=10.0, n_paths=n, seed=4),
                       max_doublings=0)
    surv = 1 - math.exp(-q)
    assert abs(est.censored_fraction - surv) <= 3 * math.sqrt(surv * (1 - surv) / n)


@pytest.mark.parametrize("levy", [PointMass(1.0, 1.0), ParetoLogTail(1.5)], ids=repr)
def test_coupled_passage_times_ordered(levy):
    cfg = SimConfig(dt=1e-2, t_max=3.0, n_paths=100, seed=6, eps_jump=0.1)
    res = simulate_coupled_ensemble(Mechanism(0.0, 0.0, levy), SQUARE, [2.0, 4.0, 8.0], cfg,
                                    below=[0.5, 1.0], above=[10.0, 20.0])
    tb = np.where(np.isnan(res.tau_below), np.inf, res.tau_below)
    ta = np.where(np.isnan(res.tau_above), np.inf, res.tau_above)
    assert np.all(tb[:, 1:] >= tb[:, :-1])           # larger start, later descent
    assert np.all(ta[:, 1:] <= ta[:, :-1])           # larger start, earlier ascent
    assert np.all(tb[:, :, 1] <= tb[:, :, 0])        # higher level is reached first
    assert np.all(ta[:, :, 0] <= ta[:, :, 1])


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def test_cdi_certificate_flow():
    rep = cdi_certificate(Mechanism(), SQUARE, SimConfig(dt=1e-4, t_max=2.0, n_paths=2))
    np.testing.assert_allclose(rep.means, 1 - 1 / rep.x_grid, rtol=1e-4)
    assert rep.saturated and rep.limit == pytest.approx(1.0, abs=1e-3)


def test_cdi_certificate_linear_does_not_saturate():
    rep = cdi_certificate(Mechanism(), Linear(1.0), SimConfig(dt=1e-3, t_max=20.0, n_paths=2),
                          x_grid=(1e1, 1e2, 1e3))
    assert not rep.saturated
    np.testing.assert_allclose(rep.means, np.log(rep.x_grid), rtol=1e-3)


def test_cdi_certificate_needs_level_below_grid():
    with pytest.raises(ConfigError):
        cdi_certificate(Mechanism(), SQUARE, x_grid=(1.0, 10.0), level=2.0)


@pytest.mark.parametrize("n", [10, 1000, 10_000])
def test_clopper_pearson_zero_hits(n):
    assert clopper_pearson_upper(0, n) == pytest.approx(1 - 0.05 ** (1 / n), rel=1e-10)


def test_clopper_pearson_bounds():
    assert clopper_pearson_upper(5, 5) == 1.0
    ub = [clopper_pearson_upper(k, 100) for k in range(0, 100, 10)]
    assert all(a < b for a, b in zip(ub, ub[1:]))
    assert all(u > k / 100 for u, k in zip(ub, range(0, 100, 10)))


def test_feller_does_not_explode():
    rep = explosion_probe(Mechanism(1.0, 0.0), NONE, 1.0, SimConfig(dt=1e-2, t_max=2.0, n_paths=500))
    assert rep.fractions == (0.0, 0.0) and rep.cap_change == 0.0


def test_stable_tail_explodes_but_square_drift_does_not():
    m = Mechanism(0.0, 0.0, ParetoLogTail(0.5))
    cfg = SimConfig(dt=1e-2, t_max=5.0, n_paths=400, seed=12)
    wild = explosion_probe(m, NONE, 1.0, cfg)
    assert wild.fraction >= 0.2 and wild.cap_change < 0.1
    tame = explosion_probe(m, SQUARE, 1.0, cfg)
    assert tame.fractions == (0.0, 0.0)
    assert tame.upper_bounds[0] == pytest.approx(1 - 0.05 ** (1 / 400))
