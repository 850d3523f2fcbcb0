import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbdi import _backend
from cbdi.drift import Custom, Linear, Logistic, PowerLog
from cbdi.errors import ConfigError, SimulationError
from cbdi.mechanism import Mechanism, ParetoLogTail, PointMass, Zero
from cbdi.simulator import (SimConfig, run_bundles, simulate_coupled, simulate_coupled_ensemble,
                            simulate_ensemble, simulate_from_infinity, simulate_path)

FLOW = Mechanism()
SQUARE = Logistic(2.0)          # I(x) = x^2
NONE = Linear(0.0)


def test_flow_from_ten():
    cfg = SimConfig(dt=1e-3, t_max=5.0, max_points=501)
    r = simulate_path(FLOW, SQUARE, 10.0, cfg)
    exact = 10.0 / (1.0 + 10.0 * r.times)
    np.testing.assert_allclose(r.values, exact, rtol=1e-3)
    assert r.value_at(1.0) == pytest.approx(10 / 11, rel=1e-3)
    assert r.status == "Alive"


def test_feller_mean():
    cfg = SimConfig(dt=1e-3, t_max=1.0, n_paths=2000, seed=11, max_points=2)
    res = simulate_ensemble(Mechanism(1.0, 0.5), NONE, 10.0, cfg)
    x = res.final[:, 0]
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 10 * math.exp(-0.5)) <= 3 * se


def test_zero_start_is_extinct():
    m = Mechanism(1.0, 0.0, PointMass(1.0, 1.0))
    r = simulate_path(m, Logistic(1.0), 0.0, SimConfig(t_max=0.5))
    assert r.status == "Extinct" and r.event_time == 0.0
    assert np.all(r.values == 0.0)


def test_records_are_read_only():
    r = simulate_path(FLOW, SQUARE, 1.0, SimConfig(t_max=0.1))
    with pytest.raises(ValueError):
        r.values[0] = 2.0


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"eps_jump": 0.0}, {"eps_jump": 1.5},
                                {"coupling_cells": -1.0}, {"seed": -1}, {"n_paths": 0},
                                {"backend": "gpu"}, {"x_explode": 0.0}])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw)


def test_start_above_cap_rejected():
    with pytest.raises(ConfigError):
        simulate_path(FLOW, SQUARE, 1e13, SimConfig())


def test_coupled_needs_increasing_initials():
    with pytest.raises(ConfigError):
        simulate_coupled(FLOW, SQUARE, [2.0, 1.0])


def test_rate_overflow_is_reported():
    m = Mechanism(0.0, 0.0, ParetoLogTail(0.5, small_alpha=0.9, small_scale=1.0))
    cfg = SimConfig(dt=0.1, t_max=0.2, eps_jump=1e-9, max_halvings=2, adaptive_halvings=0)
    with pytest.raises(SimulationError, match="eps_jump"):
        simulate_path(m, NONE, 1e6, cfg)


# ---------------------------------------------------------------------------
# state invariants
# ---------------------------------------------------------------------------

@given(seed=st.integers(0, 2 ** 32))
@settings(max_examples=10)
def test_status_invariants(seed):
    m = Mechanism(1.0, 0.0, ParetoLogTail(0.5))
    cfg = SimConfig(dt=1e-2, t_max=3.0, n_paths=30, seed=seed, x_explode=1e10,
                    adaptive_cutoff=True)
    res = simulate_ensemble(m, NONE, 1.0, cfg)
    t = res.times
    for b in range(30):
        v, s, te = res.values[b, 0], res.status[b, 0], res.event_time[b, 0]
        assert np.all(v >= 0.0)
        if s == 1:
            assert np.all(v[t >= te] == 0.0)
        elif s == 2:
            assert np.all(np.isinf(v[t >= te]))
            assert np.all(np.isfinite(v[t < te]))
        else:
            assert np.all(np.isfinite(v))


# ---------------------------------------------------------------------------
# reproducibility
# ---------------------------------------------------------------------------

PARETO = Mechanism(0.5, 0.1, ParetoLogTail(1.5, small_alpha=0.5, small_scale=1.0))


@pytest.mark.skipif("compiled" not in _backend.available(), reason="compiled kernel not built")
def test_backends_agree():
    out = []
    for be in ("python", "compiled"):
        cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=6, seed=5, eps_jump=0.1, backend=be)
        out.append(simulate_coupled_ensemble(PARETO, Logistic(1.0), [0.5, 2.0, 8.0], cfg))
    a, b = out
    np.testing.assert_allclose(a.values, b.values, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(a.status, b.status)


@pytest.mark.parametrize("threads", [2, 5])
def test_threads_do_not_change_output(threads):
    runs = [simulate_ensemble(PARETO, Logistic(1.0), 2.0,
                              SimConfig(dt=1e-2, n_paths=12, seed=9, eps_jump=0.1, threads=th))
            for th in (1, threads)]
    np.testing.assert_array_equal(runs[0].values, runs[1].values)


def test_paths_depend_on_stream_only():
    cfg = SimConfig(dt=1e-2, n_paths=8, seed=3, eps_jump=0.1)
    whole = simulate_ensemble(PARETO, Logistic(1.0), 2.0, cfg)
    single = simulate_path(PARETO, Logistic(1.0), 2.0, cfg, path_id=5)
    np.testing.assert_array_equal(whole.values[5, 0], single.values)
    other = simulate_path(PARETO, Logistic(1.0), 2.0, SimConfig(dt=1e-2, seed=4, eps_jump=0.1),
                          path_id=5)
    assert not np.array_equal(other.values, single.values)


@pytest.mark.parametrize("a, gamma", [(0.7, 0.0), (-0.4, 0.3), (1.5, -1.0)])
def test_linear_drift_reduction(a, gamma):
    cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=5, seed=21, eps_jump=0.1)
    lev = ParetoLogTail(1.5, small_alpha=0.5, small_scale=1.0)
    r1 = simulate_ensemble(Mechanism(0.8, gamma, lev), Linear(a), 3.0, cfg)
    r2 = simulate_ensemble(Mechanism(0.8, gamma + a, lev), NONE, 3.0, cfg)
    np.testing.assert_array_equal(r1.values, r2.values)


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------

MEASURES = [Zero(), PointMass(1.0, 1.0), ParetoLogTail(1.5), ParetoLogTail(0.8, beta=1.0, u0=math.e ** 2)]


@pytest.mark.parametrize("levy", MEASURES, ids=repr)
@given(initials=st.lists(st.floats(0.0, 50.0), min_size=2, max_size=5, unique=True),
       seed=st.integers(0, 2 ** 63))
@settings(max_examples=8)
def test_nested_initials_stay_ordered(levy, initials, seed):
    initials = sorted(initials)
    cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=10, seed=seed, eps_jump=0.1)
    res = simulate_coupled_ensemble(Mechanism(0.0, 0.2, levy), Logistic(1.0), initials, cfg)
    v = res.values
    assert np.all(np.diff(v, axis=1) >= 0)


@pytest.mark.parametrize("levy", MEASURES[1:], ids=repr)
def test_ordered_drifts_reverse_order(levy):
    cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=50, seed=2, eps_jump=0.1, adaptive_cutoff=True)
    res = simulate_coupled_ensemble(Mechanism(0.0, 0.0, levy), [SQUARE, NONE, Linear(-1.0)],
                                    [5.0, 5.0, 5.0], cfg)
    v = res.values
    assert np.all(v[:, 0] <= v[:, 1]) and np.all(v[:, 1] <= v[:, 2])


def test_coupled_quantiles_increase_with_start():
    cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=2000, seed=8, max_points=2)
    res = simulate_coupled_ensemble(Mechanism(1.0, 0.0), Logistic(1.0), [1.0, 2.0, 4.0], cfg)
    q = np.quantile(res.final, [0.1, 0.5, 0.9], axis=0)
    assert np.all(np.diff(q, axis=1) >= 0)


def test_single_coupled_matches_bundle():
    cfg = SimConfig(dt=1e-2, seed=4, eps_jump=0.1)
    recs = simulate_coupled(PARETO, Logistic(1.0), [1.0, 3.0], cfg, path_id=7)
    res = simulate_coupled_ensemble(PARETO, Logistic(1.0), [1.0, 3.0], cfg, n_bundles=1,
                                    first_id=7)
    for j, r in enumerate(recs):
        np.testing.assert_array_equal(r.values, res.values[0, j])


def test_spread_dominated_by_branching_process():
    # I' >= -b everywhere, so I(y+z) - I(y) >= -b z
    b = 1.0
    d = Custom(lambda z: 0.5 * z * z - b * z + b * z * np.exp(-z), lambda z: z - b + b * np.exp(-z) * (1 - z),
               asym=None)
    lev = ParetoLogTail(1.5)
    m = Mechanism(0.0, 0.3, lev)
    n = 3000
    cfg = SimConfig(dt=1e-2, t_max=1.0, n_paths=n, seed=31, eps_jump=0.1, max_points=2)
    spread = np.diff(simulate_coupled_ensemble(m, d, [1.0, 3.0], cfg).final, axis=1)[:, 0]
    cb = simulate_ensemble(m, Linear(-b), 2.0,
                           SimConfig(dt=1e-2, t_max=1.0, n_paths=n, seed=32, eps_jump=0.1,
                                     max_points=2)).final[:, 0]
    tol = 3 * math.sqrt(0.25 * 2 / n)
    for q in np.quantile(cb, [0.1, 0.25, 0.5, 0.75, 0.9]):
        # P(spread <= q) >= P(cb <= q) up to sampling error
        assert np.mean(spread <= q) >= np.mean(cb <= q) - tol


def test_refinement_order_of_drift_integration():
    # substeps disabled: Heun is second order, so each halving cuts the change ~4x
    vals = [simulate_path(FLOW, SQUARE, 3.0, SimConfig(dt=dt, drift_cfl=10.0, max_points=2)).values[-1]
            for dt in (0.2, 0.1, 0.05, 0.025)]
    d = np.abs(np.diff(vals))
    ratio = d[:-1] / d[1:]
    assert np.all((ratio > 3.0) & (ratio < 5.0))
    # extrapolated error of the finest level
    extrap = vals[-1] + (vals[-1] - vals[-2]) / 3
    assert abs(extrap - 0.75) < 0.25 * abs(vals[-1] - 0.75)


@pytest.mark.parametrize("dt", [0.1, 0.0125])
def test_feller_mean_insensitive_to_step(dt):
    cfg = SimConfig(dt=dt, t_max=1.0, n_paths=4000, seed=40, max_points=2)
    x = simulate_ensemble(Mechanism(1.0, 0.5), NONE, 10.0, cfg).final[:, 0]
    assert abs(x.mean() - 10 * math.exp(-0.5)) <= 3 * x.std(ddof=1) / math.sqrt(x.size)


# ---------------------------------------------------------------------------
# from infinity
# ---------------------------------------------------------------------------

def test_from_infinity_flow_matches_inverse_time():
    cfg = SimConfig(dt=1e-4, t_max=2.0, max_points=201)
    grid = np.array([1e4, 1e5, 1e6])
    rep = simulate_from_infinity(FLOW, SQUARE, cfg, x_grid=grid, t_probe=0.5, n_bundles=1)
    t = rep.times
    for x0, row in zip(grid, rep.envelope):
        np.testing.assert_allclose(row, x0 / (1 + x0 * t), rtol=1e-3)
    sel = t >= 0.01
    np.testing.assert_allclose(rep.envelope[-1][sel], 1.0 / t[sel], rtol=1e-3)
    assert rep.stabilized and rep.exploded == 0 and not rep.exploratory


def test_from_infinity_linear_does_not_stabilize():
    cfg = SimConfig(dt=1e-2, t_max=1.0)
    rep = simulate_from_infinity(FLOW, Linear(1.0), cfg, x_grid=[1e2, 1e3, 1e4],
                                 n_bundles=1)
    assert not rep.stabilized and rep.exploratory
    assert np.all(np.diff(rep.increments) > 0)


def test_from_infinity_requires_probe_in_horizon():
    with pytest.raises(ConfigError):
        simulate_from_infinity(FLOW, SQUARE, SimConfig(t_max=1.0), t_probe=2.0)
