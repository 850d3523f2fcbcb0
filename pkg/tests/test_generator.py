import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbdi.drift import Linear, Logistic, PowerLog
from cbdi.generator import (TestFunction, apply_generator, exp_test_function,
                            large_jump_term, lyapunov_f1, lyapunov_f2, lyapunov_margin,
                            theorem_A_verdict)
from cbdi.mechanism import Mechanism, ParetoLogTail, PointMass, Zero

const = TestFunction(lambda z: 3.0, lambda z: 0.0, lambda z: 0.0)
ident = TestFunction(lambda z: z, lambda z: 1.0, lambda z: 0.0)

MECHS = [Mechanism(0.0, 0.0), Mechanism(1.3, -0.4, PointMass(2.5, 0.7)),
         Mechanism(0.5, 0.2, ParetoLogTail(1.5, small_alpha=0.5, small_scale=1.0))]


@pytest.mark.parametrize("m", MECHS, ids=repr)
@given(x=st.floats(1e-2, 1e4))
def test_constant_function_is_harmonic(m, x):
    assert apply_generator(m, Logistic(1.0), const, x) == 0.0


@pytest.mark.parametrize("sigma, gamma", [(0.0, 0.0), (2.0, -1.0), (0.3, 4.0)])
@given(x=st.floats(1e-2, 1e4))
def test_identity_reads_off_drift(sigma, gamma, x):
    d = PowerLog(1.0, 1.5)
    v = apply_generator(Mechanism(sigma, gamma), d, ident, x)
    assert v == pytest.approx(-d.eval(x) - gamma * x, rel=1e-12)


def test_f1_quadratic_drift_at_five():
    d = Logistic(2.0)
    assert apply_generator(Mechanism(), d, lyapunov_f1(d), 5.0) == pytest.approx(-5.0, rel=1e-12)


@pytest.mark.parametrize("x", [0.3, 1.0, 4.0])
def test_exp_function_against_mpmath(x):
    m = Mechanism(0.5, 0.2, ParetoLogTail(1.5, small_alpha=0.5, small_scale=1.0))
    d = Logistic(1.0)
    mpmath.mp.dps = 30
    small = mpmath.quad(lambda u: (mpmath.exp(-u) - 1 + u) * u ** -1.5, [0, 1])
    big = mpmath.quad(lambda u: (mpmath.exp(-u) - 1) * 1.5 * u ** -2.5, [1, mpmath.inf])
    e = math.exp(-x)
    ref = 0.5 * x * x * e + 0.2 * x * e + 0.125 * x * e + x * e * float(small + big)
    got = apply_generator(m, d, exp_test_function(), x)
    assert got == pytest.approx(ref, rel=1e-8)


def test_f2_jump_integral_against_mpmath():
    m = Mechanism(0.0, 0.0, ParetoLogTail(0.5))
    d = Logistic(2.0)
    x = 50.0
    mpmath.mp.dps = 30
    # f2 = 1/kappa - 1/z for I = z^2: f2(x+u) - f2(x) = u / (x (x+u))
    j = mpmath.quad(lambda u: u / (x * (x + u)) * 0.5 * u ** -1.5, [1, mpmath.inf])
    ref = -x * x / (x * x) + x * float(j)
    assert apply_generator(m, d, lyapunov_f2(d), x) == pytest.approx(ref, rel=1e-9)


# ---------------------------------------------------------------------------
# Lyapunov functions
# ---------------------------------------------------------------------------

DRIFTS = [Logistic(1.0), PowerLog(1.0, 1.5), PowerLog(2.0, 2.0, 0.5, z0=math.e),
          PowerLog(1.0, 1.2, -0.5, z0=3.0)]


@pytest.mark.parametrize("d", DRIFTS, ids=repr)
def test_lyapunov_functions_shape(d):
    k = d.kappa
    z = np.geomspace(k, 1e8, 200)
    for tf in (lyapunov_f1(d), lyapunov_f2(d)):
        v = np.array([tf.f(x) for x in z])
        assert tf.f(k) == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.diff(v) >= -1e-12)
    f1 = lyapunov_f1(d)
    assert all(f1.d2f(x) <= 1e-15 for x in z)


@pytest.mark.parametrize("d", DRIFTS, ids=repr)
def test_lyapunov_functions_c2_at_kappa(d):
    k = d.kappa
    for tf in (lyapunov_f1(d), lyapunov_f2(d)):
        lo, hi = k * (1 - 1e-9), k * (1 + 1e-9)
        assert tf.f(lo) == pytest.approx(tf.f(hi), abs=4e-9 * k * tf.df(k) + 1e-15)
        assert tf.df(lo) == pytest.approx(tf.df(hi), rel=1e-6)
        assert tf.f(0.0) == 0.0 and tf.df(0.0) == 0.0


@pytest.mark.parametrize("d", [PowerLog(2.0, 2.0, 0.5, z0=math.e), PowerLog(1.0, 1.7, 1.0, z0=4.0)],
                         ids=repr)
@pytest.mark.parametrize("z", [10.0, 1e3, 1e6])
def test_cumulative_route_against_mpmath(d, z):
    mpmath.mp.dps = 25
    k = d.kappa
    r1 = mpmath.quad(lambda u: u / d.eval(float(u)), [k, z])
    r2 = mpmath.quad(lambda u: 1 / d.eval(float(u)), [k, z])
    assert lyapunov_f1(d).f(z) == pytest.approx(float(r1), rel=1e-8)
    assert lyapunov_f2(d).f(z) == pytest.approx(float(r2), rel=1e-8)


@pytest.mark.parametrize("d, bounded", [(Logistic(1.0), True), (PowerLog(1.0, 1.5), True),
                                        (PowerLog(1.0, 1.0, 0.5, z0=math.e), False)], ids=repr)
def test_f2_bounded_iff_flow_finite(d, bounded):
    f2 = lyapunov_f2(d)
    assert (f2.growth is None) is bounded


MP_DRIFT = [(Logistic(1.0), lambda z: z * z / 2), (PowerLog(1.0, 1.5), lambda z: z ** 1.5)]


@pytest.mark.parametrize("x, u", [(5.0, 1e-9), (5.0, 0.5), (1e6, 3.0), (2.0, 1e5)])
@pytest.mark.parametrize("d, I", MP_DRIFT, ids=["logistic", "power"])
def test_closed_form_increments_match_differences(d, I, x, u):
    mpmath.mp.dps = 40
    X, U = mpmath.mpf(x), mpmath.mpf(u)
    for tf, g in ((lyapunov_f1(d), lambda y: y / I(y)), (lyapunov_f2(d), lambda y: 1 / I(y))):
        inc = mpmath.quad(g, [X, X + U])
        comp = inc - U * g(X)
        assert tf.incr(x, u) == pytest.approx(float(inc), rel=1e-9)
        assert tf.comp(x, u) == pytest.approx(float(comp), rel=1e-7)


# ---------------------------------------------------------------------------
# margins and verdicts
# ---------------------------------------------------------------------------

def test_f2_margin_tends_to_minus_one():
    m = Mechanism(0.0, 0.0, ParetoLogTail(0.5))
    r = lyapunov_margin(m, Logistic(2.0), "F2")
    assert r.certified
    tail = r.values[r.z >= r.M]
    assert np.all((tail >= -1.1) & (tail <= -0.9))
    assert abs(r.values[-1] + 1.0) < 1e-3
    lj = [large_jump_term(m.levy, Logistic(2.0), z) for z in (1e2, 1e4, 1e6, 1e8)]
    assert all(a > b for a, b in zip(lj, lj[1:])) and lj[-1] < 1e-3


def test_f1_margin_pure_flow_is_exact():
    r = lyapunov_margin(Mechanism(), Logistic(2.0), "F1")
    assert r.certified and r.c == pytest.approx(1.0 - 1e-3)
    np.testing.assert_allclose(r.values, -r.z, rtol=1e-12)


def test_f1_residual_decomposition():
    m = Mechanism(1.0, 0.5, ParetoLogTail(1.5))
    d = PowerLog(1.0, 1.5)
    r = lyapunov_margin(m, d, "F1")
    I, dI = d.eval(r.z), d.eval_deriv(r.z)
    recon = r.z * (-1.0 + 0.5 * (I - r.z * dI) / I ** 2 + r.eps)
    np.testing.assert_allclose(r.values, recon, rtol=1e-10)
    assert abs(r.eps[-1]) < 0.1 * abs(r.eps[0])


def test_linear_drift_is_not_certified():
    r = lyapunov_margin(Mechanism(), Linear(1.0), "F1")
    assert not r.certified and r.reason


@pytest.mark.parametrize("m, d, kind", [
    (Mechanism(0.0, 0.0, PointMass(math.e, 1.0)), Logistic(1.0), "CDI_by_iii"),
    (Mechanism(), Linear(1.0), "None"),
    (Mechanism(0.0, 0.0, ParetoLogTail(1.5)), PowerLog(1.0, 1.5), "CDI_by_iii"),
    (Mechanism(0.0, 0.0, ParetoLogTail(1.5)), PowerLog(1.0, 1.0, 0.5, z0=math.e), "MeanHit_by_ii"),
])
def test_theorem_A_verdict(m, d, kind):
    v = theorem_A_verdict(m, d)
    assert v.kind == kind
    if kind == "CDI_by_iii":
        assert v.x0 == v.f2.M
