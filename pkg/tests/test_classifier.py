import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbdi.classifier import (GUARANTEED, INCONCLUSIVE, classify, comparison_drift,
                             flow_integral, integral_I, integral_J, moment_criterion,
                             moment_G, regime_table, regular_variation_check)
from cbdi.drift import Custom, Linear, Logistic, PowerLog
from cbdi.errors import UndecidableError
from cbdi.mechanism import Mechanism, ParetoLogTail, PointMass, TabulatedTail, Zero

E2 = math.e ** 2


def mp_improper(f, a, breaks=()):
    mpmath.mp.dps = 30
    pts = [a] + [b for b in breaks if b > a] + [mpmath.inf]
    return float(mpmath.quad(f, pts))


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("levy, d, expected", [
    (ParetoLogTail(0.5), PowerLog(1.0, 2.0), 2.0),
    (Zero(), Logistic(1.0), 0.0),
    (ParetoLogTail(0.5), PowerLog(1.0, 1.2), math.inf),
    (ParetoLogTail(1.5), PowerLog(1.0, 1.5), 1.0),
    (PointMass(math.e, 1.0), Logistic(2.0), 1.0),   # int_1^e u / u^2 du
    (PointMass(1.0, 1.0), Logistic(2.0), 0.0),
])
def test_integral_I_examples(levy, d, expected):
    v = integral_I(levy, d)
    if math.isinf(expected):
        assert math.isinf(v)
    else:
        assert v == pytest.approx(expected, rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("levy, d, expected", [
    (ParetoLogTail(0.5), PowerLog(1.0, 2.0), 3.0),
    (Zero(), PowerLog(1.0, 1.5), 2.0),
    (ParetoLogTail(0.0, beta=-0.5, u0=math.e), Logistic(2.0), math.inf),
    (ParetoLogTail(1.5), Linear(1.0), math.inf),
])
def test_integral_J_examples(levy, d, expected):
    v = integral_J(levy, d)
    if math.isinf(expected):
        assert math.isinf(v)
    else:
        assert v == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("levy, d, breaks", [
    (ParetoLogTail(1.0, beta=2.0, u0=E2), PowerLog(1.0, 1.5), (E2,)),
    (ParetoLogTail(1.2, c_b=3.0), PowerLog(2.0, 1.3, 1.0, z0=math.e), (math.e,)),
    (ParetoLogTail(0.3, beta=-1.5, u0=math.e), PowerLog(0.5, 2.0, 2.0, z0=math.e), (math.e,)),
    (TabulatedTail((1.0, 10.0, 100.0), (1.0, 0.2, 0.01)), Logistic(1.0), (10.0, 100.0)),
], ids=["log-tail", "log-drift", "slow-tail", "tabulated"])
def test_integral_I_against_mpmath(levy, d, breaks):
    k = d.kappa
    ref = mp_improper(lambda u: u * float(levy.tail(float(u))) / float(d.eval(float(u))),
                      k, breaks)
    assert integral_I(levy, d) == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("d, expected", [
    (PowerLog(1.0, 2.0), 1.0),
    (Logistic(2.0), 1.0),
    (PowerLog(1.0, 1.5), 2.0),
    (PowerLog(1.0, 2.0, 1.0), 0.21938393439552027),  # E1(1), mpmath
    (PowerLog(1.0, 1.0, 1.0), math.inf),
    (Linear(1.0), math.inf),
])
def test_flow_integral(d, expected):
    v = flow_integral(d)
    assert v == pytest.approx(expected, rel=1e-9) if math.isfinite(expected) else math.isinf(v)


def test_flow_integral_log_drift_against_mpmath():
    d = PowerLog(1.0, 2.0, 2.0, z0=math.e)
    ref = mp_improper(lambda u: 1 / float(d.eval(float(u))), d.kappa, (math.e,))
    assert flow_integral(d) == pytest.approx(ref, rel=1e-8)


def test_undecidable_custom_pair():
    d = Custom(lambda z: z * z, lambda z: 2 * z, kappa_=1.0)
    with pytest.raises(UndecidableError):
        integral_I(ParetoLogTail(1.0), d)
    r = classify(Mechanism(0.0, 0.0, ParetoLogTail(1.0)), d)
    assert r.I_value is None and r.verdict_nonexplosion == INCONCLUSIVE
    assert r.notes


# ---------------------------------------------------------------------------
# moment function
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("d, h, expected", [
    (Logistic(2.0), 1.0, 0.0),
    (Logistic(2.0), math.e, 1.0),
    (PowerLog(1.0, 2.0), 10.0, math.log(10.0)),
    (PowerLog(1.0, 1.5), 4.0, 2.0),
])
def test_moment_G_examples(d, h, expected):
    assert moment_G(d, h) == pytest.approx(expected, rel=1e-12, abs=1e-15)


@given(h=st.floats(1.0, 1e6))
def test_moment_G_quadrature_matches_closed_form(h):
    # z0 = e puts the log-power drift on the quadrature route
    d = PowerLog(1.0, 2.0, 1.0, z0=math.e)
    if h < d.kappa:
        return
    ref = math.log(math.log(h))  # int_e^h du / (u log u)
    assert moment_G(d, h) == pytest.approx(ref, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("levy, d, expected", [
    (PointMass(math.e, 1.0), Logistic(2.0), 1.0),
    (Zero(), Logistic(1.0), 0.0),
    (ParetoLogTail(0.5), PowerLog(1.0, 2.0), 2.0),
])
def test_moment_criterion_examples(levy, d, expected):
    r = moment_criterion(levy, d)
    assert r.finite and r.value == pytest.approx(expected, rel=1e-8)


def test_moment_criterion_infinite_for_divergent_log_moment():
    r = moment_criterion(ParetoLogTail(0.0, beta=-0.5, u0=math.e), Logistic(1.0))
    assert not r.finite and math.isinf(r.value)


@pytest.mark.parametrize("levy, d", [
    (ParetoLogTail(1.5), PowerLog(1.0, 1.5)),
    (ParetoLogTail(0.7, beta=1.0, u0=math.e ** 2), PowerLog(2.0, 1.6)),
    (ParetoLogTail(1.0), PowerLog(1.0, 1.0, 3.0, z0=math.e)),
    (ParetoLogTail(0.0, beta=-3.0, u0=math.e), Logistic(0.5)),
    (TabulatedTail((1.0, 10.0, 100.0), (1.0, 0.2, 0.01)), Logistic(1.0)),
])
def test_fubini_identity(levy, d):
    i = integral_I(levy, d)
    r = moment_criterion(levy, d)
    assert r.finite and abs(r.value - i) <= 1e-6 * i


# ---------------------------------------------------------------------------
# regime table and classify
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("args, rows", [
    ((1.5, 0.0, 1.5, 0.0), ["a1", "b1"]),
    ((1.5, 0.0, 1.0, 2.0), ["a2", "b2"]),
    ((1.5, 0.0, 1.0, 0.5), ["a2"]),
    ((0.5, 0.0, 2.0, 0.0), ["a3", "b3"]),
    ((0.5, -1.5, 1.5, 0.0), ["a4", "b4"]),
    ((1.0, 0.0, 1.0, 1.5), ["a5", "b5"]),
    ((1.0, -1.0, 1.0, 0.5), ["a5"]),
    ((2.0, 0.0, 0.5, 0.0), []),
])
def test_regime_table_examples(args, rows):
    assert regime_table(*args) == rows


@pytest.mark.parametrize("alpha, ah, bh, verdict", [
    (1.5, 1.5, 0.0, (GUARANTEED, GUARANTEED)),
    (1.5, 1.0, 2.0, (GUARANTEED, GUARANTEED)),
    (0.5, 1.2, 0.0, (INCONCLUSIVE, INCONCLUSIVE)),
    (1.5, 1.0, 0.5, (GUARANTEED, INCONCLUSIVE)),
])
def test_classify_examples(alpha, ah, bh, verdict):
    d = PowerLog(1.0, ah, bh, z0=math.e if bh else None)
    r = classify(Mechanism(0.0, 0.0, ParetoLogTail(alpha)), d)
    assert (r.verdict_nonexplosion, r.verdict_cdi) == verdict


def test_classify_via_comparison_drift():
    # (B1) fails for alpha_hat = 2.5; the smaller drift z^alpha' with alpha' in (1.5, 2) works
    m = Mechanism(0.0, 0.0, ParetoLogTail(0.5))
    d = PowerLog(1.0, 2.5)
    r = classify(m, d)
    assert not r.b1
    assert r.verdict_nonexplosion == GUARANTEED and r.verdict_cdi == GUARANTEED
    dp = comparison_drift(m.levy, d)
    z = np.geomspace(d.kappa, 1e10, 400)
    assert np.all(dp.eval(z) <= d.eval(z))


def test_report_serialises():
    r = classify(Mechanism(0.0, 0.0, ParetoLogTail(0.5)), PowerLog(1.0, 1.2)).to_dict()
    assert r["I_value"] == "inf" and r["table_row"] == []
    assert set(r) >= {"I_value", "J_value", "flow_integral", "b1", "b2", "b3",
                      "verdict_nonexplosion", "verdict_cdi", "table_row", "kappa"}


exps = st.tuples(st.sampled_from([0.5, 1.0, 1.5, 2.0]), st.sampled_from([0.0, 1.0, 2.0]),
                 st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0, 2.5]),
                 st.sampled_from([0.0, 0.5, 1.0, 1.5, 3.0]))


@given(ex=exps, scale=st.floats(0.1, 10.0))
def test_report_invariants(ex, scale):
    alpha, beta, ah, bh = ex
    u0 = max(1.0 + 1e-9, math.exp(beta / alpha) * 1.01) if beta else 1.0
    levy = ParetoLogTail(alpha, beta, 1.0, u0)
    d = PowerLog(scale, ah, bh, z0=math.e if bh else None)
    r = classify(Mechanism(0.0, 0.0, levy), d)
    if r.verdict_cdi == GUARANTEED:
        assert r.verdict_nonexplosion == GUARANTEED
    if None not in (r.J_value, r.I_value, r.flow_integral):
        assert math.isfinite(r.J_value) == (math.isfinite(r.I_value)
                                            and math.isfinite(r.flow_integral))
    # doubling the drift never weakens a verdict
    r2 = classify(Mechanism(0.0, 0.0, levy), PowerLog(2 * scale, ah, bh, z0=d.z0))
    for a, b in ((r.verdict_nonexplosion, r2.verdict_nonexplosion),
                 (r.verdict_cdi, r2.verdict_cdi)):
        assert not (a == GUARANTEED and b == INCONCLUSIVE)


@pytest.mark.parametrize("alpha, ah, finite", [
    (0.5, 1.8, True),
    (0.5, 1.3, False),
    (0.8, 1.5, True),
])
def test_regular_variation_agrees_with_J(alpha, ah, finite):
    out = regular_variation_check(Mechanism(0.0, 0.0, ParetoLogTail(alpha)), PowerLog(1.0, ah))
    assert out["agree"] and out["finite_J"] is finite
