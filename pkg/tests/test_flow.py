import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from pdmpcert.errors import BracketError, IntegrationError
from pdmpcert.flow import evolve, evolve_batch, hazard, hazard_batch, hazard_curve, inverse_hazard, inverse_hazard_batch, t_max
from pdmpcert.space import state

from conftest import lm1d_flow, lm1d_intensity

# 1 + log((e + 1) / 2): closed-form antiderivative of 1 + 1/(1 + e^{-t}) on [0, 1]
L_1_11 = 1.0 + math.log((math.e + 1.0) / 2.0)


def quad_hazard(y, i, t):
    return quad(lambda s: lm1d_intensity(lm1d_flow(s, y, i)), 0.0, t, epsabs=1e-13, epsrel=1e-13)[0]


def test_evolve_examples(lm):
    assert evolve(lm, 1, [4.0], 0.0)[0] == 4.0
    assert evolve(lm, 1, [4.0], math.log(2))[0] == pytest.approx(2.0, abs=1e-14)
    assert evolve(lm, 2, [0.0], 5.0)[0] == pytest.approx(1 - math.exp(-5), abs=1e-14)


def test_numeric_flow_matches_closed_form(lm, lm_numeric):
    y = np.array([[0.0], [1.0], [3.0], [7.5]])
    i = np.array([1, 2, 1, 2])
    t = np.array([0.3, 1.0, 2.5, 4.0])
    np.testing.assert_allclose(evolve_batch(lm_numeric, y, i, t), evolve_batch(lm, y, i, t), atol=1e-10)


def test_hazard_examples(lm, lm_numeric):
    for t in (0.0, 0.5, 3.0):
        assert hazard(lm, state([0.0], 1), t) == pytest.approx(2 * t, abs=1e-14)
    assert hazard(lm, state([1.0], 1), 1.0) == pytest.approx(L_1_11, abs=1e-13)
    assert hazard(lm, state([1.0], 1), 1.0, method="numeric") == pytest.approx(L_1_11, abs=1e-8)
    assert hazard(lm_numeric, state([1.0], 1), 1.0) == pytest.approx(L_1_11, abs=1e-8)
    assert hazard(lm_numeric, state([2.0], 2), 0.0) == 0.0


def test_hazard_matches_adaptive_quadrature(lm):
    rng = np.random.default_rng(4)
    for _ in range(30):
        y, i, t = rng.uniform(0, 20), int(rng.integers(1, 3)), rng.uniform(0, 6)
        assert hazard(lm, state([y], i), t) == pytest.approx(quad_hazard(y, i, t), abs=1e-10)


def test_inverse_examples(lm, lm_numeric):
    assert inverse_hazard(lm, state([0.0], 1), 1.0) == pytest.approx(0.5, abs=1e-12)
    assert inverse_hazard(lm, state([3.0], 2), 0.0) == 0.0
    assert inverse_hazard(lm, state([1.0], 1), L_1_11) == pytest.approx(1.0, abs=1e-6)
    assert inverse_hazard(lm_numeric, state([1.0], 1), L_1_11) == pytest.approx(1.0, abs=1e-6)


@given(st.floats(0, 30), st.sampled_from([1, 2]), st.floats(0, 20))
def test_round_trip(y, i, s):
    from pdmpcert.model import lm1d

    lm = lm1d()
    t = inverse_hazard(lm, state([y], i), s)
    assert abs(hazard(lm, state([y], i), t) - s) <= 1e-8 * (1 + s)


def test_round_trip_numeric_batch(lm_numeric):
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 10, size=(200, 1))
    i = rng.integers(1, 3, size=200)
    s = rng.uniform(0, 20, size=200)
    t = inverse_hazard_batch(lm_numeric, y, i, s)
    np.testing.assert_allclose(hazard_batch(lm_numeric, y, i, t), s, atol=1e-6)


@given(st.floats(0, 30), st.sampled_from([1, 2]), st.lists(st.floats(0, 10), min_size=2, max_size=10))
def test_bounds_and_monotonicity(y, i, ts):
    from pdmpcert.model import lm1d

    lm = lm1d()
    ts = np.sort(np.array(ts))
    L = hazard_batch(lm, np.full((len(ts), 1), y), np.full(len(ts), i), ts)
    assert np.all(L >= lm.lambda_lo * ts - 1e-12)
    assert np.all(L <= lm.lambda_hi * ts + 1e-12)
    assert np.all(np.diff(L) >= -1e-12)


def test_hazard_curve(lm):
    hc = hazard_curve(lm, state([1.0], 1), 2.0)
    assert hc.L[0] == 0.0 and np.all(np.diff(hc.L) > 0)
    assert hc(1.0) == pytest.approx(L_1_11, abs=1e-6)


def test_flow_contraction_numeric(lm_numeric):
    rng = np.random.default_rng(2)
    y1, y2 = rng.uniform(0, 10, size=(50, 1)), rng.uniform(0, 10, size=(50, 1))
    i = rng.integers(1, 3, size=50)
    t = rng.uniform(0, 5, size=50)
    d = np.abs(evolve_batch(lm_numeric, y1, i, t) - evolve_batch(lm_numeric, y2, i, t))[:, 0]
    assert np.all(d <= np.exp(-t) * np.abs(y1 - y2)[:, 0] + 1e-9)


def test_composition_numeric(lm_numeric):
    y = np.array([[2.0]])
    a = evolve_batch(lm_numeric, evolve_batch(lm_numeric, y, [2], [0.7]), [2], [1.1])
    b = evolve_batch(lm_numeric, y, [2], [1.8])
    assert abs(a[0, 0] - b[0, 0]) <= 1e-10


def test_leaving_domain_is_an_error(lm_numeric):
    pushy = lm_numeric.with_(vector_field=lambda y, i: -np.ones_like(y))
    with pytest.raises(IntegrationError):
        evolve(pushy, 1, [0.5], 2.0)


def test_inconsistent_bounds_raise_bracket_error(lm):
    with pytest.raises(BracketError):
        inverse_hazard(lm.with_(lambda_lo=3.0, lambda_hi=4.0), state([0.0], 1), 1.0)


def test_negative_arguments_rejected(lm):
    with pytest.raises(ValueError):
        hazard(lm, state([0.0], 1), -1.0)
    with pytest.raises(ValueError):
        inverse_hazard(lm, state([0.0], 1), -1.0)


def test_t_max_tail(lm):
    assert math.exp(-lm.lambda_lo * t_max(lm)) == pytest.approx(1e-12)
