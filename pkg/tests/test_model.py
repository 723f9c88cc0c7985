import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdmpcert.errors import ModelError
from pdmpcert.model import MODELS, build_model, const_rate, lm1d, numeric_flow, validate_model

from conftest import lm1d_flow

times = st.floats(0.0, 10.0, allow_nan=False)
ys = st.floats(0.0, 50.0, allow_nan=False)


def test_lm1d_validates(lm):
    rep = validate_model(lm, samples=1000, seed=0)
    assert rep.passed, rep.failures()
    assert rep.checks["row_stochastic"].max_violation == 0.0


def test_broken_switching_reported_with_witness():
    bad = lm1d(switch=[[0.6, 0.6], [0.5, 0.5]])
    rep = validate_model(bad, samples=200, seed=1)
    assert rep.failures() == ["row_stochastic"]
    chk = rep.checks["row_stochastic"]
    assert chk.max_violation == pytest.approx(0.2)
    assert chk.witness["matrix"][0] == [0.6, 0.6]


def test_zero_intensity_rejected(lm):
    with pytest.raises(ModelError):
        lm.with_(lambda_lo=0.0)
    zero = lm.with_(intensity=lambda y: np.zeros(len(y)))
    with pytest.raises(ModelError, match="not positive"):
        validate_model(zero, samples=10, seed=0)


def test_density_envelope_violation(lm):
    rep = validate_model(lm.with_(p_max=0.5), samples=50, seed=0)
    assert "density_envelope" in rep.failures()


def test_empty_mark_interval_rejected(lm):
    with pytest.raises(ModelError):
        lm.with_(theta_interval=(1.0, 1.0))


def test_registry_and_unknown_name():
    assert {"lm1d", "const_rate"} <= set(MODELS)
    assert build_model("const_rate", rate=3.0).lambda_lo == 3.0
    assert build_model("lm1d_numeric").semiflow is None
    with pytest.raises(ModelError):
        build_model("nope")
    with pytest.raises(ModelError):
        build_model("lm1d", bogus=1)


def test_bad_lm1d_parameters():
    with pytest.raises(ModelError):
        lm1d(decay=0.0)
    with pytest.raises(ModelError):
        lm1d(targets=(-1.0, 1.0))


def test_declared_constants(lm):
    d = lm.declared
    assert (d.L, d.alpha, d.L_q, d.L_lambda, d.L_pi, d.L_p, d.delta_pi, d.delta_p) == (
        1.0, -1.0, 0.5, 1.0, 0.0, 0.0, 1.0, 1.0,
    )


@given(times, times, ys, st.sampled_from([1, 2]))
def test_semiflow_identity(s, t, y, i):
    lm = lm1d()
    one = lm.semiflow(np.array([t]), np.array([[y]]), np.array([i]))
    two = lm.semiflow(np.array([s]), one, np.array([i]))
    direct = lm.semiflow(np.array([s + t]), np.array([[y]]), np.array([i]))
    assert abs(two[0, 0] - direct[0, 0]) <= 1e-12 * (1 + y)


@given(times, ys, ys, st.sampled_from([1, 2]))
def test_flow_contraction_exact(t, y1, y2, i):
    lm = lm1d()
    a = lm.semiflow(np.array([t, t]), np.array([[y1], [y2]]), np.array([i, i]))
    assert abs(abs(a[0, 0] - a[1, 0]) - np.exp(-t) * abs(y1 - y2)) <= 1e-12 * (1 + y1 + y2)


def test_closed_form_matches_independent_formula(lm):
    t = np.linspace(0, 5, 11)
    for i in (1, 2):
        got = lm.semiflow(t, np.full((11, 1), 3.0), np.full(11, i))[:, 0]
        np.testing.assert_allclose(got, lm1d_flow(t, 3.0, i), rtol=0, atol=1e-14)


def test_numeric_flow_requires_vector_field(lm):
    with pytest.raises(ModelError):
        numeric_flow(lm.with_(vector_field=None))


def test_const_rate_has_flat_intensity():
    m = const_rate(2.5)
    assert np.all(m.intensity(np.linspace(0, 10, 5)[:, None]) == 2.5)
