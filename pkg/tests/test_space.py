import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdmpcert.space import HybridMetric, StatePoint, pairwise_rho_c, rho_c, rho_c_batch, stack_states, state

coord = st.floats(-50, 50, allow_nan=False)
regime = st.integers(1, 3)
points = st.builds(lambda a, b, i: state([a, b], i), coord, coord, regime)
weights = st.floats(0.01, 20.0, allow_nan=False)


def test_same_regime_is_euclidean():
    assert rho_c(HybridMetric(5.0), state([0.0, 0.0], 1), state([3.0, 4.0], 1)) == 5.0


def test_regime_mismatch_adds_c():
    assert rho_c(HybridMetric(2.5), state([1.0], 1), state([1.0], 2)) == 2.5


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        HybridMetric(-1.0)


def test_statepoint_validation():
    with pytest.raises(ValueError):
        state([0.0], 0)
    with pytest.raises(ValueError):
        state([np.nan], 1)


def test_statepoint_equality_and_hash():
    a, b = state([1.0, 2.0], 1), state(np.array([1.0, 2.0]), 1)
    assert a == b and hash(a) == hash(b)
    assert a != state([1.0, 2.0], 2)


@given(points, points, weights)
def test_symmetry(x1, x2, c):
    m = HybridMetric(c)
    assert rho_c(m, x1, x2) == rho_c(m, x2, x1)


@given(points, points, points, weights)
def test_triangle_inequality(x1, x2, x3, c):
    m = HybridMetric(c)
    assert rho_c(m, x1, x3) <= rho_c(m, x1, x2) + rho_c(m, x2, x3) + 1e-9


@given(points, weights)
def test_identity(x, c):
    assert rho_c(HybridMetric(c), x, x) == 0.0


@given(st.lists(points, min_size=2, max_size=8), weights)
def test_batch_forms_agree(pts, c):
    y, i = stack_states(pts)
    D = pairwise_rho_c(c, y, i)
    m = HybridMetric(c)
    for a in range(len(pts)):
        row = rho_c_batch(c, np.repeat(y[a : a + 1], len(pts), axis=0), np.full(len(pts), i[a]), y, i)
        np.testing.assert_allclose(row, D[a], atol=1e-12)
        for b in range(len(pts)):
            assert abs(D[a, b] - rho_c(m, pts[a], pts[b])) <= 1e-12
