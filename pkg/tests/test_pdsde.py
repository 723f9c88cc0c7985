import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from pdmpcert.errors import EnvelopeError
from pdmpcert.kernel import run_ensemble
from pdmpcert.model import build_model
from pdmpcert.pdsde import (
    b_bound_from_coefficients,
    check_dissipativity,
    direct_jump_lipschitz,
    gen_poisson,
    lm1d_pdsde,
    map_constants,
    poisson_counts,
    solve_pdsde,
    solve_pdsde_batch,
    to_model_spec,
)
from pdmpcert.streams import substream

UNIFORM = lambda th: np.ones(np.shape(th))  # noqa: E731


@pytest.fixture(scope="module")
def ps():
    return lm1d_pdsde()


# -- marked Poisson clock ---------------------------------------------------


def test_poisson_mean_and_variance():
    counts = poisson_counts(UNIFORM, 5.0, 10_000, seed=11)[:, 0]
    n = len(counts)
    se_mean = math.sqrt(5.0 / n)
    # Var of the sample variance is (mu4 - var^2)/n, with mu4 = mu + 3 mu^2 for a Poisson law
    se_var = math.sqrt((5.0 + 3 * 25.0 - 25.0) / n)
    assert abs(counts.mean() - 5.0) <= 3 * se_mean
    assert abs(counts.var(ddof=1) - 5.0) <= 3 * se_var


def test_poisson_disjoint_sets_uncorrelated():
    c = poisson_counts(UNIFORM, 5.0, 10_000, seed=12, sets=[(0.0, 0.3), (0.3, 1.0)])
    r = np.corrcoef(c[:, 0], c[:, 1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(len(c))
    assert c[:, 0].mean() == pytest.approx(1.5, abs=3 * math.sqrt(1.5 / len(c)))


def test_poisson_marks_follow_density():
    h = lambda th: 2.0 * np.asarray(th)  # noqa: E731
    mp = gen_poisson(h, 4000.0, substream(5, 0), h_max=2.0)
    assert stats.kstest(mp.eta, lambda x: x**2).pvalue > 0.01
    assert mp.count(4000.0) == len(mp.bar_tau)
    assert mp.count(4000.0, (0.0, 0.5)) + mp.count(4000.0, (0.5, 1.01)) == len(mp.eta)


def test_poisson_envelope_violation():
    with pytest.raises(EnvelopeError):
        gen_poisson(lambda th: 3.0 * np.ones(np.shape(th)), 50.0, substream(1, 0), h_max=1.0)


def test_poisson_rejects_nonpositive_horizon():
    with pytest.raises(ValueError):
        gen_poisson(UNIFORM, 0.0, substream(1, 0))


# -- solution ----------------------------------------------------------------


def test_time_change_identity(ps):
    trajs = solve_pdsde_batch(ps, np.zeros(10), 1, seed=3, max_jumps=100)
    assert sum(t.n_jumps for t in trajs) == 1000
    assert max(t.time_change_error() for t in trajs) <= 1e-6


def test_jumps_follow_the_amplitude(ps):
    tr = solve_pdsde(ps, [2.0], 1, horizon=20.0, seed=4)
    assert tr.n_jumps > 0
    np.testing.assert_allclose(tr.post, tr.pre + (tr.eta[:, None] - 1.0) * tr.pre, atol=1e-12)
    # jump-sum identity: accumulated displacement equals the sum of sigma(Y(tau-), eta)
    t = float(tr.tau[-1])
    expect = ((tr.eta - 1.0)[:, None] * tr.pre).sum(axis=0)
    np.testing.assert_allclose(tr.jump_sum(t), expect, atol=1e-12)
    assert np.all(np.diff(tr.tau) > 0) and np.all(np.diff(tr.bar_tau) > 0)


def test_zero_amplitude_gives_continuous_states(ps):
    flat = ps.with_(amplitude=lambda y, th: np.zeros_like(y))
    tr = solve_pdsde(flat, [3.0], 2, horizon=10.0, seed=5, grid=0.05)
    np.testing.assert_array_equal(tr.pre, tr.post)
    # between grid samples in the same regime, the state moves only by the flow
    dy = np.abs(np.diff(tr.y_grid[:, 0]))
    assert dy.max() <= 0.05 * max(3.0, 1.0) + 1e-9


def test_grid_sampling_consistency(ps):
    tr = solve_pdsde(ps, [1.0], 1, horizon=5.0, seed=6, grid=0.1)
    assert len(tr.grid) == len(tr.y_grid) == len(tr.Lambda_grid)
    assert np.all(np.diff(tr.Lambda_grid) >= 0)
    assert tr.Lambda_grid[0] == 0.0


def test_solution_is_reproducible(ps):
    a = solve_pdsde(ps, [1.0], 1, horizon=5.0, seed=7)
    b = solve_pdsde(ps, [1.0], 1, horizon=5.0, seed=7)
    np.testing.assert_array_equal(a.tau, b.tau)
    np.testing.assert_array_equal(a.post, b.post)


def test_embedded_chain_matches_direct_lm1d(ps):
    n, k = 2000, 3
    trajs = solve_pdsde_batch(ps, np.full(n, 0.0), 1, seed=8, max_jumps=k)
    y = np.array([t.embedded_chain()[0][k, 0] for t in trajs])
    r = np.array([t.embedded_chain()[1][k] for t in trajs])
    ens = run_ensemble(build_model("lm1d"), np.zeros(n), 1, k, seed=9)
    assert stats.ks_2samp(y, ens.y[k, :, 0]).pvalue > 0.01
    table = np.array([[np.sum(r == j), np.sum(ens.regimes[k] == j)] for j in (1, 2)])
    assert stats.chi2_contingency(table)[1] > 0.01


def test_needs_finite_horizon_or_jump_cap(ps):
    with pytest.raises(ValueError):
        solve_pdsde_batch(ps, np.zeros(1), 1)


# -- constants and hypotheses -------------------------------------------------


def test_mapped_jump_constant_exceeds_direct(ps):
    led = map_constants(ps)
    assert led.L_q == 1.5
    assert led.measured["L_q_mapped"] == 1.5
    assert led.measured["L_q_direct_estimate"] == pytest.approx(0.5, abs=1e-3)
    # a >= 1 leaves no finite Lyapunov ball
    assert led.a == 1.5 and math.isinf(led.R) and math.isinf(led.c_min)
    assert not led.main_inequality_ok


def test_zero_amplitude_maps_to_identity_jump(ps):
    flat = ps.with_(amplitude=lambda y, th: np.zeros_like(y), L_sigma=0.0)
    assert to_model_spec(flat).declared.L_q == 1.0
    assert direct_jump_lipschitz(flat) == pytest.approx(1.0)


def test_alpha_bound_boundary(ps):
    assert ps.alpha_bound == pytest.approx(-2.0)
    assert not ps.alpha_bound_ok
    assert not ps.with_(alpha=-2.0).alpha_bound_ok
    assert ps.with_(alpha=-2.0 - 1e-9).alpha_bound_ok


def test_b_bound_from_coefficients(ps):
    # K = 1.5 * |a(0, 2)| = 1.5, M = 0 at y* = 0
    assert b_bound_from_coefficients(ps) == pytest.approx(2.0 * 1.5)


def _with_drift(ps, drift, alpha):
    return ps.with_(drift=drift, alpha=alpha, semiflow=None, hazard_exact=None, in_domain=None, probe_box=(-5.0, 5.0))


@pytest.mark.parametrize(
    "drift, alpha, ok",
    [
        (lambda y, i: -y, -1.0, True),
        (lambda y, i: 1.0 - y, -1.0, True),
        (lambda y, i: -y, -1.5, False),
        (lambda y, i: y, 1.0, True),
        (lambda y, i: y, 0.5, False),
    ],
)
def test_dissipativity_examples(ps, drift, alpha, ok):
    rep = check_dissipativity(_with_drift(ps, drift, alpha), seed=1)
    assert rep.passed is ok
    if not ok:
        assert rep.witness is not None and rep.worst_slack > 0


@given(alpha=st.floats(-3.0, 3.0))
def test_linear_drift_slack_is_exact(ps, alpha):
    rep = check_dissipativity(_with_drift(ps, lambda y, i: -y, alpha), n_pairs=20, seed=0)
    assert rep.worst_slack == pytest.approx(-1.0 - alpha, abs=1e-9)


def test_lm1d_pdsde_is_dissipative_at_declared_alpha(ps):
    assert check_dissipativity(ps).passed
