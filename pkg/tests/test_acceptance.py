"""Desk-scale acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines
next to the pytest progress output.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import C_MIN, DELTA_B4
from pdmpcert import streams
from pdmpcert.constants import build_ledger
from pdmpcert.coupling import (
    coupled_step_batch,
    estimate_B4_B5,
    estimate_contraction,
    estimate_drift,
    estimate_sigma_moment,
)
from pdmpcert.experiments import (
    ERGODICITY_SEED,
    default_drift_states,
    default_near_pairs,
    default_pair_grid,
    default_sigma_pairs,
    ergodicity_experiment,
)
from pdmpcert.flow import hazard_batch, inverse_hazard_batch
from pdmpcert.kernel import run_ensemble, sample_wait_batch, step_batch
from pdmpcert.metric import EmpiricalMeasure, fm_bruteforce, fm_distance
from pdmpcert.pdsde import lm1d_pdsde, poisson_counts, solve_pdsde_batch
from pdmpcert.space import HybridMetric, rho_c, state

SEED = ERGODICITY_SEED


@pytest.fixture
def announce(capsys):
    def emit(k: int, title: str, ok: bool, seconds: float, limit: float, detail: str = ""):
        in_time = seconds < limit
        status = "PASS" if ok and in_time else "FAIL"
        with capsys.disabled():
            print(f"\n[{status}] criterion {k:2d} {title}: {detail} ({seconds:.2f} s, limit {limit:g} s)")
        assert ok, f"criterion {k} failed: {detail}"
        assert in_time, f"criterion {k} too slow: {seconds:.2f} s > {limit:g} s"

    return emit


def test_c01_waiting_time_law(lm, announce):
    t0 = time.perf_counter()
    rng = streams.substream(SEED, 1)
    w = sample_wait_batch(lm, np.zeros((100_000, 1)), np.ones(100_000, dtype=int), rng)
    p = stats.kstest(w, lambda t: 1 - np.exp(-2 * t)).pvalue
    announce(1, "waiting-time law", p > 0.01, time.perf_counter() - t0, 10, f"KS p = {p:.3f}")


def test_c02_hazard_round_trip(lm, announce):
    t0 = time.perf_counter()
    rng = streams.substream(SEED, 2)
    y = rng.uniform(0, 20, size=(1000, 1))
    i = rng.integers(1, 3, size=1000)
    s = rng.uniform(0, 20, size=1000)
    t = inverse_hazard_batch(lm, y, i, s)
    worst = float(np.max(np.abs(hazard_batch(lm, y, i, t) - s)))
    announce(2, "hazard round trip", worst <= 1e-6, time.perf_counter() - t0, 5, f"max |L(H(s)) - s| = {worst:.2e}")


PAIRS_C3 = [
    (state([0.0], 1), state([4.0], 1)),
    (state([1.0], 1), state([2.0], 2)),
    (state([0.0], 1), state([0.5], 2)),
    (state([2.0], 2), state([2.1], 2)),
    (state([3.0], 2), state([10.0], 1)),
]


def test_c03_coupling_marginals(lm, announce):
    t0 = time.perf_counter()
    n = 100_000
    pvals = []
    for k, (x1, x2) in enumerate(PAIRS_C3):
        cb = coupled_step_batch(
            lm, np.repeat(x1.y[None, :], n, 0), np.full(n, x1.i), np.repeat(x2.y[None, :], n, 0), np.full(n, x2.i),
            streams.substream(SEED, 3, k),
        )
        for side, (x, y, i) in enumerate(((x1, cb.y1, cb.i1), (x2, cb.y2, cb.i2))):
            d = step_batch(lm, np.repeat(x.y[None, :], n, 0), np.full(n, x.i), streams.substream(SEED, 3, k, side + 1))
            pvals.append(stats.ks_2samp(y[:, 0], d.post_y[:, 0]).pvalue)
            table = np.array([[np.sum(i == j), np.sum(d.regime == j)] for j in (1, 2)])
            pvals.append(stats.chi2_contingency(table)[1])
    worst = min(pvals)
    announce(3, "coupling marginals", worst > 0.01, time.perf_counter() - t0, 60, f"min p over {len(pvals)} tests = {worst:.3f}")


def test_c04_contraction(lm, ledger, announce):
    t0 = time.perf_counter()
    rows = estimate_contraction(lm, default_pair_grid(lm, ledger.R), 10_000, SEED, ledger=ledger)
    worst = max(r.estimate - r.bound - 3 * r.se for r in rows if not math.isnan(r.estimate))
    ok = all(r.passed for r in rows)
    announce(4, "B3 contraction", ok, time.perf_counter() - t0, 60, f"{len(rows)} pairs, worst excess {worst:.4f}")


def test_c05_drift(lm, ledger, announce):
    t0 = time.perf_counter()
    states = default_drift_states(lm)
    rows = estimate_drift(lm, states, 10_000, SEED, ledger=ledger)
    worst = max(r.estimate - r.bound - 3 * r.se for r in rows)
    ok = len(rows) == 20 and all(r.passed for r in rows)
    announce(5, "B1 drift", ok, time.perf_counter() - t0, 30, f"{len(rows)} states, worst excess {worst:.4f}")


def test_c06_masses(lm, ledger, announce):
    t0 = time.perf_counter()
    grid = estimate_B4_B5(lm, default_pair_grid(lm, ledger.R), 10_000, SEED, ledger=ledger)
    near_pairs = default_near_pairs(lm, ledger.c_min)
    m = HybridMetric(ledger.c_min)
    assert all(rho_c(m, a, b) <= 0.2 + 1e-12 for a, b in near_pairs)
    near = estimate_B4_B5(lm, near_pairs, 10_000, SEED + 1, ledger=ledger)
    b4 = [r[1] for r in grid]
    b5 = [r[0] for r in near]
    ok = all(r.passed for r in b4 + b5) and b4[0].bound == pytest.approx(DELTA_B4)
    detail = (
        f"B4 min close mass {min(r.estimate for r in b4):.4f} vs {DELTA_B4:.4f} on {len(b4)} pairs; "
        f"B5 worst slack {min(r.estimate - r.bound + 3 * r.se for r in b5):.4f} on {len(b5)} pairs"
    )
    announce(6, "B4/B5 masses", ok, time.perf_counter() - t0, 60, detail)


def test_c07_constants_ledger(lm, announce):
    t0 = time.perf_counter()
    led = build_ledger(lm)
    ok = (
        led.a == 0.5
        and abs(led.b - 0.5) <= 1e-6
        and abs(led.R - 4) <= 1e-5
        and led.q == 0.5
        and abs(led.c_min - C_MIN) <= 1e-9
        and abs(led.b4_delta - DELTA_B4) <= 1e-9
        and led.b5_l == 3
        and led.main_inequality_ok
    )
    detail = f"a={led.a} b={led.b:.9f} R={led.R:.6f} q={led.q} c_min={led.c_min:.12f} delta={led.b4_delta:.12f} l={led.b5_l}"
    # "instantaneous": a generous one-second ceiling
    announce(7, "constants ledger", ok, time.perf_counter() - t0, 1, detail)


def test_c08_exponential_ergodicity(lm, announce):
    t0 = time.perf_counter()
    rep = ergodicity_experiment(lm, state([0.0], 1), state([4.0], 2), n_chains=2000, n_max=30, seed=SEED)
    fit = rep.fit
    detail = (
        f"slope {fit.slope:.3f}, R2 {fit.r2:.4f}, last/step1 {rep.last_prefloor_ratio:.3f}, "
        f"pre-floor steps {rep.prefloor}, floor {rep.floor:.4f}"
        if fit is not None
        else "no pre-floor fit"
    )
    announce(8, "exponential ergodicity", rep.passed, time.perf_counter() - t0, 300, detail)


def _random_measure(rng, n, dim):
    y = rng.uniform(-2, 2, size=(n, dim))
    i = rng.integers(1, 3, size=n)
    w = rng.dirichlet(np.ones(n))
    w[-1] = 1.0 - w[:-1].sum()
    return EmpiricalMeasure(y, i, w)


def test_c09_fm_metric(announce):
    t0 = time.perf_counter()
    rng = streams.substream(SEED, 9)
    worst = 0.0
    for _ in range(200):
        n1 = int(rng.integers(1, 4))
        n2 = int(rng.integers(1, 5 - n1))
        dim = int(rng.integers(1, 3))
        metric = HybridMetric(float(rng.uniform(0.2, 3.0)))
        mu, nu = _random_measure(rng, n1, dim), _random_measure(rng, n2, dim)
        worst = max(worst, abs(fm_distance(mu, nu, metric) - fm_bruteforce(mu, nu, metric)))
    dirac_err = 0.0
    for _ in range(200):
        metric = HybridMetric(float(rng.uniform(0.2, 3.0)))
        a = state(rng.uniform(-3, 3, 1), int(rng.integers(1, 3)))
        b = state(rng.uniform(-3, 3, 1), int(rng.integers(1, 3)))
        da = EmpiricalMeasure(a.y[None, :], [a.i], [1.0])
        db = EmpiricalMeasure(b.y[None, :], [b.i], [1.0])
        dirac_err = max(dirac_err, abs(fm_distance(da, db, metric) - min(rho_c(metric, a, b), 2.0)))
    ok = worst <= 2e-3 and dirac_err <= 1e-9
    announce(9, "FM metric", ok, time.perf_counter() - t0, 30, f"LP vs oracle {worst:.2e}, two-Dirac {dirac_err:.2e}")


def test_c10_poisson_process(announce):
    t0 = time.perf_counter()
    n = 10_000
    c = poisson_counts(lambda th: np.ones(np.shape(th)), 5.0, n, SEED, sets=[(0.0, 1.0), (0.0, 0.4), (0.4, 1.0)])
    total = c[:, 0]
    mean_ok = abs(total.mean() - 5) <= 3 * math.sqrt(5 / n)
    var_ok = abs(total.var(ddof=1) - 5) <= 3 * math.sqrt((5 + 3 * 25 - 25) / n)
    cov = np.cov(c[:, 1], c[:, 2])[0, 1]
    # sd of the sample covariance of independent counts: sqrt(var1 var2 / n)
    cov_ok = abs(cov) <= 3 * math.sqrt(2.0 * 3.0 / n)
    detail = f"mean {total.mean():.4f}, var {total.var(ddof=1):.4f}, disjoint cov {cov:.4f}"
    announce(10, "Poisson process", mean_ok and var_ok and cov_ok, time.perf_counter() - t0, 30, detail)


def test_c11_pdsde_consistency(lm, announce):
    t0 = time.perf_counter()
    ps = lm1d_pdsde()
    trajs = solve_pdsde_batch(ps, np.zeros(10), 1, seed=SEED, max_jumps=100)
    err = max(t.time_change_error() for t in trajs)
    n_jumps = sum(t.n_jumps for t in trajs)
    n, k = 2000, 5
    emb = solve_pdsde_batch(ps, np.zeros(n), 1, seed=SEED + 1, max_jumps=k)
    ens = run_ensemble(lm, np.zeros(n), 1, k, SEED, stream=11)
    pvals = []
    for step in range(1, k + 1):
        y = np.array([t.embedded_chain()[0][step, 0] for t in emb])
        r = np.array([t.embedded_chain()[1][step] for t in emb])
        pvals.append(stats.ks_2samp(y, ens.y[step, :, 0]).pvalue)
        table = np.array([[np.sum(r == j), np.sum(ens.regimes[step] == j)] for j in (1, 2)])
        pvals.append(stats.chi2_contingency(table)[1])
    # Bonferroni over the 2k tests keeps the family at the 1% level
    ok = n_jumps >= 1000 and err <= 1e-6 and min(pvals) > 0.01 / len(pvals)
    detail = f"time change error {err:.2e} over {n_jumps} jumps; min p {min(pvals):.3f} over {len(pvals)} tests"
    announce(11, "PDSDE consistency", ok, time.perf_counter() - t0, 120, detail)


def test_c12_sigma_moment(lm, ledger, announce):
    t0 = time.perf_counter()
    pairs = default_sigma_pairs(lm) + [(state([8.0], 1), state([9.0], 2)), (state([3.0], 1), state([20.0], 2))]
    runs = [estimate_sigma_moment(lm, pairs, 0.9, 2000, SEED + s, ledger=ledger) for s in range(5)]
    est = np.array([[r.estimate for r in run] for run in runs])
    spread = float(np.max((est.max(axis=0) - est.min(axis=0)) / est.mean(axis=0)))
    trunc = max(r.truncation_mass for run in runs for r in run)
    ok = spread <= 0.05 and trunc < 1e-3
    detail = f"{len(pairs)} pairs x 5 seeds, max relative spread {spread:.4f}, max truncation mass {trunc:.1e}"
    announce(12, "sigma moment", ok, time.perf_counter() - t0, 120, detail)
