"""Markovian coupling B = Q + R of two copies of the jump chain.

A coupled step draws (t, theta, j) from chain 1's kernel and keeps it as a
common move with probability r = q/p1, where q is the density of the
coupled part Q (product of the pointwise minima of the intensity, survival,
mark density and switching factors) and p1 is chain 1's kernel density.
Otherwise chain 1 keeps its draw and chain 2 draws from its own kernel,
accepting with probability 1 - q/p2.  The rejected mass of each chain is then
exactly its residual, so the joint law of a non-coupled move is the product of
normalised residuals and both marginals are the kernel P.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import streams
from .errors import CouplingError
from .flow import evolve_batch, hazard_batch
from .kernel import BLOCK, step_batch
from .model import ModelSpec
from .space import StatePoint, rho_c_batch

MAX_RESIDUAL_TRIALS = 10**6
SIGMA_NMAX = 10**4

# stream tags separating the estimators' randomness
S_CONTRACTION, S_MASSES, S_SIGMA, S_MARGINAL, S_DRIFT = 11, 12, 13, 14, 15


def _factors(spec: ModelSpec, y, i, t, theta, j):
    z = evolve_batch(spec, y, i, t)
    lam = np.asarray(spec.intensity(z), dtype=float)
    L = hazard_batch(spec, y, i, t)
    p = np.asarray(spec.density(theta, z), dtype=float)
    post = np.asarray(spec.jump_map(theta, z), dtype=float)
    pi = spec.switch_rows(i, post)[np.arange(len(i)), np.asarray(j) - 1]
    return lam, L, p, pi, post


def density_ratio_batch(spec: ModelSpec, y1, i1, y2, i2, t, theta, j) -> np.ndarray:
    """q/p1 at the jump data (t, theta, j), evaluated along each chain's own flow."""
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    i1, i2 = np.asarray(i1, dtype=np.int64), np.asarray(i2, dtype=np.int64)
    t, theta = np.asarray(t, dtype=float), np.asarray(theta, dtype=float)
    l1, L1, p1, pi1, _ = _factors(spec, y1, i1, t, theta, j)
    l2, L2, p2, pi2, _ = _factors(spec, y2, i2, t, theta, j)
    bad = ~((l1 > 0) & (p1 > 0) & (pi1 > 0))
    if bad.any():
        k = int(np.argmax(bad))
        raise CouplingError(
            f"chain-1 kernel density vanishes at t={t[k]}, theta={theta[k]}, j={int(np.asarray(j)[k])}; "
            "such a draw cannot come from chain 1's kernel"
        )
    r = (
        np.minimum(l1, l2) / l1
        * np.exp(-np.maximum(0.0, L2 - L1))
        * np.minimum(p1, p2) / p1
        * np.minimum(pi1, pi2) / pi1
    )
    return np.clip(r, 0.0, 1.0)


def density_ratio(spec: ModelSpec, x1: StatePoint, x2: StatePoint, t: float, theta: float, j: int) -> float:
    return float(
        density_ratio_batch(
            spec, x1.y[None, :], [x1.i], x2.y[None, :], [x2.i], [t], [theta], [j]
        )[0]
    )


@dataclass
class CoupledBatch:
    y1: np.ndarray
    i1: np.ndarray
    y2: np.ndarray
    i2: np.ndarray
    coupled: np.ndarray
    residual_trials: int = 0


def coupled_step_batch(spec: ModelSpec, y1, i1, y2, i2, rng, max_trials: int = MAX_RESIDUAL_TRIALS) -> CoupledBatch:
    rng = streams.as_generator(rng)
    y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
    i1, i2 = np.asarray(i1, dtype=np.int64), np.asarray(i2, dtype=np.int64)
    n = len(i1)
    g1, gacc, gres = streams.split(rng, 3)
    jb = step_batch(spec, y1, i1, g1)
    r = density_ratio_batch(spec, y1, i1, y2, i2, jb.wait, jb.theta, jb.regime)
    coupled = gacc.uniform(size=n) < r

    y2n = np.empty_like(y2)
    i2n = np.empty(n, dtype=np.int64)
    c = np.nonzero(coupled)[0]
    if c.size:
        z2 = evolve_batch(spec, y2[c], i2[c], jb.wait[c])
        y2n[c] = spec.jump_map(jb.theta[c], z2)
        i2n[c] = jb.regime[c]
    todo = np.nonzero(~coupled)[0]
    trials = 0
    while todo.size:
        trials += 1
        if trials > max_trials:
            raise CouplingError(f"residual sampler exceeded {max_trials} trials")
        jb2 = step_batch(spec, y2[todo], i2[todo], gres)
        rs = density_ratio_batch(
            spec, y2[todo], i2[todo], y1[todo], i1[todo], jb2.wait, jb2.theta, jb2.regime
        )
        acc = gres.uniform(size=todo.size) >= rs
        y2n[todo[acc]] = jb2.post_y[acc]
        i2n[todo[acc]] = jb2.regime[acc]
        todo = todo[~acc]
    return CoupledBatch(jb.post_y, jb.regime, y2n, i2n, coupled, trials)


def coupled_step(spec: ModelSpec, x1: StatePoint, x2: StatePoint, rng) -> tuple[StatePoint, StatePoint, bool]:
    cb = coupled_step_batch(spec, x1.y[None, :], [x1.i], x2.y[None, :], [x2.i], rng)
    return (
        StatePoint(cb.y1[0], int(cb.i1[0])),
        StatePoint(cb.y2[0], int(cb.i2[0])),
        bool(cb.coupled[0]),
    )


@dataclass(frozen=True)
class CoupledState:
    x1: StatePoint
    x2: StatePoint
    last_coupled: bool
    step_index: int


def run_coupled_chain(
    spec: ModelSpec, x1: StatePoint, x2: StatePoint, n: int, seed: int, pair_id: int = 0
) -> list[CoupledState]:
    """n coupled steps; step k uses substream (seed, pair_id, k)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = [CoupledState(x1, x2, False, 0)]
    for k in range(n):
        x1, x2, c = coupled_step(spec, x1, x2, streams.substream(seed, pair_id, k))
        out.append(CoupledState(x1, x2, c, k + 1))
    return out


# --------------------------------------------------------------------------
# estimators


def _ledger(spec, ledger):
    if ledger is None:
        from .constants import build_ledger

        ledger = build_ledger(spec)
    return ledger


def lyapunov(spec: ModelSpec, y, y_star=None) -> np.ndarray:
    ys = spec.declared.y_star if y_star is None else y_star
    return np.linalg.norm(np.atleast_2d(np.asarray(y, dtype=float)) - ys, axis=1)


def in_F(spec: ModelSpec, x1: StatePoint, x2: StatePoint, R: float) -> bool:
    if x1.i == x2.i:
        return True
    return float(lyapunov(spec, x1.y)[0] + lyapunov(spec, x2.y)[0]) < R


def _pair_batch(spec, x1, x2, m, seed, tag, pid):
    y1 = np.repeat(x1.y[None, :], m, axis=0)
    y2 = np.repeat(x2.y[None, :], m, axis=0)
    i1, i2 = np.full(m, x1.i), np.full(m, x2.i)
    parts = []
    for b in range((m + BLOCK - 1) // BLOCK):
        sl = slice(b * BLOCK, min(m, (b + 1) * BLOCK))
        parts.append(coupled_step_batch(spec, y1[sl], i1[sl], y2[sl], i2[sl], streams.substream(seed, tag, pid, b)))
    return CoupledBatch(
        np.concatenate([p.y1 for p in parts]),
        np.concatenate([p.i1 for p in parts]),
        np.concatenate([p.y2 for p in parts]),
        np.concatenate([p.i2 for p in parts]),
        np.concatenate([p.coupled for p in parts]),
        max(p.residual_trials for p in parts),
    )


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0


@dataclass
class PairEstimate:
    pair_id: int
    x1: tuple
    x2: tuple
    distance: float
    estimate: float
    se: float
    bound: float
    passed: bool
    kind: str
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _pt(x: StatePoint):
    return (x.y.tolist(), x.i)


def _check_pairs(spec, pairs, R):
    for k, (x1, x2) in enumerate(pairs):
        if not in_F(spec, x1, x2, R):
            raise CouplingError(f"pair {k} ({_pt(x1)}, {_pt(x2)}) lies outside F")


def estimate_contraction(
    spec: ModelSpec,
    pairs: Sequence[tuple[StatePoint, StatePoint]],
    m: int,
    seed: int,
    c: Optional[float] = None,
    ledger=None,
) -> list[PairEstimate]:
    """Per pair: E[rho_c(x1', x2') 1{coupled}] / rho_c(x1, x2), passing iff <= q + 3 SE."""
    if m < 1:
        raise ValueError("m must be >= 1")
    led = _ledger(spec, ledger)
    c = led.c_min if c is None else c
    _check_pairs(spec, pairs, led.R)
    out = []
    for k, (x1, x2) in enumerate(pairs):
        d0 = rho_c_batch(c, x1.y[None, :], [x1.i], x2.y[None, :], [x2.i])[0]
        if d0 == 0:
            out.append(PairEstimate(k, _pt(x1), _pt(x2), 0.0, math.nan, math.nan, led.q, True, "B3", "skipped: identical pair"))
            continue
        cb = _pair_batch(spec, x1, x2, m, seed, S_CONTRACTION, k)
        d1 = rho_c_batch(c, cb.y1, cb.i1, cb.y2, cb.i2) * cb.coupled
        est, se = _mean_se(d1 / d0)
        out.append(PairEstimate(k, _pt(x1), _pt(x2), float(d0), est, se, led.q, est <= led.q + 3 * se, "B3"))
    return out


def estimate_B4_B5(
    spec: ModelSpec,
    pairs: Sequence[tuple[StatePoint, StatePoint]],
    m: int,
    seed: int,
    c: Optional[float] = None,
    ledger=None,
) -> list[tuple[PairEstimate, PairEstimate]]:
    """Per pair: (coupled mass vs 1 - l rho_c^nu, close-move mass vs delta)."""
    led = _ledger(spec, ledger)
    c = led.c_min if c is None else c
    _check_pairs(spec, pairs, led.R)
    out = []
    for k, (x1, x2) in enumerate(pairs):
        d0 = float(rho_c_batch(c, x1.y[None, :], [x1.i], x2.y[None, :], [x2.i])[0])
        cb = _pair_batch(spec, x1, x2, m, seed, S_MASSES, k)
        d1 = rho_c_batch(c, cb.y1, cb.i1, cb.y2, cb.i2)
        mass, mse = _mean_se(cb.coupled)
        close, cse = _mean_se(cb.coupled & (d1 <= led.q * d0))
        b5 = 1.0 - led.b5_l * d0**led.b5_nu
        out.append(
            (
                PairEstimate(k, _pt(x1), _pt(x2), d0, mass, mse, b5, mass >= b5 - 3 * mse, "B5"),
                PairEstimate(k, _pt(x1), _pt(x2), d0, close, cse, led.b4_delta, close >= led.b4_delta - 3 * cse, "B4"),
            )
        )
    return out


def estimate_drift(spec: ModelSpec, states: Sequence[StatePoint], m: int, seed: int, ledger=None) -> list[PairEstimate]:
    """Per state x: E[V(next)] from m kernel steps, passing iff <= a V(x) + b + 3 SE."""
    led = _ledger(spec, ledger)
    out = []
    for k, x in enumerate(states):
        v0 = float(lyapunov(spec, x.y)[0])
        parts = []
        for b in range((m + BLOCK - 1) // BLOCK):
            n = min(m, (b + 1) * BLOCK) - b * BLOCK
            ev = step_batch(spec, np.repeat(x.y[None, :], n, axis=0), np.full(n, x.i), streams.substream(seed, S_DRIFT, k, b))
            parts.append(lyapunov(spec, ev.post_y))
        est, se = _mean_se(np.concatenate(parts))
        bound = led.a * v0 + led.b
        out.append(PairEstimate(k, _pt(x), None, v0, est, se, bound, est <= bound + 3 * se, "B1"))
    return out


@dataclass
class SigmaEstimate:
    pair_id: int
    x1: tuple
    x2: tuple
    zeta: float
    estimate: float
    se: float
    truncation_mass: float
    truncated_paths: int
    n_max: int
    mean_sigma: float
    ok: bool
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_sigma_moment(
    spec: ModelSpec,
    pairs: Sequence[tuple[StatePoint, StatePoint]],
    zeta: float,
    m: int,
    seed: int,
    c: Optional[float] = None,
    ledger=None,
    n_max: int = SIGMA_NMAX,
) -> list[SigmaEstimate]:
    """Truncated Monte-Carlo estimate of E[zeta^{-sigma}] for the return time
    sigma = min{n >= 1: pair in F and V(x1) + V(x2) < R} of the coupled chain.

    Paths still running at ``n_max`` contribute zeta^{-n_max}; that contribution
    is reported as the truncation mass, and ``ok`` is false if it exceeds 1e-3
    of the estimate.
    """
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0, 1)")
    led = _ledger(spec, ledger)
    out = []
    for k, (x1, x2) in enumerate(pairs):
        v0 = float(lyapunov(spec, x1.y)[0] + lyapunov(spec, x2.y)[0])
        y1 = np.repeat(x1.y[None, :], m, axis=0)
        y2 = np.repeat(x2.y[None, :], m, axis=0)
        i1, i2 = np.full(m, x1.i), np.full(m, x2.i)
        sigma = np.full(m, -1, dtype=np.int64)
        alive = np.arange(m)
        for n in range(1, n_max + 1):
            if not alive.size:
                break
            cb = coupled_step_batch(spec, y1[alive], i1[alive], y2[alive], i2[alive], streams.substream(seed, S_SIGMA, k, n))
            y1[alive], i1[alive], y2[alive], i2[alive] = cb.y1, cb.i1, cb.y2, cb.i2
            vsum = lyapunov(spec, cb.y1) + lyapunov(spec, cb.y2)
            hit = vsum < led.R  # V-sum below R puts the pair in F as well
            sigma[alive[hit]] = n
            alive = alive[~hit]
        with np.errstate(over="ignore"):
            tail = math.inf if n_max * -math.log(zeta) > 700 else zeta ** (-float(n_max))
            contrib = np.where(sigma > 0, np.exp(-np.log(zeta) * sigma), tail)
        est, se = _mean_se(contrib)
        n_trunc = int(np.sum(sigma < 0))
        trunc = n_trunc * tail / m if n_trunc else 0.0
        note = "" if v0 < 4 * led.b / (1 - led.a) else "start outside the recommended V-sum range"
        out.append(
            SigmaEstimate(
                k, _pt(x1), _pt(x2), zeta, est, se, trunc, n_trunc, n_max,
                float(sigma[sigma > 0].mean()) if np.any(sigma > 0) else math.nan,
                trunc <= 1e-3 * est, note,
            )
        )
    return out


# --------------------------------------------------------------------------
# export


DIAG_SCHEMA = {"schema": "pdmpcert-coupling-diagnostics", "version": 1}


def write_diagnostics_csv(path, rows: Sequence[PairEstimate]) -> None:
    cols = ["pair_id", "kind", "x1", "x2", "distance", "estimate", "se", "bound", "passed", "note"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {DIAG_SCHEMA['schema']} v{DIAG_SCHEMA['version']}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            d = r.to_dict()
            w.writerow([json.dumps(d[c]) if c in ("x1", "x2") else d[c] for c in cols])


def diagnostics_json(rows: Sequence, **extra) -> dict:
    return {**DIAG_SCHEMA, **extra, "rows": [r.to_dict() for r in rows]}


@dataclass
class CouplingDiagnostics:
    coupled_fraction: float
    contraction_ratio: float
    sigma_samples: list = field(default_factory=list)
