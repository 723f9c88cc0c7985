"""Exact sampling of the jump-chain kernel P and of PDMP trajectories.

One jump from (y, i): wait dtau = H(E, (y, i)) with E ~ Exp(1), flow to
z = S_i(dtau, y), draw theta with density p(., z), jump to q_theta(z), then
draw the new regime j with probability pi_ij(q_theta(z)).  The three draws use
independent substreams of the step's generator.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .errors import EnvelopeError, ModelError
from .flow import evolve_batch, inverse_hazard_batch
from .model import ModelSpec
from .space import StatePoint

MAX_TRIALS = 10**6
ROW_TOL = 1e-9
BLOCK = 1024


def default_threads() -> int:
    return max(1, int(os.environ.get("PDMPCERT_THREADS", "1")))


# --------------------------------------------------------------------------
# elementary draws


def sample_wait_batch(spec: ModelSpec, y, i, rng) -> np.ndarray:
    rng = streams.as_generator(rng)
    e = rng.standard_exponential(len(i))
    return inverse_hazard_batch(spec, y, i, e)


def sample_wait(spec: ModelSpec, x: StatePoint, rng) -> float:
    return float(sample_wait_batch(spec, x.y[None, :], np.array([x.i]), rng)[0])


def sample_wait_thinning_batch(spec: ModelSpec, y, i, rng) -> np.ndarray:
    """Waiting times by thinning a rate-lambda_hi Poisson clock (cross-check path)."""
    rng = streams.as_generator(rng)
    n = len(i)
    t = np.zeros(n)
    out = np.full(n, np.nan)
    todo = np.arange(n)
    while todo.size:
        t[todo] += rng.standard_exponential(todo.size) / spec.lambda_hi
        z = evolve_batch(spec, y[todo], i[todo], t[todo])
        keep = rng.uniform(size=todo.size) * spec.lambda_hi <= spec.intensity(z)
        out[todo[keep]] = t[todo[keep]]
        todo = todo[~keep]
    return out


def sample_theta_batch(spec: ModelSpec, y_pre, rng, max_trials: int = MAX_TRIALS) -> np.ndarray:
    """Marks with density p(., y_pre) by rejection against the uniform envelope p_max."""
    rng = streams.as_generator(rng)
    y_pre = np.asarray(y_pre, dtype=float)
    n = y_pre.shape[0]
    lo, hi = spec.theta_interval
    out = np.empty(n)
    todo = np.arange(n)
    for _ in range(max_trials):
        if not todo.size:
            return out
        th = rng.uniform(lo, hi, size=todo.size)
        p = np.asarray(spec.density(th, y_pre[todo]), dtype=float)
        if np.any(p > spec.p_max * (1 + 1e-12)):
            k = int(np.argmax(p))
            raise EnvelopeError(
                f"density {p[k]:.6g} exceeds envelope p_max={spec.p_max} "
                f"at theta={th[k]:.6g}, y={y_pre[todo[k]].tolist()}"
            )
        ok = rng.uniform(0.0, spec.p_max, size=todo.size) <= p
        out[todo[ok]] = th[ok]
        todo = todo[~ok]
    if todo.size:
        raise EnvelopeError(f"mark rejection sampler exceeded {max_trials} trials")
    return out


def sample_theta(spec: ModelSpec, y_prejump, rng) -> float:
    y = np.atleast_1d(np.asarray(y_prejump, dtype=float))
    return float(sample_theta_batch(spec, y[None, :], rng)[0])


def sample_regime_batch(spec: ModelSpec, i, y_post, rng) -> np.ndarray:
    rng = streams.as_generator(rng)
    i = np.asarray(i, dtype=np.int64)
    rows = spec.switch_rows(i, np.asarray(y_post, dtype=float))
    dev = np.abs(rows.sum(axis=1) - 1.0)
    if dev.size and dev.max() > ROW_TOL:
        k = int(np.argmax(dev))
        raise ModelError(f"switching row {rows[k].tolist()} sums to {rows[k].sum():.12g}")
    cdf = np.cumsum(rows, axis=1)
    u = rng.uniform(size=len(i))
    j = (u[:, None] >= cdf[:, :-1]).sum(axis=1) + 1
    return j.astype(np.int64)


def sample_regime(spec: ModelSpec, i: int, y_post, rng) -> int:
    y = np.atleast_1d(np.asarray(y_post, dtype=float))
    return int(sample_regime_batch(spec, [i], y[None, :], rng)[0])


# --------------------------------------------------------------------------
# one jump


@dataclass(frozen=True)
class JumpEvent:
    wait: float
    theta: float
    next_regime: int
    pre_jump_y: np.ndarray
    post_jump: StatePoint


@dataclass
class JumpBatch:
    wait: np.ndarray
    theta: np.ndarray
    regime: np.ndarray
    pre_y: np.ndarray
    post_y: np.ndarray

    def event(self, k: int) -> JumpEvent:
        return JumpEvent(
            float(self.wait[k]),
            float(self.theta[k]),
            int(self.regime[k]),
            self.pre_y[k].copy(),
            StatePoint(self.post_y[k], int(self.regime[k])),
        )


def step_batch(spec: ModelSpec, y, i, rng) -> JumpBatch:
    """One kernel step for every state of the batch."""
    rng = streams.as_generator(rng)
    y = np.asarray(y, dtype=float)
    i = np.asarray(i, dtype=np.int64)
    r_wait, r_mark, r_reg = streams.split(rng, 3)
    wait = sample_wait_batch(spec, y, i, r_wait)
    pre = evolve_batch(spec, y, i, wait)
    theta = sample_theta_batch(spec, pre, r_mark)
    post = np.asarray(spec.jump_map(theta, pre), dtype=float)
    j = sample_regime_batch(spec, i, post, r_reg)
    return JumpBatch(wait, theta, j, pre, post)


def step(spec: ModelSpec, x: StatePoint, rng) -> JumpEvent:
    return step_batch(spec, x.y[None, :], np.array([x.i]), rng).event(0)


# --------------------------------------------------------------------------
# chains


@dataclass
class ChainPath:
    """Post-jump states (Y_n, xi_n) with jump times tau_n; replayable from (seed, chain_id)."""

    states: list[StatePoint]
    times: np.ndarray
    seed: int
    chain_id: int = 0
    events: list[JumpEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def y(self) -> np.ndarray:
        return np.stack([s.y for s in self.states])

    @property
    def regimes(self) -> np.ndarray:
        return np.array([s.i for s in self.states])


def run_chain(spec: ModelSpec, x0: StatePoint, n: int, seed: int, chain_id: int = 0) -> ChainPath:
    """n jumps from x0; step k uses substream (seed, chain_id, k)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    states = [x0]
    times = [0.0]
    events = []
    cur = x0
    for k in range(n):
        ev = step(spec, cur, streams.substream(seed, chain_id, k))
        events.append(ev)
        cur = ev.post_jump
        states.append(cur)
        times.append(times[-1] + ev.wait)
    return ChainPath(states, np.array(times), seed, chain_id, events)


def replay_step(spec: ModelSpec, path: ChainPath, k: int) -> JumpEvent:
    """Re-draw jump k of a recorded chain from its seed record."""
    return step(spec, path.states[k], streams.substream(path.seed, path.chain_id, k))


@dataclass
class Ensemble:
    """States of many chains at every step: y (steps+1, n, d), regimes (steps+1, n)."""

    y: np.ndarray
    regimes: np.ndarray
    times: np.ndarray
    seed: int
    stream: int

    @property
    def n_chains(self) -> int:
        return self.y.shape[1]


def _blocks(n: int, block: int):
    return [(b, slice(b * block, min(n, (b + 1) * block))) for b in range((n + block - 1) // block)]


def _map_blocks(fn, blocks, threads):
    if threads <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def run_ensemble(
    spec: ModelSpec,
    y0,
    i0,
    n_steps: int,
    seed: int,
    stream: int = 0,
    block: int = BLOCK,
    threads: int | None = None,
) -> Ensemble:
    """Independent chains started at ``(y0[k], i0[k])``.

    Chains are cut into fixed blocks; block b at step k draws from substream
    (seed, stream, b, k), so results do not depend on ``threads``.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None]
    i0 = np.broadcast_to(np.asarray(i0, dtype=np.int64), (y0.shape[0],))
    n = y0.shape[0]
    threads = default_threads() if threads is None else threads

    def work(item):
        b, sl = item
        ys = np.empty((n_steps + 1,) + y0[sl].shape)
        rs = np.empty((n_steps + 1, ys.shape[1]), dtype=np.int64)
        ts = np.zeros((n_steps + 1, ys.shape[1]))
        ys[0], rs[0] = y0[sl], i0[sl]
        for k in range(n_steps):
            jb = step_batch(spec, ys[k], rs[k], streams.substream(seed, stream, b, k))
            ys[k + 1], rs[k + 1] = jb.post_y, jb.regime
            ts[k + 1] = ts[k] + jb.wait
        return ys, rs, ts

    parts = _map_blocks(work, _blocks(n, block), threads)
    return Ensemble(
        np.concatenate([p[0] for p in parts], axis=1),
        np.concatenate([p[1] for p in parts], axis=1),
        np.concatenate([p[2] for p in parts], axis=1),
        seed,
        stream,
    )


# --------------------------------------------------------------------------
# continuous-time paths


@dataclass
class PdmpPath:
    grid: np.ndarray
    y: np.ndarray
    regimes: np.ndarray
    chain: ChainPath

    @property
    def jump_times(self) -> np.ndarray:
        return self.chain.times[1:]


def run_pdmp_path(
    spec: ModelSpec, x0: StatePoint, horizon: float, grid: float, seed: int, chain_id: int = 0
) -> PdmpPath:
    """Piecewise-deterministic path on [0, horizon] sampled every ``grid``.

    Jumps use the same substreams as ``run_chain``, so the recorded jump chain
    agrees with ``run_chain(spec, x0, n, seed, chain_id)``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not grid > 0:
        raise ValueError("grid step must be positive")
    states, times, events = [x0], [0.0], []
    cur = x0
    k = 0
    while True:
        ev = step(spec, cur, streams.substream(seed, chain_id, k))
        if times[-1] + ev.wait > horizon:
            break
        events.append(ev)
        cur = ev.post_jump
        states.append(cur)
        times.append(times[-1] + ev.wait)
        k += 1
    chain = ChainPath(states, np.array(times), seed, chain_id, events)
    g = np.arange(0.0, horizon + 0.5 * grid, grid)
    g = g[g <= horizon]
    seg = np.searchsorted(chain.times, g, side="right") - 1
    ys = chain.y[seg]
    rs = chain.regimes[seg]
    yg = evolve_batch(spec, ys, rs, g - chain.times[seg])
    return PdmpPath(g, yg, rs, chain)


def jump_counts(
    spec: ModelSpec, x0: StatePoint, horizon: float, n_runs: int, seed: int, stream: int = 0
) -> np.ndarray:
    """Number of jumps in [0, horizon] for ``n_runs`` independent paths from x0."""
    counts = np.zeros(n_runs, dtype=np.int64)
    for b, sl in _blocks(n_runs, BLOCK):
        m = sl.stop - sl.start
        y = np.repeat(x0.y[None, :], m, axis=0)
        i = np.full(m, x0.i)
        t = np.zeros(m)
        alive = np.arange(m)
        k = 0
        while alive.size:
            jb = step_batch(spec, y[alive], i[alive], streams.substream(seed, stream, b, k))
            t[alive] += jb.wait
            ok = t[alive] <= horizon
            counts[sl.start + alive[ok]] += 1
            y[alive], i[alive] = jb.post_y, jb.regime
            alive = alive[ok]
            k += 1
    return counts
