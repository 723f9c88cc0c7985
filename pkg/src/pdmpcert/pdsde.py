"""Poisson-driven stochastic differential equations with switching.

    dY = a(Y, xi) dt + int sigma(Y-, theta) N(Lambda(dt), dtheta),  Lambda(t) = int_0^t lambda(Y(s)) ds

N is a stationary Poisson point process on [0, inf) x Theta with unit total
rate and mark density h.  The solution is built constructively: between jumps
Y follows the switched flow of ``a``; the n-th jump happens at the time tau_n
where the accumulated intensity Lambda reaches the n-th clock time bar_tau_n,
and moves Y by sigma(Y(tau_n-), eta_n).  The post-jump chain is the PDMP jump
chain with q_theta(y) = y + sigma(y, theta) and mark density p = h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import streams
from .constants import ConstantsLedger, build_ledger
from .errors import EnvelopeError, ModelError
from .flow import evolve_batch, hazard_batch, inverse_hazard_batch
from .kernel import MAX_TRIALS, sample_regime_batch
from .model import MODELS, DeclaredConstants, ModelSpec, lm1d

Array = np.ndarray

# substream tags inside one path
CLOCK, REGIME = 0, 1


@dataclass(frozen=True)
class PdsdeSpec:
    """Coefficients of a switched PDSDE.

    ``drift(y, i)`` and ``amplitude(y, theta)`` are vectorised like the
    ModelSpec callbacks; ``mark_density(theta)`` is the density h of the
    marks on ``theta_interval`` with envelope ``h_max``.
    """

    name: str
    n_regimes: int
    dim: int
    drift: Callable[[Array, Array], Array]
    amplitude: Callable[[Array, Array], Array]
    intensity: Callable[[Array], Array]
    lambda_lo: float
    lambda_hi: float
    switching: Callable[[Array], Array]
    mark_density: Callable[[Array], Array]
    h_max: float
    theta_interval: tuple[float, float]
    alpha: float
    L_sigma: float
    y_star: Array
    L_lambda: float
    L_pi: float
    delta_pi: float
    delta_h: float
    in_domain: Optional[Callable[[Array], Array]] = None
    project: Optional[Callable[[Array], Array]] = None
    probe_box: tuple[float, float] = (-10.0, 10.0)
    # optional closed forms of the drift flow and its hazard; numeric otherwise
    semiflow: Optional[Callable[[Array, Array, Array], Array]] = None
    hazard_exact: Optional[Callable[[Array, Array, Array], Array]] = None
    params: dict = field(default_factory=dict)

    @property
    def alpha_bound(self) -> float:
        """Strict upper bound on alpha under which the induced PDMP certificate applies."""
        return self.lambda_lo - (1.0 + self.L_sigma) * self.lambda_hi

    @property
    def alpha_bound_ok(self) -> bool:
        return self.alpha < self.alpha_bound

    def with_(self, **kw) -> "PdsdeSpec":
        from dataclasses import replace

        return replace(self, **kw)


def mismatch_bound(spec: PdsdeSpec, y: Array) -> Array:
    """2 max_i |a(y, i)|: bounds the drift between two regimes started at y."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = len(y)
    norms = [
        np.linalg.norm(spec.drift(y, np.full(n, i)), axis=1) for i in range(1, spec.n_regimes + 1)
    ]
    return 2.0 * np.max(norms, axis=0)


def to_model_spec(spec: PdsdeSpec) -> ModelSpec:
    """The PDMP whose jump chain is the post-jump chain of the PDSDE."""
    h = spec.mark_density

    def jump_map(theta, y):
        return y + np.asarray(spec.amplitude(y, theta), dtype=float)

    def density(theta, y):
        return np.asarray(h(np.asarray(theta, dtype=float)), dtype=float)

    declared = DeclaredConstants(
        y_star=np.asarray(spec.y_star, dtype=float),
        L=1.0,
        alpha=spec.alpha,
        L_q=1.0 + spec.L_sigma,
        L_lambda=spec.L_lambda,
        L_pi=spec.L_pi,
        L_p=0.0,
        delta_pi=spec.delta_pi,
        delta_p=spec.delta_h,
        mismatch=lambda y: mismatch_bound(spec, y),
        M_L=None,
    )
    return ModelSpec(
        name=spec.name,
        n_regimes=spec.n_regimes,
        dim=spec.dim,
        jump_map=jump_map,
        density=density,
        p_max=spec.h_max,
        intensity=spec.intensity,
        lambda_lo=spec.lambda_lo,
        lambda_hi=spec.lambda_hi,
        switching=spec.switching,
        theta_interval=spec.theta_interval,
        vector_field=spec.drift,
        semiflow=spec.semiflow,
        hazard_exact=spec.hazard_exact,
        in_domain=spec.in_domain,
        project=spec.project,
        probe_box=spec.probe_box,
        declared=declared,
        params=dict(spec.params),
    )


# --------------------------------------------------------------------------
# marked Poisson clock


class _Clock:
    """Sequential generator of (bar_tau increment, mark) pairs."""

    def __init__(self, h, h_max, theta_interval, rng):
        self.h, self.h_max = h, h_max
        self.lo, self.hi = theta_interval
        self.rng = rng

    def mark(self) -> float:
        for _ in range(MAX_TRIALS):
            th = self.rng.uniform(self.lo, self.hi)
            v = float(self.h(np.array([th]))[0])
            if v > self.h_max * (1 + 1e-12):
                raise EnvelopeError(f"mark density {v:.6g} exceeds h_max={self.h_max} at theta={th:.6g}")
            if self.rng.uniform(0.0, self.h_max) <= v:
                return th
        raise EnvelopeError(f"mark rejection sampler exceeded {MAX_TRIALS} trials")

    def next(self) -> tuple[float, float]:
        return float(self.rng.standard_exponential()), self.mark()


@dataclass
class MarkedPoissonProcess:
    bar_tau: Array
    eta: Array
    horizon: float

    def count(self, t: float, A: Optional[tuple[float, float]] = None) -> int:
        """N(t, A) for a mark interval A = [a, b) (all of Theta when None)."""
        sel = self.bar_tau <= t
        if A is not None:
            sel &= (self.eta >= A[0]) & (self.eta < A[1])
        return int(sel.sum())


def gen_poisson(h, horizon: float, rng, h_max: float = 1.0, theta_interval=(0.0, 1.0)) -> MarkedPoissonProcess:
    """Unit-rate marked Poisson process on [0, horizon] with mark density h."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    clock = _Clock(h, h_max, theta_interval, streams.as_generator(rng))
    taus, etas = [], []
    t = 0.0
    while True:
        dt, eta = clock.next()
        t += dt
        if t > horizon:
            break
        taus.append(t)
        etas.append(eta)
    return MarkedPoissonProcess(np.array(taus), np.array(etas), horizon)


def poisson_counts(
    h, horizon: float, n_real: int, seed: int, sets=None, h_max: float = 1.0, theta_interval=(0.0, 1.0)
) -> np.ndarray:
    """Counts N(horizon, A) over ``n_real`` independent realisations.

    Returns shape (n_real, len(sets)); ``sets`` defaults to [Theta].
    """
    sets = [tuple(theta_interval)] if sets is None else [tuple(s) for s in sets]
    out = np.empty((n_real, len(sets)), dtype=np.int64)
    for r in range(n_real):
        mp = gen_poisson(h, horizon, streams.substream(seed, r), h_max, theta_interval)
        for k, A in enumerate(sets):
            hi_closed = A[1] >= theta_interval[1]
            sel = (mp.eta >= A[0]) & ((mp.eta <= A[1]) if hi_closed else (mp.eta < A[1]))
            out[r, k] = int(sel.sum())
    return out


# --------------------------------------------------------------------------
# solution


@dataclass
class PdsdeTrajectory:
    y0: Array
    i0: int
    horizon: float
    tau: Array  # jump times tau_1..tau_n
    bar_tau: Array  # driving clock times
    eta: Array  # marks
    pre: Array  # Y(tau_n-)
    post: Array  # Y(tau_n)
    regimes: Array  # xi_0..xi_n
    Lambda_at_jumps: Array  # Lambda(tau_n) from forward quadrature
    grid: Optional[Array] = None
    y_grid: Optional[Array] = None
    regime_grid: Optional[Array] = None
    Lambda_grid: Optional[Array] = None

    @property
    def n_jumps(self) -> int:
        return len(self.tau)

    def embedded_chain(self) -> tuple[Array, Array]:
        """Post-jump states (Y_n, xi_n), n = 0..n_jumps."""
        return np.vstack([self.y0[None, :], self.post]), self.regimes

    def time_change_error(self) -> float:
        if not self.n_jumps:
            return 0.0
        return float(np.max(np.abs(self.Lambda_at_jumps - self.bar_tau)))

    def jump_sum(self, t: float) -> Array:
        """Cumulative jump displacement over jumps with tau_n <= t."""
        sel = self.tau <= t
        return (self.post[sel] - self.pre[sel]).sum(axis=0)


def solve_pdsde_batch(
    spec: PdsdeSpec,
    y0,
    i0,
    horizon: float = math.inf,
    seed: int = 0,
    max_jumps: Optional[int] = None,
    grid: Optional[float] = None,
    path_offset: int = 0,
) -> list[PdsdeTrajectory]:
    """Solve independent paths together; path k uses substreams (seed, path_offset + k, .)."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if math.isinf(horizon) and max_jumps is None:
        raise ValueError("an infinite horizon needs max_jumps")
    if grid is not None and math.isinf(horizon):
        raise ValueError("grid sampling needs a finite horizon")
    model = to_model_spec(spec)
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None] if spec.dim == 1 else y0[None, :]
    n = len(y0)
    i0 = np.broadcast_to(np.asarray(i0, dtype=np.int64), (n,)).copy()
    clocks = [
        _Clock(spec.mark_density, spec.h_max, spec.theta_interval, streams.substream(seed, path_offset + k, CLOCK))
        for k in range(n)
    ]
    reg_rngs = [streams.substream(seed, path_offset + k, REGIME) for k in range(n)]
    rec = {key: [[] for _ in range(n)] for key in ("tau", "bar", "eta", "pre", "post", "reg", "Lam")}
    y, i = y0.copy(), i0.copy()
    t = np.zeros(n)
    bar = np.zeros(n)
    alive = np.arange(n)
    count = 0
    while alive.size and (max_jumps is None or count < max_jumps):
        draws = [clocks[k].next() for k in alive]
        dbar = np.array([d[0] for d in draws])
        eta = np.array([d[1] for d in draws])
        dt = inverse_hazard_batch(model, y[alive], i[alive], dbar)
        ok = t[alive] + dt <= horizon
        if not ok.any():
            break
        idx = alive[ok]
        dt, dbar, eta = dt[ok], dbar[ok], eta[ok]
        pre = evolve_batch(model, y[idx], i[idx], dt)
        # Lambda increment recomputed forward, independently of the inversion
        dLam = hazard_batch(model, y[idx], i[idx], dt, method="numeric")
        post = pre + np.asarray(spec.amplitude(pre, eta), dtype=float)
        jr = np.array(
            [sample_regime_batch(model, [i[k]], post[m][None, :], reg_rngs[k])[0] for m, k in enumerate(idx)]
        )
        for m, k in enumerate(idx):
            t[k] += dt[m]
            bar[k] += dbar[m]
            prevL = rec["Lam"][k][-1] if rec["Lam"][k] else 0.0
            rec["tau"][k].append(t[k])
            rec["bar"][k].append(bar[k])
            rec["eta"][k].append(eta[m])
            rec["pre"][k].append(pre[m])
            rec["post"][k].append(post[m])
            rec["reg"][k].append(jr[m])
            rec["Lam"][k].append(prevL + dLam[m])
        y[idx], i[idx] = post, jr
        alive = idx
        count += 1

    out = []
    for k in range(n):
        d = spec.dim
        traj = PdsdeTrajectory(
            y0=y0[k].copy(),
            i0=int(i0[k]),
            horizon=horizon,
            tau=np.array(rec["tau"][k]),
            bar_tau=np.array(rec["bar"][k]),
            eta=np.array(rec["eta"][k]),
            pre=np.array(rec["pre"][k]).reshape(-1, d),
            post=np.array(rec["post"][k]).reshape(-1, d),
            regimes=np.array([i0[k]] + rec["reg"][k], dtype=np.int64),
            Lambda_at_jumps=np.array(rec["Lam"][k]),
        )
        if grid is not None:
            _sample_grid(model, traj, grid)
        out.append(traj)
    return out


def _sample_grid(model: ModelSpec, traj: PdsdeTrajectory, grid: float) -> None:
    g = np.arange(0.0, traj.horizon + 0.5 * grid, grid)
    g = g[g <= traj.horizon]
    starts = np.concatenate([[0.0], traj.tau])
    ys, regs = traj.embedded_chain()
    Ls = np.concatenate([[0.0], traj.Lambda_at_jumps])
    seg = np.searchsorted(starts, g, side="right") - 1
    s = g - starts[seg]
    traj.grid = g
    traj.y_grid = evolve_batch(model, ys[seg], regs[seg], s)
    traj.regime_grid = regs[seg]
    traj.Lambda_grid = Ls[seg] + hazard_batch(model, ys[seg], regs[seg], s, method="numeric")


def solve_pdsde(
    spec: PdsdeSpec, y0, i0: int, horizon: float, seed: int, grid: Optional[float] = None, path_id: int = 0
) -> PdsdeTrajectory:
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    return solve_pdsde_batch(spec, y0[None, :], [i0], horizon, seed, grid=grid, path_offset=path_id)[0]


# --------------------------------------------------------------------------
# hypotheses and constants


@dataclass
class DissipativityReport:
    alpha: float
    worst_slack: float
    witness: Optional[dict]
    n_pairs: int
    tolerance: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.worst_slack <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "worst_slack": self.worst_slack,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "n_pairs": self.n_pairs,
            "witness": self.witness,
        }


def check_dissipativity(
    spec: PdsdeSpec, pairs=None, i=None, n_pairs: int = 500, seed: int = 0
) -> DissipativityReport:
    """Worst value of (<a(y1)-a(y2) | y1-y2> - alpha |y1-y2|^2) / |y1-y2|^2 over sampled pairs."""
    if pairs is None:
        rng = streams.as_generator(seed)
        lo, hi = spec.probe_box
        y1 = rng.uniform(lo, hi, size=(n_pairs, spec.dim))
        y2 = rng.uniform(lo, hi, size=(n_pairs, spec.dim))
        if spec.in_domain is not None:
            keep = np.asarray(spec.in_domain(y1), bool) & np.asarray(spec.in_domain(y2), bool)
            y1, y2 = y1[keep], y2[keep]
    else:
        y1 = np.array([np.atleast_1d(p[0]) for p in pairs], dtype=float)
        y2 = np.array([np.atleast_1d(p[1]) for p in pairs], dtype=float)
    regimes = range(1, spec.n_regimes + 1) if i is None else [i]
    worst, wit = -math.inf, None
    for r in regimes:
        ri = np.full(len(y1), r)
        dy = y1 - y2
        nrm2 = np.einsum("nd,nd->n", dy, dy)
        ok = nrm2 > 0
        inner = np.einsum("nd,nd->n", spec.drift(y1, ri) - spec.drift(y2, ri), dy)
        slack = np.where(ok, (inner - spec.alpha * nrm2) / np.where(ok, nrm2, 1.0), -math.inf)
        k = int(np.argmax(slack))
        if slack[k] > worst:
            worst = float(slack[k])
            wit = {"y1": y1[k].tolist(), "y2": y2[k].tolist(), "regime": r}
    return DissipativityReport(spec.alpha, worst, wit, len(y1))


def direct_jump_lipschitz(spec: PdsdeSpec, n_pairs: int = 200, seed: int = 0, nodes: int = 400) -> float:
    """Largest sampled ratio int |q(y1) - q(y2)| h / |y1 - y2| for q = id + sigma."""
    rng = streams.as_generator(seed)
    lo, hi = spec.probe_box
    y1 = rng.uniform(lo, hi, size=(n_pairs, spec.dim))
    y2 = rng.uniform(lo, hi, size=(n_pairs, spec.dim))
    a, b = spec.theta_interval
    th = a + (np.arange(nodes) + 0.5) * (b - a) / nodes
    w = (b - a) / nodes
    T = np.tile(th, n_pairs)
    Y1, Y2 = np.repeat(y1, nodes, axis=0), np.repeat(y2, nodes, axis=0)
    dq = np.linalg.norm(Y1 + spec.amplitude(Y1, T) - Y2 - spec.amplitude(Y2, T), axis=1)
    lhs = (dq * spec.mark_density(T)).reshape(n_pairs, nodes).sum(axis=1) * w
    rho = np.linalg.norm(y1 - y2, axis=1)
    return float(np.max(lhs / rho))


def b_bound_from_coefficients(spec: PdsdeSpec, nodes: int = 400) -> float:
    """lambda_hi (K / lambda_lo^2 + M / lambda_lo) with K = (1 + L_sigma) max_i |a(y*, i)|
    and M = int |sigma(y*, theta)| h(theta) dtheta."""
    ys = np.asarray(spec.y_star, dtype=float)[None, :]
    K = (1.0 + spec.L_sigma) * max(
        float(np.linalg.norm(spec.drift(ys, np.array([i]))[0])) for i in range(1, spec.n_regimes + 1)
    )
    a, b = spec.theta_interval
    th = a + (np.arange(nodes) + 0.5) * (b - a) / nodes
    Y = np.repeat(ys, nodes, axis=0)
    M = float((np.linalg.norm(spec.amplitude(Y, th), axis=1) * spec.mark_density(th)).sum() * (b - a) / nodes)
    return spec.lambda_hi * (K / spec.lambda_lo**2 + M / spec.lambda_lo)


def map_constants(spec: PdsdeSpec, seed: int = 0) -> ConstantsLedger:
    """Ledger of the induced PDMP: L = 1, L_q = 1 + L_sigma, p = h (so L_p = 0, delta_p = delta_h)."""
    model = to_model_spec(spec)
    ledger = build_ledger(model, seed=seed)
    ledger.measured.update(
        {
            "alpha_bound": spec.alpha_bound,
            "alpha_bound_ok": spec.alpha_bound_ok,
            "L_q_mapped": 1.0 + spec.L_sigma,
            "L_q_direct_estimate": direct_jump_lipschitz(spec, seed=seed),
            "b_bound_from_coefficients": b_bound_from_coefficients(spec),
            "dissipativity": check_dissipativity(spec, seed=seed).to_dict(),
        }
    )
    return ledger


# --------------------------------------------------------------------------
# built-in instance


def lm1d_pdsde(decay: float = 1.0, targets=(0.0, 1.0), alpha: Optional[float] = None) -> PdsdeSpec:
    """LM1D written as a PDSDE: a(y, i) = decay (m_i - y), sigma(y, theta) = (theta - 1) y,
    theta uniform on [0, 1], lambda(y) = 1 + 1/(1 + y), switching 1/2.

    ``alpha`` is the declared dissipativity exponent (default -decay, which is tight).
    """
    base = lm1d(decay=decay, targets=targets)
    kappa = float(decay)
    m = np.asarray(targets, dtype=float)

    def drift(y, i):
        return kappa * (m[np.asarray(i) - 1][:, None] - y)

    def amplitude(y, theta):
        return (np.asarray(theta, dtype=float)[:, None] - 1.0) * y

    return PdsdeSpec(
        name="lm1d_pdsde",
        n_regimes=2,
        dim=1,
        drift=drift,
        amplitude=amplitude,
        intensity=base.intensity,
        lambda_lo=base.lambda_lo,
        lambda_hi=base.lambda_hi,
        switching=base.switching,
        mark_density=lambda th: np.ones(np.shape(th)),
        h_max=1.0,
        theta_interval=(0.0, 1.0),
        alpha=-kappa if alpha is None else float(alpha),
        L_sigma=0.5,
        y_star=np.zeros(1),
        L_lambda=1.0,
        L_pi=0.0,
        delta_pi=1.0,
        delta_h=1.0,
        in_domain=lambda y: y[:, 0] >= 0.0,
        project=lambda y: np.maximum(y, 0.0),
        probe_box=(0.0, 20.0),
        semiflow=base.semiflow,
        hazard_exact=base.hazard_exact,
        params={"decay": kappa, "targets": m.tolist(), "alpha": -kappa if alpha is None else float(alpha)},
    )


PDSDE_MODELS: dict[str, Callable[..., PdsdeSpec]] = {"lm1d_pdsde": lm1d_pdsde}


def build_pdsde(name: str, **params) -> PdsdeSpec:
    try:
        factory = PDSDE_MODELS[name]
    except KeyError:
        raise ModelError(f"unknown PDSDE model {name!r}; known: {sorted(PDSDE_MODELS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ModelError(f"bad parameters for PDSDE model {name!r}: {exc}") from None


MODELS["lm1d_pdsde"] = lambda **kw: to_model_spec(lm1d_pdsde(**kw))
