"""Constants of the ergodicity argument and numerical spot checks of its hypotheses.

The ledger keeps two kinds of numbers apart: *declared* constants supplied by
the model author (Lipschitz factors, overlap bounds, the flow exponent) and
*derived* ones computed from them (drift constants, the metric weight lower
bound, the coupling masses).  Spot checks only ever report measured values;
they never overwrite a declared constant.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ModelError
from .flow import evolve_batch, t_max
from .model import DeclaredConstants, ModelSpec, sample_states
from .streams import as_generator

SPOT_TOL = 1e-6


def _gauss(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _panel_nodes(t_end: float, panels: int, order: int):
    edges = np.linspace(0.0, t_end, panels + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = _gauss(lo, hi, order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _declared(spec: ModelSpec) -> DeclaredConstants:
    if spec.declared is None:
        raise ModelError(f"model {spec.name} declares no constants")
    return spec.declared


# --------------------------------------------------------------------------
# drift constants


@dataclass
class DriftConstants:
    a: float
    b: float
    b_grid_size: int
    b_argmax: list
    b_is_estimate: bool = True


def drift_integrand_b(spec: ModelSpec, y_star, y, i: int, t_nodes, t_w, th_nodes, th_w) -> float:
    """int_0^tmax e^{-lambda_lo t} int_Theta |q(S_i(t,y*)) - y*| p(theta, S_i(t,y)) dtheta dt."""
    nt, nth = len(t_nodes), len(th_nodes)
    ys = np.repeat(np.asarray(y_star, dtype=float)[None, :], nt, axis=0)
    yy = np.repeat(np.asarray(y, dtype=float)[None, :], nt, axis=0)
    ii = np.full(nt, i)
    zs = evolve_batch(spec, ys, ii, t_nodes)
    zy = evolve_batch(spec, yy, ii, t_nodes)
    th = np.tile(th_nodes, nt)
    post = np.asarray(spec.jump_map(th, np.repeat(zs, nth, axis=0)), dtype=float)
    dist = np.linalg.norm(post - y_star, axis=1)
    dens = np.asarray(spec.density(th, np.repeat(zy, nth, axis=0)), dtype=float)
    inner = (dist * dens).reshape(nt, nth) @ th_w
    return float(np.sum(t_w * np.exp(-spec.lambda_lo * t_nodes) * inner))


def compute_ab(
    spec: ModelSpec,
    y_star=None,
    sup_grid=None,
    panels: int = 64,
    order: int = 16,
    theta_order: int = 64,
    refine: int = 32,
    seed: int = 0,
) -> DriftConstants:
    """Drift constants (a, b) of the Lyapunov bound PV <= aV + b.

    ``a`` is closed form.  ``b`` is a sup over a finite set of starting points
    (``sup_grid`` plus ``refine`` random perturbations of the best one) of a
    nested Gauss-Legendre quadrature, so it is an estimate of the true sup.
    """
    d = _declared(spec)
    y_star = d.y_star if y_star is None else np.atleast_1d(np.asarray(y_star, dtype=float))
    a = spec.lambda_hi * d.L * d.L_q / (spec.lambda_lo - d.alpha) if spec.lambda_lo > d.alpha else math.inf
    if sup_grid is None:
        lo, hi = spec.probe_box
        g = np.linspace(lo, hi, 21)
        sup_grid = np.stack(np.meshgrid(*([g] * spec.dim), indexing="ij"), axis=-1).reshape(-1, spec.dim)
        if len(sup_grid) > 441:
            sup_grid = sample_states(spec, 441, as_generator(seed))[0]
    grid = np.asarray(sup_grid, dtype=float).reshape(-1, spec.dim)
    grid = grid[spec.domain_ok(grid)]
    if not len(grid):
        raise ValueError("sup grid has no point inside the domain")
    t_nodes, t_w = _panel_nodes(t_max(spec), panels, order)
    th_nodes, th_w = _gauss(*spec.theta_interval, theta_order)

    def value(y):
        return max(
            drift_integrand_b(spec, y_star, y, i, t_nodes, t_w, th_nodes, th_w)
            for i in range(1, spec.n_regimes + 1)
        )

    vals = np.array([value(y) for y in grid])
    best = int(np.argmax(vals))
    y_best, v_best = grid[best], vals[best]
    rng = as_generator(seed)
    span = (spec.probe_box[1] - spec.probe_box[0]) / 20.0
    for _ in range(refine):
        cand = y_best + rng.normal(scale=span, size=spec.dim)
        if not spec.domain_ok(cand[None, :])[0]:
            continue
        v = value(cand)
        if v > v_best:
            y_best, v_best = cand, v
    return DriftConstants(float(a), float(spec.lambda_hi * v_best), len(grid) + refine, y_best.tolist())


# --------------------------------------------------------------------------
# metric weight, coupling constants


def select_T(lambda_lo: float, lambda_hi: float, alpha: float) -> tuple[float, float]:
    """Unit-length (or shorter) interval on which e^{alpha t} <= lambda_hi/(lambda_lo-alpha)."""
    kappa = lambda_hi / (lambda_lo - alpha)
    if alpha < 0:
        t0 = max(0.0, math.log(kappa) / alpha)
        return (t0, t0 + 1.0)
    if alpha == 0:
        if kappa >= 1:
            return (0.0, 1.0)
        raise ModelError("no admissible T: e^{0} exceeds lambda_hi/(lambda_lo - alpha)")
    if kappa > 1:
        return (0.0, min(1.0, math.log(kappa) / alpha))
    raise ModelError("no admissible T: e^{alpha t} > lambda_hi/(lambda_lo - alpha) for all t > 0")


def c_lower_bound(lambda_lo, lambda_hi, alpha, L, M_L, T) -> float:
    gap = lambda_lo - alpha
    lead = max(lambda_hi / gap, math.exp(T[1]), 1.0 / lambda_lo)
    return lead * gap * M_L / (lambda_lo * L) + 2.0 * gap / (lambda_lo * L)


def compute_c_min(spec: ModelSpec, M_L: float) -> tuple[float, tuple[float, float]]:
    d = _declared(spec)
    if not spec.lambda_lo > d.alpha:
        raise ModelError("alpha must be below lambda_lo")
    T = select_T(spec.lambda_lo, spec.lambda_hi, d.alpha)
    return c_lower_bound(spec.lambda_lo, spec.lambda_hi, d.alpha, d.L, M_L, T), T


def b4_delta(delta_pi, delta_p, lambda_lo, lambda_hi, T) -> float:
    """delta_pi * delta_p * int_T lambda_lo e^{-lambda_hi t} dt."""
    return delta_pi * delta_p * lambda_lo / lambda_hi * (math.exp(-lambda_hi * T[0]) - math.exp(-lambda_hi * T[1]))


def compute_b5_l(lambda_lo, lambda_hi, alpha, L, L_lambda, L_p, L_q, L_pi) -> float:
    gap = lambda_lo - alpha
    return 2 * lambda_hi * L * L_lambda / (lambda_lo * gap) + lambda_hi * L * (L_p + L_q * L_pi + 1) / gap


def main_inequality_ok(L, L_q, lambda_hi, alpha, lambda_lo) -> bool:
    return L * L_q * lambda_hi + alpha < lambda_lo


def compute_M_L(spec: ModelSpec, R: float, n: int = 2001) -> float:
    """sup of the regime-mismatch bound over the ball |y - y*| < R."""
    d = _declared(spec)
    if d.M_L is not None:
        return float(d.M_L)
    if d.mismatch is None:
        raise ModelError("model declares neither M_L nor a mismatch function")
    if not math.isfinite(R):
        raise ModelError("M_L needs a finite radius R")
    rng = as_generator(12345)
    dirs = rng.normal(size=(n, spec.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = d.y_star + dirs * R * rng.uniform(size=(n, 1)) ** (1.0 / spec.dim)
    y = y[spec.domain_ok(y)]
    return float(np.max(d.mismatch(y), initial=0.0))


# --------------------------------------------------------------------------
# ledger


@dataclass
class ConstantsLedger:
    model: str
    declared: dict
    lambda_lo: float
    lambda_hi: float
    a: float
    b: float
    R: float
    q: float
    M_L: float
    c_min: float
    T_interval: tuple[float, float]
    b4_delta: float
    b5_l: float
    b5_nu: float
    main_inequality_ok: bool
    b_is_estimate: bool = True
    measured: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["declared"][name]
        except KeyError:
            raise AttributeError(name) from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["T_interval"] = list(self.T_interval)
        return out


def build_ledger(spec: ModelSpec, sup_grid=None, seed: int = 0, M_L: Optional[float] = None) -> ConstantsLedger:
    d = _declared(spec)
    ab = compute_ab(spec, sup_grid=sup_grid, seed=seed)
    R = 4 * ab.b / (1 - ab.a) if ab.a < 1 else math.inf
    if M_L is None:
        # no finite Lyapunov ball when a >= 1; the coupling constant degenerates
        M_L = compute_M_L(spec, R) if math.isfinite(R) else math.inf
    c_min, T = compute_c_min(spec, float(M_L))
    declared = {
        "y_star": np.asarray(d.y_star).tolist(),
        "L": d.L,
        "alpha": d.alpha,
        "L_q": d.L_q,
        "L_lambda": d.L_lambda,
        "L_pi": d.L_pi,
        "L_p": d.L_p,
        "delta_pi": d.delta_pi,
        "delta_p": d.delta_p,
    }
    return ConstantsLedger(
        model=spec.name,
        declared=declared,
        lambda_lo=spec.lambda_lo,
        lambda_hi=spec.lambda_hi,
        a=ab.a,
        b=ab.b,
        R=R,
        q=ab.a,
        M_L=M_L,
        c_min=c_min,
        T_interval=T,
        b4_delta=b4_delta(d.delta_pi, d.delta_p, spec.lambda_lo, spec.lambda_hi, T),
        b5_l=compute_b5_l(spec.lambda_lo, spec.lambda_hi, d.alpha, d.L, d.L_lambda, d.L_p, d.L_q, d.L_pi),
        b5_nu=1.0,
        main_inequality_ok=main_inequality_ok(d.L, d.L_q, spec.lambda_hi, d.alpha, spec.lambda_lo),
        b_is_estimate=True,
        measured={"b_grid_size": ab.b_grid_size, "b_argmax": ab.b_argmax},
    )


# --------------------------------------------------------------------------
# spot checks of the standing hypotheses


@dataclass
class ConditionCheck:
    name: str
    worst_lhs: float
    worst_rhs: float
    worst_excess: float
    witness: Optional[dict]
    tolerance: float = SPOT_TOL

    @property
    def passed(self) -> bool:
        return self.worst_excess <= self.tolerance

    @property
    def worst_ratio(self) -> float:
        if self.worst_rhs == 0:
            return 0.0 if self.worst_lhs == 0 else math.inf
        return self.worst_lhs / self.worst_rhs

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "worst_lhs": self.worst_lhs,
            "worst_rhs": self.worst_rhs,
            "worst_ratio": self.worst_ratio,
            "worst_excess": self.worst_excess,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "witness": self.witness,
        }


@dataclass
class SpotCheckReport:
    """Falsification test of the hypotheses on sampled inputs; passing proves nothing."""

    model: str
    n_pairs: int
    checks: dict[str, ConditionCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "n_pairs": self.n_pairs,
            "kind": "falsification test, not a proof",
            "passed": self.passed,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }


def _upper(name, lhs, rhs, **wit) -> ConditionCheck:
    """Check lhs <= rhs elementwise; record the worst excess."""
    ex = lhs - rhs
    k = int(np.argmax(ex))
    w = {key: np.asarray(v)[k].tolist() for key, v in wit.items()}
    return ConditionCheck(name, float(lhs[k]), float(rhs[k]), float(ex[k]), w)


def _lower(name, lhs, rhs, **wit) -> ConditionCheck:
    """Check lhs >= rhs elementwise."""
    ex = rhs - lhs
    k = int(np.argmax(ex))
    w = {key: np.asarray(v)[k].tolist() for key, v in wit.items()}
    return ConditionCheck(name, float(lhs[k]), float(rhs[k]), float(ex[k]), w)


def spotcheck_A_conditions(
    spec: ModelSpec,
    n_pairs: int = 200,
    seed: int = 0,
    t_grid=None,
    theta_nodes: int = 400,
    tol: float = SPOT_TOL,
) -> SpotCheckReport:
    d = _declared(spec)
    rng = as_generator(seed)
    y1, i1 = sample_states(spec, n_pairs, rng)
    y2, i2 = sample_states(spec, n_pairs, rng)
    rho = np.linalg.norm(y1 - y2, axis=1)
    lo, hi = spec.theta_interval
    # midpoint rule: set-restricted integrals are discontinuous in theta
    th = lo + (np.arange(theta_nodes) + 0.5) * (hi - lo) / theta_nodes
    wth = (hi - lo) / theta_nodes
    nth = theta_nodes
    rep = lambda a: np.repeat(a, nth, axis=0)  # noqa: E731
    tt = np.tile(th, n_pairs)
    checks: dict[str, ConditionCheck] = {}

    # A1: finiteness of the drift integral from each sampled start
    t_nodes, t_w = _panel_nodes(t_max(spec), 32, 8)
    g_nodes, g_w = _gauss(lo, hi, 32)
    m = min(n_pairs, 20)
    vals = np.array(
        [
            drift_integrand_b(spec, d.y_star, y1[k], int(i1[k]), t_nodes, t_w, g_nodes, g_w)
            for k in range(m)
        ]
    )
    finite = np.isfinite(vals)
    checks["A1"] = ConditionCheck(
        "A1", float(np.max(vals)), math.inf, 0.0 if finite.all() else math.inf, {"max_integral": float(np.max(vals))}
    )

    # A2: flow comparison, different regimes allowed
    tg = np.linspace(0.0, 5.0, 26) if t_grid is None else np.asarray(t_grid, dtype=float)
    nt = len(tg)
    T = np.tile(tg, n_pairs)
    Y1, Y2 = np.repeat(y1, nt, axis=0), np.repeat(y2, nt, axis=0)
    I1, I2 = np.repeat(i1, nt), np.repeat(i2, nt)
    lhs = np.linalg.norm(evolve_batch(spec, Y1, I1, T) - evolve_batch(spec, Y2, I2, T), axis=1)
    mis = np.zeros(len(T)) if d.mismatch is None else np.asarray(d.mismatch(Y2), dtype=float)
    rhs = d.L * np.exp(d.alpha * T) * np.repeat(rho, nt) + T * mis * (I1 != I2)
    checks["A2"] = _upper("A2", lhs, rhs, y1=Y1, i1=I1, y2=Y2, i2=I2, t=T)

    # A3: mean Lipschitz bound of the jump map
    q1 = np.asarray(spec.jump_map(tt, rep(y1)), dtype=float)
    q2 = np.asarray(spec.jump_map(tt, rep(y2)), dtype=float)
    p1 = np.asarray(spec.density(tt, rep(y1)), dtype=float)
    p2 = np.asarray(spec.density(tt, rep(y2)), dtype=float)
    dq = np.linalg.norm(q1 - q2, axis=1)
    lhs = (dq * p1).reshape(n_pairs, nth).sum(axis=1) * wth
    checks["A3"] = _upper("A3", lhs, d.L_q * rho, y1=y1, y2=y2)

    # A4: intensity Lipschitz
    lhs = np.abs(spec.intensity(y1) - spec.intensity(y2))
    checks["A4"] = _upper("A4", lhs, d.L_lambda * rho, y1=y1, y2=y2)

    # A5: switching rows and densities
    P1, P2 = np.asarray(spec.switching(y1)), np.asarray(spec.switching(y2))
    lhs = np.abs(P1 - P2).sum(axis=2).max(axis=1)
    checks["A5_pi"] = _upper("A5_pi", lhs, d.L_pi * rho, y1=y1, y2=y2)
    lhs = np.abs(p1 - p2).reshape(n_pairs, nth).sum(axis=1) * wth
    checks["A5_p"] = _upper("A5_p", lhs, d.L_p * rho, y1=y1, y2=y2)

    # A6: overlaps
    rows1 = P1[np.arange(n_pairs), i1 - 1]
    rows2 = P2[np.arange(n_pairs), i2 - 1]
    lhs = np.minimum(rows1, rows2).sum(axis=1)
    checks["A6_pi"] = _lower("A6_pi", lhs, np.full(n_pairs, d.delta_pi), y1=y1, i1=i1, y2=y2, i2=i2)
    inside = dq <= np.repeat(rho, nth) * (1 + 1e-12)
    lhs = (np.minimum(p1, p2) * inside).reshape(n_pairs, nth).sum(axis=1) * wth
    checks["A6_p"] = _lower("A6_p", lhs, np.full(n_pairs, d.delta_p), y1=y1, y2=y2)
    for chk in checks.values():
        chk.tolerance = tol
    return SpotCheckReport(spec.name, n_pairs, checks)
