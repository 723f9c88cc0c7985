"""Fortet-Mourier (dual bounded-Lipschitz) distance between finitely supported measures.

For measures on a pooled support x_1..x_m with signed weights c = mu - nu,

    ||mu - nu||_FM = max sum_k c_k f_k  s.t.  |f_k| <= 1,  f_a - f_b <= rho_c(x_a, x_b).

Two families of constraints are dropped before solving because other
constraints imply them: pairs with rho_c >= 2 (the box already gives
|f_a - f_b| <= 2) and pairs (a, b) with an intermediate point k satisfying
rho_c(a, k) + rho_c(k, b) <= rho_c(a, b).  Both reductions leave the feasible
set unchanged.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import streams
from .errors import SolverError
from .simplex import LPResult, certificate_gap, primal_violation, solve_bounded_lp
from .space import HybridMetric, StatePoint, pairwise_rho_c, stack_states

GAP_TOL = 1e-9
MAX_SUPPORT = 600
SIMPLEX_MAX_POINTS = 64


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Probability measure with finitely many distinct atoms (duplicates merged)."""

    y: np.ndarray
    i: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        i = np.asarray(self.i, dtype=np.int64)
        w = np.asarray(self.w, dtype=float)
        if not (len(y) == len(i) == len(w)) or len(w) == 0:
            raise ValueError("support and weights must be non-empty and of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        key = np.column_stack([i.astype(float), y])
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        merged = np.bincount(inv, weights=w, minlength=len(uniq))
        keep = merged > 0
        object.__setattr__(self, "y", uniq[keep, 1:])
        object.__setattr__(self, "i", uniq[keep, 0].astype(np.int64))
        object.__setattr__(self, "w", merged[keep])

    @classmethod
    def from_points(cls, points: Sequence[StatePoint], weights=None) -> "EmpiricalMeasure":
        y, i = stack_states(points)
        w = np.full(len(i), 1.0 / len(i)) if weights is None else np.asarray(weights, dtype=float)
        return cls(y, i, w)

    @classmethod
    def uniform(cls, y, i) -> "EmpiricalMeasure":
        y = np.asarray(y, dtype=float)
        n = len(y)
        return cls(y, np.broadcast_to(np.asarray(i), (n,)), np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x: StatePoint) -> "EmpiricalMeasure":
        return cls(x.y[None, :], [x.i], [1.0])

    @property
    def support(self) -> list[StatePoint]:
        return [StatePoint(self.y[k], int(self.i[k])) for k in range(len(self.w))]

    def __len__(self) -> int:
        return len(self.w)

    def resample(self, k: int, rng) -> "EmpiricalMeasure":
        """Empirical measure of k i.i.d. draws from this measure."""
        rng = streams.as_generator(rng)
        idx = rng.choice(len(self.w), size=k, p=self.w)
        return EmpiricalMeasure(self.y[idx], self.i[idx], np.full(k, 1.0 / k))


def empirical_from_chains(paths, n: int) -> EmpiricalMeasure:
    """Uniform empirical law of the n-th states of a list of chain paths."""
    paths = list(paths)
    if not paths:
        raise ValueError("no paths given")
    short = [k for k, p in enumerate(paths) if len(p) <= n]
    if short:
        raise ValueError(f"paths {short[:5]} have no step {n}")
    return EmpiricalMeasure.from_points([p.states[n] for p in paths])


def empirical_from_ensemble(ens, n: int) -> EmpiricalMeasure:
    if not 0 <= n < ens.y.shape[0]:
        raise ValueError(f"ensemble has no step {n}")
    return EmpiricalMeasure.uniform(ens.y[n], ens.regimes[n])


# --------------------------------------------------------------------------
# problem set-up


@dataclass
class FMProblem:
    y: np.ndarray
    i: np.ndarray
    c: np.ndarray
    weight: float

    @property
    def m(self) -> int:
        return len(self.c)

    @property
    def D(self) -> np.ndarray:
        return pairwise_rho_c(self.weight, self.y, self.i)


def pooled_problem(mu: EmpiricalMeasure, nu: EmpiricalMeasure, metric: HybridMetric) -> FMProblem:
    if mu.y.shape[1] != nu.y.shape[1]:
        raise ValueError("measures live in spaces of different dimension")
    key = np.vstack(
        [np.column_stack([mu.i.astype(float), mu.y]), np.column_stack([nu.i.astype(float), nu.y])]
    )
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    c = np.bincount(inv[: len(mu)], weights=mu.w, minlength=len(uniq)) - np.bincount(
        inv[len(mu):], weights=nu.w, minlength=len(uniq)
    )
    return FMProblem(uniq[:, 1:], uniq[:, 0].astype(np.int64), c, metric.c)


def essential_pairs(D: np.ndarray) -> np.ndarray:
    """Ordered pairs (a, b), a != b, whose constraint is not implied by others."""
    m = len(D)
    need = (D < 2.0) & ~np.eye(m, dtype=bool)
    for a in range(m):
        bs = np.nonzero(need[a])[0]
        if not bs.size:
            continue
        S = D[a][:, None] + D[:, bs]
        S[a, :] = np.inf
        S[bs, np.arange(bs.size)] = np.inf
        implied = S.min(axis=0) <= D[a, bs]
        need[a, bs[implied]] = False
    return np.argwhere(need)


def _essential_line(prob: FMProblem) -> np.ndarray:
    """essential_pairs specialised to the line with c >= 2: regimes decouple and
    only neighbours in sorted order survive."""
    out = []
    for reg in np.unique(prob.i):
        idx = np.nonzero(prob.i == reg)[0]
        idx = idx[np.argsort(prob.y[idx, 0], kind="stable")]
        a, b = idx[:-1], idx[1:]
        close = (prob.y[b, 0] - prob.y[a, 0]) < 2.0
        a, b = a[close], b[close]
        out.append(np.column_stack([a, b]))
        out.append(np.column_stack([b, a]))
    return np.vstack(out) if out else np.zeros((0, 2), dtype=np.int64)


def _pairs_for(prob: FMProblem) -> np.ndarray:
    if prob.y.shape[1] == 1 and prob.weight >= 2.0:
        return _essential_line(prob)
    return essential_pairs(prob.D)


@dataclass
class FMResult:
    value: float
    f: np.ndarray
    gap: float
    method: str
    m: int
    n_constraints: int
    subsampled: bool = False
    subsample_seed: Optional[int] = None


def _solve_highs(c, A, b, u) -> LPResult:
    from scipy.optimize import linprog

    res = linprog(
        -c,
        A_ub=A,
        b_ub=b,
        bounds=np.column_stack([np.zeros_like(u), u]),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    x = res.x
    y = -res.ineqlin.marginals if A.shape[0] else np.zeros(0)
    return LPResult(x, float(c @ x), y, certificate_gap(c, A, b, u, x, y), res.nit, "highs")


def fm_solve(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    metric: HybridMetric,
    method: str = "auto",
    max_support: Optional[int] = MAX_SUPPORT,
    seed: int = 0,
) -> FMResult:
    """FM distance with optimiser and duality-gap certificate.

    Above ``max_support`` pooled atoms both measures are replaced by
    empirical measures of ``max_support // 2`` draws from substream ``seed``;
    ``max_support=None`` always solves the full problem.
    """
    from scipy import sparse

    subsampled = False
    prob = pooled_problem(mu, nu, metric)
    if max_support is not None and prob.m > max_support:
        half = max_support // 2
        g = streams.substream(seed, 0)
        mu, nu = mu.resample(half, g), nu.resample(half, g)
        prob = pooled_problem(mu, nu, metric)
        subsampled = True
    m = prob.m
    sub_seed = seed if subsampled else None
    if np.all(np.abs(prob.c) <= 1e-15):
        return FMResult(0.0, np.zeros(m), 0.0, "trivial", m, 0, subsampled, sub_seed)
    pairs = _pairs_for(prob)
    k = len(pairs)
    rows = np.repeat(np.arange(k), 2)
    cols = pairs.ravel()
    vals = np.tile([1.0, -1.0], k)
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(k, m))
    d = np.linalg.norm(prob.y[pairs[:, 0]] - prob.y[pairs[:, 1]], axis=1)
    b = d + prob.weight * (prob.i[pairs[:, 0]] != prob.i[pairs[:, 1]])
    u = np.full(m, 2.0)
    if method == "auto":
        method = "simplex" if m <= SIMPLEX_MAX_POINTS else "highs"
    if method == "simplex":
        A = A.toarray()
        res = solve_bounded_lp(prob.c, A, b, u)
    elif method == "highs":
        res = _solve_highs(prob.c, A, b, u)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    viol = primal_violation(A, b, u, res.x)
    if abs(res.gap) > GAP_TOL or viol > 1e-9:
        raise SolverError(f"LP certificate failed: gap={res.gap:.3g}, primal violation={viol:.3g}")
    f = res.x - 1.0
    value = float(np.clip(prob.c @ f, 0.0, 2.0))
    return FMResult(value, f, res.gap, res.method, m, k, subsampled, sub_seed)


def fm_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, metric: HybridMetric, **kw) -> float:
    return fm_solve(mu, nu, metric, **kw).value


# --------------------------------------------------------------------------
# brute-force oracle


BRUTE_MAX_POINTS = 6


def _constraint_rows(D: np.ndarray):
    m = len(D)
    rows, rhs = [], []
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        rows += [e, -e]
        rhs += [1.0, 1.0]
    for a, b in itertools.permutations(range(m), 2):
        e = np.zeros(m)
        e[a], e[b] = 1.0, -1.0
        rows.append(e)
        rhs.append(D[a, b])
    return np.array(rows), np.array(rhs)


def _vertex_max(c, D, chunk=100_000) -> float:
    G, h = _constraint_rows(D)
    m = len(c)
    best = 0.0
    combos = itertools.combinations(range(len(h)), m)
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)))
        if not idx.size:
            return best
        M = G[idx]
        det = np.linalg.det(M)
        ok = np.abs(det) > 1e-12
        if not ok.any():
            continue
        x = np.linalg.solve(M[ok], h[idx[ok]][..., None])[..., 0]
        feas = np.all(x @ G.T <= h + 1e-12, axis=1)
        if feas.any():
            best = max(best, float((x[feas] @ c).max()))


def _grid_max(c, D, levels: int, refinements: int = 2, max_points: int = 5_000_000) -> float:
    m = len(c)
    per_axis = max(2, min(levels, int(max_points ** (1.0 / m))))
    lo, hi = np.full(m, -1.0), np.full(m, 1.0)
    best_v, best_f = 0.0, np.zeros(m)
    for _ in range(refinements + 1):
        axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(m)]
        F = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        diff = F[:, :, None] - F[:, None, :]
        feas = np.all(diff <= D + 1e-12, axis=(1, 2))
        if feas.any():
            vals = F[feas] @ c
            k = int(np.argmax(vals))
            if vals[k] > best_v:
                best_v, best_f = float(vals[k]), F[feas][k]
        step = (hi - lo) / (per_axis - 1)
        lo = np.maximum(best_f - 2 * step, -1.0)
        hi = np.minimum(best_f + 2 * step, 1.0)
    return best_v


def fm_bruteforce(
    mu: EmpiricalMeasure, nu: EmpiricalMeasure, metric: HybridMetric, grid_levels: Optional[int] = None
) -> float:
    """Independent oracle for small supports (at most 6 pooled points).

    By default enumerates every vertex of the feasible polytope (exact).  With
    ``grid_levels`` it instead searches a feasibility-filtered grid on [-1, 1]^m
    and refines twice around the incumbent.
    """
    prob = pooled_problem(mu, nu, metric)
    if prob.m > BRUTE_MAX_POINTS:
        raise ValueError(f"brute force needs at most {BRUTE_MAX_POINTS} pooled points, got {prob.m}")
    if grid_levels is None:
        return _vertex_max(prob.c, prob.D)
    return _grid_max(prob.c, prob.D, grid_levels)
