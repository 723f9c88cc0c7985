"""Deterministic evolution between jumps and the integrated jump intensity.

For a state (y, i) the hazard is L(t) = int_0^t lambda(S_i(s, y)) ds and its
inverse H turns a unit exponential clock into a waiting time.  Closed forms
are used when the model supplies them; otherwise the hazard is accumulated
along the integrator's own nodes (Simpson on [t, t+h/2, t+h] for analytic
flows, the RK4 stage weights for vector fields), so the flow used for jumps
and the hazard are computed in a single pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BracketError, IntegrationError
from .model import ModelSpec
from .space import StatePoint

H_ODE = 1e-3
H_QUAD = 1e-2
TOL_HAZ = 1e-8
TOL_INV = 1e-8
PROJ_TOL = 1e-6


def t_max(spec: ModelSpec, tail: float = 1e-12) -> float:
    """Horizon with exp(-lambda_lo * t_max) <= tail."""
    return -math.log(tail) / spec.lambda_lo


def _as_batch(y, i, t=None):
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    i = np.broadcast_to(np.asarray(i, dtype=np.int64), (y.shape[0],))
    if t is None:
        return y, i
    t = np.broadcast_to(np.asarray(t, dtype=float), (y.shape[0],))
    return y, i, t


def _project(spec: ModelSpec, y: np.ndarray, proj_tol: float) -> np.ndarray:
    if spec.project is None:
        return y
    yp = np.asarray(spec.project(y), dtype=float)
    gap = np.linalg.norm(yp - y, axis=1)
    if gap.size and gap.max() > proj_tol:
        k = int(np.argmax(gap))
        raise IntegrationError(
            f"integration left the domain by {gap[k]:.3g} > {proj_tol:g} at y={y[k].tolist()}"
        )
    return yp


def _rk4(spec: ModelSpec, y, i, h, proj_tol):
    a = spec.vector_field
    hh = h[:, None]
    k1 = a(y, i)
    k2 = a(y + 0.5 * hh * k1, i)
    k3 = a(y + 0.5 * hh * k2, i)
    k4 = a(y + hh * k3, i)
    return _project(spec, y + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), proj_tol)


def _segment(spec: ModelSpec, y, i, h, proj_tol=PROJ_TOL):
    """Advance a batch by steps ``h`` and return (y_next, hazard increment)."""
    lam = spec.intensity
    if spec.semiflow is not None:
        ym = spec.semiflow(0.5 * h, y, i)
        y1 = spec.semiflow(h, y, i)
        inc = h / 6.0 * (lam(y) + 4.0 * lam(ym) + lam(y1))
        return y1, inc
    a = spec.vector_field
    hh = h[:, None]
    k1 = a(y, i)
    y2 = y + 0.5 * hh * k1
    k2 = a(y2, i)
    y3 = y + 0.5 * hh * k2
    k3 = a(y3, i)
    y4 = y + hh * k3
    k4 = a(y4, i)
    y1 = _project(spec, y + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), proj_tol)
    inc = h / 6.0 * (lam(y) + 2.0 * lam(y2) + 2.0 * lam(y3) + lam(y4))
    return y1, inc


# --------------------------------------------------------------------------
# evolution


def evolve_batch(spec: ModelSpec, y, i, t, h_ode: float = H_ODE, proj_tol: float = PROJ_TOL):
    """S_i(t, y) for a batch; fixed-step RK4 with step <= h_ode for vector fields."""
    y, i, t = _as_batch(y, i, t)
    if np.any(t < 0):
        raise ValueError("evolution time must be non-negative")
    if spec.semiflow is not None:
        return np.asarray(spec.semiflow(t, y, i), dtype=float)
    steps = np.ceil(t / h_ode).astype(np.int64)
    h = np.where(steps > 0, t / np.maximum(steps, 1), 0.0)
    out = y.copy()
    for k in range(int(steps.max(initial=0))):
        act = np.nonzero(steps > k)[0]
        out[act] = _rk4(spec, out[act], i[act], h[act], proj_tol)
    return out


def evolve(spec: ModelSpec, i: int, y, t: float, h_ode: float = H_ODE) -> np.ndarray:
    """S_i(t, y) for a single state."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return evolve_batch(spec, y[None, :], [i], [t], h_ode=h_ode)[0]


# --------------------------------------------------------------------------
# hazard


def hazard_batch(spec: ModelSpec, y, i, t, method: str = "auto", h: float | None = None):
    """Integrated intensity L(t, (y, i)) for a batch.

    ``method`` is ``"exact"`` (model closed form), ``"numeric"`` (quadrature
    along the flow) or ``"auto"`` (exact when available).
    """
    y, i, t = _as_batch(y, i, t)
    if np.any(t < 0):
        raise ValueError("hazard time must be non-negative")
    if method == "auto":
        method = "exact" if spec.hazard_exact is not None else "numeric"
    if method == "exact":
        if spec.hazard_exact is None:
            raise ValueError(f"model {spec.name} has no closed-form hazard")
        return np.asarray(spec.hazard_exact(t, y, i), dtype=float)
    if method != "numeric":
        raise ValueError(f"unknown hazard method {method!r}")
    if h is None:
        h = H_QUAD if spec.semiflow is not None else H_ODE
    n = max(1, int(math.ceil(t.max(initial=0.0) / h)))
    step = t / n
    out = np.zeros_like(t)
    cur = y.copy()
    for _ in range(n):
        cur, inc = _segment(spec, cur, i, step)
        out += inc
    return out


def hazard(spec: ModelSpec, x: StatePoint, t: float, method: str = "auto") -> float:
    return float(hazard_batch(spec, x.y[None, :], [x.i], [t], method=method)[0])


@dataclass
class HazardCurve:
    """Monotone grid of (t, L(t, x)) pairs along the flow from ``x``."""

    x: StatePoint
    t: np.ndarray
    L: np.ndarray
    h: float

    def __call__(self, s: float) -> float:
        return float(np.interp(s, self.t, self.L))


def hazard_curve(spec: ModelSpec, x: StatePoint, t_end: float, h: float | None = None) -> HazardCurve:
    if h is None:
        h = H_QUAD if spec.semiflow is not None else H_ODE
    n = max(1, int(math.ceil(t_end / h)))
    step = np.array([t_end / n])
    ts = np.linspace(0.0, t_end, n + 1)
    Ls = np.zeros(n + 1)
    cur = x.y[None, :]
    i = np.array([x.i])
    for k in range(n):
        cur, inc = _segment(spec, cur, i, step)
        Ls[k + 1] = Ls[k] + inc[0]
    return HazardCurve(x, ts, Ls, t_end / n)


# --------------------------------------------------------------------------
# inverse hazard


def _bracket_error(y, i, s, msg):
    return BracketError(f"{msg} at y={np.asarray(y).tolist()}, i={int(i)}, s={float(s)}")


def _inverse_newton(spec, y, i, s, tol, max_iter=100):
    L = spec.hazard_exact
    lo = s / spec.lambda_hi
    hi = s / spec.lambda_lo
    slack = 1e-12 * (1.0 + s)
    f_lo = L(lo, y, i) - s
    f_hi = L(hi, y, i) - s
    bad = (f_lo > slack) | (f_hi < -slack)
    if bad.any():
        k = int(np.argmax(bad))
        raise _bracket_error(y[k], i[k], s[k], "hazard not bracketed by [s/lambda_hi, s/lambda_lo]")
    t = np.clip(s / spec.intensity(y), lo, hi)
    done = np.zeros(len(s), dtype=bool)
    for _ in range(max_iter):
        f = L(t, y, i) - s
        done = np.abs(f) <= tol * (1.0 + s)
        if done.all():
            return t
        hi = np.where(f > 0, t, hi)
        lo = np.where(f < 0, t, lo)
        d = spec.intensity(spec.semiflow(t, y, i))
        tn = t - f / d
        out = (tn <= lo) | (tn >= hi)
        tn = np.where(out, 0.5 * (lo + hi), tn)
        t = np.where(done, t, tn)
    k = int(np.argmax(~done))
    raise _bracket_error(y[k], i[k], s[k], "inverse hazard did not converge")


def _inverse_march(spec, y, i, s, h, max_bisect=60):
    n = len(s)
    t = np.zeros(n)
    L = np.zeros(n)
    cur = y.copy()
    active = s > 0
    cap = s / spec.lambda_lo + 2 * h
    while active.any():
        idx = np.nonzero(active)[0]
        hv = np.full(len(idx), h)
        y1, inc = _segment(spec, cur[idx], i[idx], hv)
        cross = L[idx] + inc >= s[idx]
        if cross.any():
            c = idx[cross]
            a = np.zeros(len(c))
            b = np.full(len(c), h)
            for _ in range(max_bisect):
                mid = 0.5 * (a + b)
                _, im = _segment(spec, cur[c], i[c], mid)
                below = L[c] + im < s[c]
                a = np.where(below, mid, a)
                b = np.where(below, b, mid)
            t[c] += 0.5 * (a + b)
            active[c] = False
        nc = idx[~cross]
        cur[nc] = y1[~cross]
        L[nc] += inc[~cross]
        t[nc] += h
        over = t[nc] > cap[nc]
        if over.any():
            k = nc[int(np.argmax(over))]
            raise _bracket_error(y[k], i[k], s[k], "hazard did not reach target by s/lambda_lo")
    return t


def inverse_hazard_batch(spec: ModelSpec, y, i, s, tol: float = 1e-12, h: float | None = None):
    """H(s, (y, i)): the time t with L(t, (y, i)) = s, for a batch."""
    y, i, s = _as_batch(y, i, s)
    if np.any(s < 0):
        raise ValueError("inverse hazard argument must be non-negative")
    out = np.zeros(len(s))
    pos = s > 0
    if not pos.any():
        return out
    yp, ip, sp = y[pos], i[pos], s[pos]
    if spec.hazard_exact is not None and spec.semiflow is not None:
        out[pos] = _inverse_newton(spec, yp, ip, sp, tol)
    else:
        if h is None:
            h = H_QUAD if spec.semiflow is not None else H_ODE
        out[pos] = _inverse_march(spec, yp, ip, sp, h)
    return out


def inverse_hazard(spec: ModelSpec, x: StatePoint, s: float) -> float:
    return float(inverse_hazard_batch(spec, x.y[None, :], [x.i], [s])[0])
