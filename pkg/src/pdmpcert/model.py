"""PDMP datum: semiflows, jump maps, densities, intensity and switching matrix.

All callbacks are vectorised over a leading batch axis:

* ``semiflow(t, y, i)``   t: (n,), y: (n, d), i: (n,) regimes in 1..N  -> (n, d)
* ``vector_field(y, i)``  -> (n, d)
* ``jump_map(theta, y)``  theta: (n,) -> (n, d)
* ``density(theta, y)``   -> (n,)
* ``intensity(y)``        -> (n,)
* ``switching(y)``        -> (n, N, N), rows indexed by the current regime
* ``hazard_exact(t, y, i)`` optional closed form of the integrated intensity

Callbacks must be pure functions; a ModelSpec is immutable and may be shared
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError
from .streams import as_generator

Array = np.ndarray


@dataclass(frozen=True)
class DeclaredConstants:
    """Constants of the standing hypotheses as declared by the model author.

    ``mismatch`` is the function bounding the drift between two different
    semiflows started at the same point (per unit time).
    """

    y_star: Array
    L: float
    alpha: float
    L_q: float
    L_lambda: float
    L_pi: float
    L_p: float
    delta_pi: float
    delta_p: float
    mismatch: Optional[Callable[[Array], Array]] = None
    M_L: Optional[float] = None

    def replace(self, **kw) -> "DeclaredConstants":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_regimes: int
    dim: int
    jump_map: Callable[[Array, Array], Array]
    density: Callable[[Array, Array], Array]
    p_max: float
    intensity: Callable[[Array], Array]
    lambda_lo: float
    lambda_hi: float
    switching: Callable[[Array], Array]
    theta_interval: tuple[float, float]
    semiflow: Optional[Callable[[Array, Array, Array], Array]] = None
    vector_field: Optional[Callable[[Array, Array], Array]] = None
    hazard_exact: Optional[Callable[[Array, Array, Array], Array]] = None
    in_domain: Optional[Callable[[Array], Array]] = None
    project: Optional[Callable[[Array], Array]] = None
    probe_box: tuple[float, float] = (-10.0, 10.0)
    declared: Optional[DeclaredConstants] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.semiflow is None and self.vector_field is None:
            raise ModelError("a model needs either a semiflow or a vector field")
        if not self.lambda_lo > 0:
            raise ModelError(f"intensity lower bound must be positive, got {self.lambda_lo}")
        if not self.lambda_hi >= self.lambda_lo:
            raise ModelError("intensity upper bound below lower bound")
        lo, hi = self.theta_interval
        if not lo < hi:
            raise ModelError(f"empty mark interval [{lo}, {hi}]")
        if not self.p_max > 0:
            raise ModelError("density envelope p_max must be positive")
        if self.n_regimes < 1 or self.dim < 1:
            raise ModelError("n_regimes and dim must be positive")

    @property
    def theta_length(self) -> float:
        return self.theta_interval[1] - self.theta_interval[0]

    @property
    def analytic(self) -> bool:
        return self.semiflow is not None

    def with_(self, **kw) -> "ModelSpec":
        from dataclasses import replace

        return replace(self, **kw)

    def domain_ok(self, y: Array) -> Array:
        if self.in_domain is None:
            return np.ones(y.shape[0], dtype=bool)
        return np.asarray(self.in_domain(y), dtype=bool)

    def switch_rows(self, i: Array, y: Array) -> Array:
        """Rows ``pi_{i, .}(y)`` for a batch, shape (n, N)."""
        mats = np.asarray(self.switching(y), dtype=float)
        return mats[np.arange(len(i)), np.asarray(i) - 1, :]


# --------------------------------------------------------------------------
# validation


@dataclass
class CheckResult:
    name: str
    max_violation: float
    tolerance: float
    witness: Optional[dict] = None

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "witness": self.witness,
        }


@dataclass
class ValidationReport:
    model: str
    samples: int
    checks: dict[str, CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "samples": self.samples,
            "passed": self.passed,
            "checks": {k: c.to_dict() for k, c in self.checks.items()},
        }


def sample_states(spec: ModelSpec, n: int, rng) -> tuple[Array, Array]:
    """Uniform draws of ``(y, i)`` over the probe box, restricted to the domain."""
    rng = as_generator(rng)
    lo, hi = spec.probe_box
    out = np.empty((0, spec.dim))
    for _ in range(1000):
        y = rng.uniform(lo, hi, size=(max(n, 16), spec.dim))
        out = np.vstack([out, y[spec.domain_ok(y)]])
        if len(out) >= n:
            break
    else:
        raise ModelError("could not sample states inside the domain from the probe box")
    i = rng.integers(1, spec.n_regimes + 1, size=n)
    return out[:n], i


def _witness(idx, **arrays) -> dict:
    return {k: np.asarray(v)[idx].tolist() for k, v in arrays.items()}


def validate_model(spec: ModelSpec, samples: int, seed: int) -> ValidationReport:
    """Spot-check the standing assumptions on random ``(y, i, theta)`` draws."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if not spec.lambda_lo > 0:
        raise ModelError("intensity lower bound must be positive")
    lo, hi = spec.theta_interval
    if not lo < hi:
        raise ModelError("empty mark interval")
    rng = as_generator(seed)
    y, i = sample_states(spec, samples, rng)
    theta = rng.uniform(lo, hi, size=samples)
    checks: dict[str, CheckResult] = {}

    lam = np.asarray(spec.intensity(y), dtype=float)
    if np.any(~(lam > 0)):
        k = int(np.argmin(lam))
        raise ModelError(f"intensity not positive at y={y[k].tolist()}: {lam[k]}")
    viol = np.maximum.reduce([spec.lambda_lo - lam, lam - spec.lambda_hi, np.zeros_like(lam)])
    k = int(np.argmax(viol))
    checks["intensity_bounds"] = CheckResult(
        "intensity_bounds", float(viol[k]), 1e-12, _witness(k, y=y, intensity=lam)
    )

    mats = np.asarray(spec.switching(y), dtype=float)
    row_dev = np.abs(mats.sum(axis=2) - 1.0).max(axis=1)
    neg = np.maximum(-mats.min(axis=(1, 2)), 0.0)
    viol = np.maximum(row_dev, neg)
    k = int(np.argmax(viol))
    checks["row_stochastic"] = CheckResult(
        "row_stochastic", float(viol[k]), 1e-12, {"y": y[k].tolist(), "matrix": mats[k].tolist()}
    )

    nodes, weights = np.polynomial.legendre.leggauss(64)
    th = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * weights
    m = min(samples, 256)
    yy = np.repeat(y[:m], len(th), axis=0)
    pv = np.asarray(spec.density(np.tile(th, m), yy), dtype=float).reshape(m, len(th))
    mass = pv @ w
    viol = np.abs(mass - 1.0)
    k = int(np.argmax(viol))
    checks["density_normalized"] = CheckResult(
        "density_normalized", float(viol[k]), 1e-8, {"y": y[k].tolist(), "mass": float(mass[k])}
    )

    pt = np.asarray(spec.density(theta, y), dtype=float)
    viol = np.maximum(np.concatenate([pt, pv.ravel()]) - spec.p_max, 0.0)
    k = int(np.argmax(viol))
    checks["density_envelope"] = CheckResult(
        "density_envelope", float(viol[k]), 0.0, {"p_max": spec.p_max, "excess": float(viol[k])}
    )
    neg = np.maximum(-np.concatenate([pt, pv.ravel()]), 0.0)
    checks["density_nonnegative"] = CheckResult("density_nonnegative", float(neg.max()), 0.0)

    post = np.asarray(spec.jump_map(theta, y), dtype=float)
    bad = ~spec.domain_ok(post)
    checks["jump_map_domain"] = CheckResult(
        "jump_map_domain",
        float(bad.mean()),
        0.0,
        _witness(int(np.argmax(bad)), y=y, theta=theta) if bad.any() else None,
    )
    return ValidationReport(spec.name, samples, checks)


# --------------------------------------------------------------------------
# built-in models


def lm1d(
    decay: float = 1.0,
    targets: tuple[float, float] = (0.0, 1.0),
    base_rate: float = 1.0,
    bump_rate: float = 1.0,
    switch: Optional[list[list[float]]] = None,
) -> ModelSpec:
    """Two-regime cell-cycle type model on Y = [0, inf).

    With the defaults: S_1(t,y) = y e^{-t}, S_2(t,y) = y e^{-t} + 1 - e^{-t},
    q_theta(y) = theta*y with theta ~ U[0,1], lambda(y) = 1 + 1/(1+y) and
    pi_ij = 1/2.
    """
    kappa = float(decay)
    m = np.asarray(targets, dtype=float)
    if m.shape != (2,) or np.any(m < 0):
        raise ModelError("targets must be two non-negative numbers")
    if kappa <= 0:
        raise ModelError("decay must be positive")
    base, bump = float(base_rate), float(bump_rate)
    if bump < 0:
        raise ModelError("bump_rate must be non-negative")
    P = np.full((2, 2), 0.5) if switch is None else np.asarray(switch, dtype=float)
    if P.shape != (2, 2):
        raise ModelError("switch must be a 2x2 matrix")

    def semiflow(t, y, i):
        mi = m[np.asarray(i) - 1][:, None]
        return mi + (y - mi) * np.exp(-kappa * np.asarray(t, dtype=float))[:, None]

    def vector_field(y, i):
        mi = m[np.asarray(i) - 1][:, None]
        return kappa * (mi - y)

    def jump_map(theta, y):
        return np.asarray(theta, dtype=float)[:, None] * y

    def density(theta, y):
        return np.ones(np.shape(theta), dtype=float)

    def intensity(y):
        return base + bump / (1.0 + y[:, 0])

    def switching(y):
        return np.broadcast_to(P, (y.shape[0], 2, 2))

    def hazard_exact(t, y, i):
        t = np.asarray(t, dtype=float)
        mi = m[np.asarray(i) - 1]
        A = 1.0 + mi
        B = y[:, 0] - mi
        # log(A e^{kt} + B) - log(A + B), written without overflow
        log_term = kappa * t + np.log(A + B * np.exp(-kappa * t)) - np.log(A + B)
        return base * t + bump / (A * kappa) * log_term

    def in_domain(y):
        return y[:, 0] >= 0.0

    def project(y):
        return np.maximum(y, 0.0)

    overlap = min(
        float(np.minimum(P[a], P[b]).sum()) for a in range(2) for b in range(2)
    )
    dm = abs(m[0] - m[1])
    declared = DeclaredConstants(
        y_star=np.zeros(1),
        L=1.0,
        alpha=-kappa,
        L_q=0.5,
        L_lambda=bump,
        L_pi=0.0,
        L_p=0.0,
        delta_pi=overlap,
        delta_p=1.0,
        mismatch=lambda y: np.full(y.shape[0], kappa * dm),
        M_L=kappa * dm,
    )
    return ModelSpec(
        name="lm1d",
        n_regimes=2,
        dim=1,
        jump_map=jump_map,
        density=density,
        p_max=1.0,
        intensity=intensity,
        lambda_lo=base,
        lambda_hi=base + bump,
        switching=switching,
        theta_interval=(0.0, 1.0),
        semiflow=semiflow,
        vector_field=vector_field,
        hazard_exact=hazard_exact,
        in_domain=in_domain,
        project=project,
        probe_box=(0.0, 20.0),
        declared=declared,
        params={
            "decay": kappa,
            "targets": m.tolist(),
            "base_rate": base,
            "bump_rate": bump,
            "switch": P.tolist(),
        },
    )


def const_rate(rate: float = 2.0, **kw) -> ModelSpec:
    """LM1D flows and jumps with constant intensity ``rate``."""
    spec = lm1d(base_rate=rate, bump_rate=0.0, **kw)
    return spec.with_(name="const_rate", params={**spec.params, "rate": rate})


def numeric_flow(spec: ModelSpec) -> ModelSpec:
    """The same model with closed forms removed, forcing the integrator paths."""
    if spec.vector_field is None:
        raise ModelError("model has no vector field to integrate")
    return spec.with_(name=spec.name + "_numeric", semiflow=None, hazard_exact=None)


MODELS: dict[str, Callable[..., ModelSpec]] = {
    "lm1d": lm1d,
    "const_rate": const_rate,
}


def build_model(name: str, **params) -> ModelSpec:
    if name.endswith("_numeric") and name[: -len("_numeric")] in MODELS:
        return numeric_flow(MODELS[name[: -len("_numeric")]](**params))
    try:
        factory = MODELS[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ModelError(f"bad parameters for model {name!r}: {exc}") from None
