"""Experiment configuration files (TOML).

A config has a mandatory integer ``seed``, a ``[model]`` table with ``name``
and optional ``[model.params]``, and one optional table per subcommand.
Missing keys take the defaults below; unknown keys are rejected.

Example::

    seed = 7

    [model]
    name = "lm1d"
    params = { decay = 1.0 }

    [simulate]
    kind = "chain"      # chain | path | pdsde
    steps = 100
    x0 = [0.0]
    i0 = 1

    [ergodicity]
    n_chains = 2000
    n_max = 30
    x_a = { y = [0.0], i = 1 }
    x_b = { y = [4.0], i = 2 }
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .errors import ConfigError


@dataclass
class SimulateConfig:
    kind: str = "chain"
    steps: int = 100
    chains: int = 1
    x0: list = field(default_factory=lambda: [0.0])
    i0: int = 1
    horizon: float = 10.0
    grid: float = 0.1
    format: str = "csv"


@dataclass
class CoupleConfig:
    m: int = 10_000
    zeta: float = 0.9
    sigma_m: int = 2000
    sigma_n_max: int = 10_000
    # each entry: {y1 = [...], i1 = .., y2 = [...], i2 = ..}; default grid when absent
    pairs: Optional[list] = None


@dataclass
class ErgodicityConfig:
    n_chains: int = 2000
    n_max: int = 30
    x_a: dict = field(default_factory=lambda: {"y": [0.0], "i": 1})
    x_b: dict = field(default_factory=lambda: {"y": [4.0], "i": 2})
    streams: list = field(default_factory=lambda: [1, 2, 3])
    c: Optional[float] = None
    # omitted means the full LP without subsampling
    max_support: Optional[int] = None
    r2_min: float = 0.9
    ratio_max: float = 0.2


@dataclass
class ConstantsConfig:
    n_pairs: int = 200


@dataclass
class ValidateConfig:
    samples: int = 500


@dataclass
class Tolerances:
    time_change: float = 1e-6
    spotcheck: float = 1e-6


SECTIONS = {
    "simulate": SimulateConfig,
    "couple": CoupleConfig,
    "ergodicity": ErgodicityConfig,
    "constants": ConstantsConfig,
    "validate": ValidateConfig,
    "tolerances": Tolerances,
}


@dataclass
class ExperimentConfig:
    seed: int
    model: str
    model_params: dict = field(default_factory=dict)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    couple: CoupleConfig = field(default_factory=CoupleConfig)
    ergodicity: ErgodicityConfig = field(default_factory=ErgodicityConfig)
    constants: ConstantsConfig = field(default_factory=ConstantsConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        check(self)

    def to_dict(self) -> dict:
        """Plain dict without None values (TOML has no null)."""
        out: dict[str, Any] = {"seed": self.seed, "model": {"name": self.model}}
        if self.model_params:
            out["model"]["params"] = dict(self.model_params)
        for name in SECTIONS:
            sec = {k: v for k, v in asdict(getattr(self, name)).items() if v is not None}
            out[name] = sec
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def digest(self) -> str:
        """sha256 of the canonical JSON form."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = self.to_dict()
        d["seed"] = seed
        return from_dict(d)


def _section(name: str, raw) -> Any:
    cls = SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {sorted(extra)}")
    return cls(**raw)


def from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a table")
    extra = set(d) - {"seed", "model", *SECTIONS}
    if extra:
        raise ConfigError(f"unknown top-level key(s): {sorted(extra)}")
    if "seed" not in d:
        raise ConfigError("seed is mandatory")
    model = d.get("model")
    if not isinstance(model, dict) or "name" not in model:
        raise ConfigError("[model] table with a name is mandatory")
    if set(model) - {"name", "params"}:
        raise ConfigError(f"unknown key(s) in [model]: {sorted(set(model) - {'name', 'params'})}")
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[model.params] must be a table")
    kw = {name: _section(name, d[name]) for name in SECTIONS if name in d}
    return ExperimentConfig(seed=d["seed"], model=model["name"], model_params=dict(params), **kw)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    try:
        return from_dict(raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def dump(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.to_toml())


# --------------------------------------------------------------------------
# validation


def _int(name, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")


def _pos(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{name} must be a positive number, got {v!r}")


def _point(name, p):
    if not isinstance(p, dict) or set(p) != {"y", "i"}:
        raise ConfigError(f"{name} must be a table {{y = [...], i = ...}}")
    if not isinstance(p["y"], list) or not p["y"] or not all(isinstance(v, (int, float)) for v in p["y"]):
        raise ConfigError(f"{name}.y must be a non-empty list of numbers")
    _int(f"{name}.i", p["i"], 1)


def check(cfg: ExperimentConfig) -> None:
    _int("seed", cfg.seed, 0)
    if not isinstance(cfg.model, str) or not cfg.model:
        raise ConfigError("model name must be a non-empty string")
    s = cfg.simulate
    if s.kind not in ("chain", "path", "pdsde"):
        raise ConfigError(f"simulate.kind must be chain, path or pdsde, got {s.kind!r}")
    if s.format not in ("csv", "jsonl"):
        raise ConfigError(f"simulate.format must be csv or jsonl, got {s.format!r}")
    _int("simulate.steps", s.steps, 0)
    _int("simulate.chains", s.chains, 1)
    _int("simulate.i0", s.i0, 1)
    _pos("simulate.horizon", s.horizon)
    _pos("simulate.grid", s.grid)
    if not isinstance(s.x0, list) or not s.x0:
        raise ConfigError("simulate.x0 must be a non-empty list")
    c = cfg.couple
    _int("couple.m", c.m, 1)
    _int("couple.sigma_m", c.sigma_m, 1)
    _int("couple.sigma_n_max", c.sigma_n_max, 1)
    if not (isinstance(c.zeta, (int, float)) and 0 < c.zeta < 1):
        raise ConfigError(f"couple.zeta must lie in (0, 1), got {c.zeta!r}")
    if c.pairs is not None:
        for k, p in enumerate(c.pairs):
            if not isinstance(p, dict) or set(p) != {"y1", "i1", "y2", "i2"}:
                raise ConfigError(f"couple.pairs[{k}] must have keys y1, i1, y2, i2")
            _point(f"couple.pairs[{k}].1", {"y": p["y1"], "i": p["i1"]})
            _point(f"couple.pairs[{k}].2", {"y": p["y2"], "i": p["i2"]})
    e = cfg.ergodicity
    _int("ergodicity.n_chains", e.n_chains, 2)
    _int("ergodicity.n_max", e.n_max, 1)
    _point("ergodicity.x_a", e.x_a)
    _point("ergodicity.x_b", e.x_b)
    if not (isinstance(e.streams, list) and len(e.streams) == 3):
        raise ConfigError("ergodicity.streams must list three stream ids")
    for k, v in enumerate(e.streams):
        _int(f"ergodicity.streams[{k}]", v, 0)
    if e.c is not None:
        _pos("ergodicity.c", e.c)
    if e.max_support is not None:
        _int("ergodicity.max_support", e.max_support, 2)
    _pos("ergodicity.r2_min", e.r2_min)
    _pos("ergodicity.ratio_max", e.ratio_max)
    _int("constants.n_pairs", cfg.constants.n_pairs, 1)
    _int("validate.samples", cfg.validate.samples, 1)
    for f in fields(Tolerances):
        _pos(f"tolerances.{f.name}", getattr(cfg.tolerances, f.name))
