"""Command-line runner: ``pdmpcert {simulate,couple,constants,ergodicity,validate}``.

Every subcommand reads a TOML config (see ``pdmpcert.config``) and writes a
JSON report ``<command>.json`` into ``--out``.  Reports carry a schema tag, the
config hash and a snapshot of the constants ledger.  Wall-clock timings go to
standard error only, so reports are reproducible byte for byte.

Exit codes: 0 success, 2 invalid config, 3 runtime or model error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
import warnings
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from . import export
from .constants import build_ledger
from .errors import ConfigError, ModelError, PdmpError
from .experiments import FloorWarning, constants_report, couple_report, ergodicity_experiment, validate_report
from .kernel import run_chain, run_pdmp_path
from .model import ModelSpec, build_model
from .pdsde import PDSDE_MODELS, PdsdeSpec, build_pdsde, check_dissipativity, map_constants, solve_pdsde_batch, to_model_spec
from .space import StatePoint, state

REPORT_SCHEMA = "pdmpcert-report"
REPORT_VERSION = 1


def _log(msg: str) -> None:
    print(f"pdmpcert: {msg}", file=sys.stderr, flush=True)


def jsonable(obj):
    """Recursively convert numpy values and non-finite floats for strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _strip_timings(d):
    if isinstance(d, dict):
        return {k: _strip_timings(v) for k, v in d.items() if not k.startswith("seconds_")}
    if isinstance(d, list):
        return [_strip_timings(v) for v in d]
    return d


def write_report(out: Path, command: str, cfg: cfgmod.ExperimentConfig, ledger: dict, result: dict) -> Path:
    report = {
        "schema": REPORT_SCHEMA,
        "version": REPORT_VERSION,
        "command": command,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "ledger": ledger,
        "result": _strip_timings(result),
    }
    path = out / f"{command}.json"
    path.write_text(json.dumps(jsonable(report), indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# model resolution


def resolve_model(cfg: cfgmod.ExperimentConfig) -> tuple[ModelSpec, Optional[PdsdeSpec]]:
    try:
        if cfg.model in PDSDE_MODELS:
            p = build_pdsde(cfg.model, **cfg.model_params)
            return to_model_spec(p), p
        return build_model(cfg.model, **cfg.model_params), None
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def ledger_snapshot(spec: ModelSpec, pspec: Optional[PdsdeSpec]) -> dict:
    try:
        led = map_constants(pspec) if pspec is not None else build_ledger(spec)
        return led.to_dict()
    except PdmpError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _point(spec: ModelSpec, y, i, name: str) -> StatePoint:
    y = [float(v) for v in y]
    if len(y) != spec.dim:
        raise ConfigError(f"{name}: state has {len(y)} components, model dimension is {spec.dim}")
    if not 1 <= int(i) <= spec.n_regimes:
        raise ConfigError(f"{name}: regime {i} outside 1..{spec.n_regimes}")
    if not spec.domain_ok(np.asarray([y]))[0]:
        raise ConfigError(f"{name}: state {y} lies outside the model's domain")
    return state(y, int(i))


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, spec, pspec, out: Path, threads) -> dict:
    s = cfg.simulate
    x0 = _point(spec, s.x0, s.i0, "simulate.x0")
    ext = "csv" if s.format == "csv" else "jsonl"
    files, jumps = [], []
    if s.kind == "chain":
        for c in range(s.chains):
            path = run_chain(spec, x0, s.steps, cfg.seed, chain_id=c)
            files.append(export.write_chain(out / f"chain_{c:04d}.{ext}", path, s.format).name)
            jumps.append(len(path) - 1)
        return {"kind": "chain", "files": files, "jumps": jumps}
    if s.kind == "path":
        for c in range(s.chains):
            path = run_pdmp_path(spec, x0, s.horizon, s.grid, cfg.seed, chain_id=c)
            files.append(export.write_path(out / f"path_{c:04d}.{ext}", path, s.format).name)
            jumps.append(len(path.jump_times))
        return {"kind": "path", "files": files, "jumps": jumps}
    if pspec is None:
        raise ConfigError(f"simulate.kind = 'pdsde' needs a PDSDE model, one of {sorted(PDSDE_MODELS)}")
    diss = check_dissipativity(pspec, seed=cfg.seed)
    if not diss.passed:
        raise ModelError(
            f"declared dissipativity exponent alpha={pspec.alpha} is violated: worst slack "
            f"{diss.worst_slack:.6g} at {json.dumps(diss.witness)}"
        )
    trajs = solve_pdsde_batch(
        pspec,
        np.repeat(x0.y[None, :], s.chains, axis=0),
        [x0.i] * s.chains,
        horizon=s.horizon,
        seed=cfg.seed,
        grid=s.grid,
    )
    errs = []
    for c, tr in enumerate(trajs):
        files.append(export.write_pdsde(out / f"pdsde_{c:04d}.{ext}", tr, s.format).name)
        files.append(export.write_pdsde_grid(out / f"pdsde_grid_{c:04d}.{ext}", tr, s.format).name)
        jumps.append(tr.n_jumps)
        errs.append(tr.time_change_error())
    worst = max(errs)
    if worst > cfg.tolerances.time_change:
        raise PdmpError(f"time-change identity violated: max |Lambda(tau_n) - bar_tau_n| = {worst:.3g}")
    return {
        "kind": "pdsde",
        "files": files,
        "jumps": jumps,
        "time_change_error": worst,
        "alpha_bound_ok": pspec.alpha_bound_ok,
        "dissipativity": diss.to_dict(),
    }


def _pairs_from_config(spec, raw):
    return [
        (_point(spec, p["y1"], p["i1"], f"couple.pairs[{k}]"), _point(spec, p["y2"], p["i2"], f"couple.pairs[{k}]"))
        for k, p in enumerate(raw)
    ]


def cmd_couple(cfg, spec, pspec, out: Path, threads) -> dict:
    c = cfg.couple
    pairs = None if c.pairs is None else _pairs_from_config(spec, c.pairs)
    return couple_report(
        spec, cfg.seed, m=c.m, pairs=pairs, zeta=c.zeta, sigma_m=c.sigma_m, sigma_n_max=c.sigma_n_max
    )


def cmd_constants(cfg, spec, pspec, out: Path, threads) -> dict:
    rep = constants_report(spec, seed=cfg.seed, n_pairs=cfg.constants.n_pairs, tol=cfg.tolerances.spotcheck)
    if pspec is not None:
        led = map_constants(pspec, seed=cfg.seed)
        rep["ledger"] = led.to_dict()
        rep["pdsde"] = {
            "alpha_bound": pspec.alpha_bound,
            "alpha_bound_ok": pspec.alpha_bound_ok,
            "L_q_mapped": led.measured["L_q_mapped"],
            "L_q_direct_estimate": led.measured["L_q_direct_estimate"],
        }
        rep["all_passed"] = bool(rep["all_passed"] and pspec.alpha_bound_ok)
    return rep


def cmd_ergodicity(cfg, spec, pspec, out: Path, threads) -> dict:
    e = cfg.ergodicity
    xa = _point(spec, e.x_a["y"], e.x_a["i"], "ergodicity.x_a")
    xb = _point(spec, e.x_b["y"], e.x_b["i"], "ergodicity.x_b")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FloorWarning)
        rep = ergodicity_experiment(
            spec,
            xa,
            xb,
            n_chains=e.n_chains,
            n_max=e.n_max,
            seed=cfg.seed,
            c=e.c,
            streams=tuple(e.streams),
            threads=threads,
            max_support=e.max_support,
            r2_min=e.r2_min,
            ratio_max=e.ratio_max,
        )
    for w in caught:
        _log(f"warning: {w.message}")
    _log(f"ergodicity: simulation {rep.seconds_simulation:.2f} s, distances {rep.seconds_distance:.2f} s")
    return rep.to_dict()


def cmd_validate(cfg, spec, pspec, out: Path, threads) -> dict:
    rep = validate_report(spec, seed=cfg.seed, samples=cfg.validate.samples)
    if pspec is not None:
        diss = check_dissipativity(pspec, seed=cfg.seed)
        rep["dissipativity"] = diss.to_dict()
        rep["all_passed"] = bool(rep["all_passed"] and diss.passed)
    return rep


COMMANDS = {
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "constants": cmd_constants,
    "ergodicity": cmd_ergodicity,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML experiment config")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument(
        "--threads", type=int, default=None, help="worker threads (default: $PDMPCERT_THREADS or 1)"
    )
    p = argparse.ArgumentParser(prog="pdmpcert", description="PDMP coupling and ergodicity toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=f"run the {name} experiment")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = cfgmod.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        spec, pspec = resolve_model(cfg)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        result = COMMANDS[args.command](cfg, spec, pspec, out, args.threads)
        path = write_report(out, args.command, cfg, ledger_snapshot(spec, pspec), result)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except (PdmpError, ValueError, OSError, FloatingPointError) as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return 3
    status = result.get("all_passed", result.get("passed"))
    extra = "" if status is None else f" (all checks passed: {bool(status)})"
    _log(f"{args.command} finished in {time.perf_counter() - t0:.2f} s; report {path}{extra}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
