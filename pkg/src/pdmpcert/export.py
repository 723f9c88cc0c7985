"""Trajectory export as CSV or JSON lines.

Every file starts with a schema line.  In CSV it is a comment
``# <schema> v<version>``; in JSON lines it is the first object, of the form
``{"schema": ..., "version": ..., "columns": [...]}``.  Floats are written with
``repr`` so a file can be reproduced byte for byte.

Columns
-------
pdmpcert-chain (jump chain):
    n, tau, y1..yd, i
pdmpcert-path (continuous path on a grid):
    t, y1..yd, i
pdmpcert-pdsde (PDSDE jumps):
    n, tau, bar_tau, eta, pre_y1..pre_yd, y1..yd, i, Lambda
    Row n = 0 is the initial state with empty jump fields.
pdmpcert-pdsde-grid (PDSDE grid samples):
    t, y1..yd, i, Lambda
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

SCHEMA_VERSION = 1


def _ycols(prefix: str, d: int) -> list[str]:
    return [f"{prefix}{k + 1}" for k in range(d)]


def _num(v):
    if v is None:
        return None
    if isinstance(v, (int, bool)):
        return v
    return float(v)


def write_rows(path, schema: str, columns: Sequence[str], rows: Iterable[Sequence], fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            fh.write(f"# {schema} v{SCHEMA_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow(["" if v is None else repr(_num(v)) for v in r])
    elif fmt == "jsonl":
        with open(path, "w") as fh:
            fh.write(json.dumps({"schema": schema, "version": SCHEMA_VERSION, "columns": list(columns)}) + "\n")
            for r in rows:
                fh.write(json.dumps(dict(zip(columns, (_num(v) for v in r)))) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}; use 'csv' or 'jsonl'")
    return path


def read_rows(path) -> tuple[dict, list[dict]]:
    """Read a file written by ``write_rows``; returns (header, rows)."""
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            schema, version = first[1:].split()
            reader = csv.DictReader(fh)
            rows = [{k: (float(v) if v != "" else None) for k, v in r.items()} for r in reader]
            return {"schema": schema, "version": int(version.lstrip("v")), "columns": reader.fieldnames}, rows
        header = json.loads(first)
        return header, [json.loads(line) for line in fh if line.strip()]


def write_chain(path, chain, fmt: str = "csv") -> Path:
    d = chain.y.shape[1]
    cols = ["n", "tau", *_ycols("y", d), "i"]
    rows = (
        [n, float(chain.times[n]), *map(float, s.y), int(s.i)] for n, s in enumerate(chain.states)
    )
    return write_rows(path, "pdmpcert-chain", cols, rows, fmt)


def write_path(path, pdmp_path, fmt: str = "csv") -> Path:
    d = pdmp_path.y.shape[1]
    cols = ["t", *_ycols("y", d), "i"]
    rows = (
        [float(t), *map(float, y), int(i)] for t, y, i in zip(pdmp_path.grid, pdmp_path.y, pdmp_path.regimes)
    )
    return write_rows(path, "pdmpcert-path", cols, rows, fmt)


def write_pdsde(path, traj, fmt: str = "csv") -> Path:
    d = traj.y0.shape[0]
    cols = ["n", "tau", "bar_tau", "eta", *_ycols("pre_y", d), *_ycols("y", d), "i", "Lambda"]
    rows = [[0, 0.0, None, None, *([None] * d), *map(float, traj.y0), int(traj.i0), 0.0]]
    for n in range(traj.n_jumps):
        rows.append(
            [
                n + 1,
                float(traj.tau[n]),
                float(traj.bar_tau[n]),
                float(traj.eta[n]),
                *map(float, traj.pre[n]),
                *map(float, traj.post[n]),
                int(traj.regimes[n + 1]),
                float(traj.Lambda_at_jumps[n]),
            ]
        )
    return write_rows(path, "pdmpcert-pdsde", cols, rows, fmt)


def write_pdsde_grid(path, traj, fmt: str = "csv") -> Path:
    if traj.grid is None:
        raise ValueError("trajectory has no grid samples")
    d = traj.y0.shape[0]
    cols = ["t", *_ycols("y", d), "i", "Lambda"]
    rows = (
        [float(t), *map(float, y), int(i), float(L)]
        for t, y, i, L in zip(traj.grid, traj.y_grid, traj.regime_grid, traj.Lambda_grid)
    )
    return write_rows(path, "pdmpcert-pdsde-grid", cols, rows, fmt)
