"""CSV and JSON artifacts with a fixed number format."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

FLOAT_FORMAT = "%.12g"


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isnan(v):
        return "nan"
    return FLOAT_FORMAT % v


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and a float array; empty cells become NaN."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing artifact {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"empty artifact {path}")
    header, body = rows[0], rows[1:]
    data = np.array([[float(c) if c != "" else np.nan for c in r] for r in body], dtype=float)
    return header, data.reshape(len(body), len(header))


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


# --- solution files ------------------------------------------------------------

def solution_rows(X, U):
    """``k, x_0..x_{n-1}, u_0..``; the terminal knot has empty control cells."""
    T = len(U)
    for k in range(T + 1):
        u = list(U[k]) if k < T else [None] * U.shape[1]
        yield [k, *X[k], *u]


def write_solution(out_dir, X, U, W) -> None:
    out_dir = Path(out_dir)
    n, nu = X.shape[1], U.shape[1]
    write_csv(out_dir / "solution.csv",
              ["k", *(f"x{i}" for i in range(n)), *(f"u{j}" for j in range(nu))],
              solution_rows(X, U))
    write_csv(out_dir / "gain.csv", ["row", "col", "value"],
              ([i, j, W[i, j]] for i in range(nu) for j in range(n)))


def read_solution(sol_dir, n_x: int, n_u: int, need_gain: bool = True):
    """``(X, U, W)`` from a directory written by :func:`write_solution`.

    ``W`` is ``None`` when ``gain.csv`` is absent and ``need_gain`` is false.
    """
    sol_dir = Path(sol_dir)
    header, data = read_csv(sol_dir / "solution.csv")
    if len(header) != 1 + n_x + n_u:
        raise ConfigError(f"solution.csv has {len(header)} columns, expected {1 + n_x + n_u}")
    X = data[:, 1:1 + n_x]
    U = data[:-1, 1 + n_x:]
    W = None
    gain_path = sol_dir / "gain.csv"
    if gain_path.exists():
        _, g = read_csv(gain_path)
        W = np.zeros((n_u, n_x))
        for i, j, val in g:
            W[int(i), int(j)] = val
    elif need_gain:
        raise ConfigError(f"missing artifact {gain_path}")
    return X, U, W
