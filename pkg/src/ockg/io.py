"""File formats: node-stream CSV, ground truth and result JSON, config digests."""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA = 1


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def version_string() -> str:
    return f"ockg-{__version__}"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def config_digest(config: dict) -> str:
    """sha256 of the canonical JSON encoding (sorted keys, no whitespace)."""
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


def write_json(path, obj: dict, config: dict | None = None) -> None:
    """Write ``obj`` with the schema tag; with ``config``, also stamp its
    digest and the package version."""
    out = {"schema": SCHEMA, **obj}
    if config is not None:
        out["config_digest"] = config_digest(config)
        out["version"] = version_string()
    Path(path).write_text(json.dumps(out, sort_keys=True, indent=1, default=_jsonable) + "\n")


def read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object")
    if obj.get("schema", SCHEMA) != SCHEMA:
        raise DataError(f"{path}: unsupported schema {obj.get('schema')!r}")
    return obj


def write_stream_csv(stream, path, t0: int = 0) -> None:
    """(T, N, d) array -> CSV with header ``t,node,x0,...``, sorted by (t, node)."""
    stream = np.asarray(stream, dtype=float)
    if stream.ndim == 2:
        stream = stream[..., None]
    T, N, d = stream.shape
    t = np.repeat(np.arange(t0, t0 + T), N)
    node = np.tile(np.arange(N), T)
    table = np.column_stack([t, node, stream.reshape(T * N, d)])
    header = ",".join(["t", "node"] + [f"x{j}" for j in range(d)])
    np.savetxt(path, table, delimiter=",", header=header, comments="",
               fmt=["%d", "%d"] + ["%.17g"] * d)


def read_stream_csv(path) -> tuple[np.ndarray, int]:
    """Inverse of :func:`write_stream_csv`; returns ``(stream, t0)``."""
    path = Path(path)
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
    except OSError as e:
        raise DataError(f"{path}: {e.strerror}") from None
    d = len(header) - 2
    if header[:2] != ["t", "node"] or d < 1 or header[2:] != [f"x{j}" for j in range(d)]:
        raise DataError(f"{path}: expected header t,node,x0,...,x{{d-1}}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)   # empty file: reported below
            table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if table.shape[0] == 0:
        raise DataError(f"{path}: no rows")
    if not np.isfinite(table).all():
        raise DataError(f"{path}: non-finite values")
    t, node = table[:, 0].astype(np.int64), table[:, 1].astype(np.int64)
    N = int(node.max()) + 1
    if table.shape[0] % N:
        raise DataError(f"{path}: {table.shape[0]} rows is not a multiple of {N} nodes")
    T = table.shape[0] // N
    t0 = int(t[0])
    if not (np.array_equal(node, np.tile(np.arange(N), T))
            and np.array_equal(t, np.repeat(np.arange(t0, t0 + T), N))):
        raise DataError(f"{path}: rows must cover every node at every t, sorted by (t, node)")
    return table[:, 2:].reshape(T, N, d), t0


def write_truth(path, tau: int, C) -> None:
    write_json(path, {"tau": int(tau), "C": sorted(int(v) for v in C)})


def read_truth(path) -> tuple[int, set[int]]:
    obj = read_json(path)
    try:
        return int(obj["tau"]), {int(v) for v in obj["C"]}
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{path}: ground truth needs integer 'tau' and a list 'C'") from None
