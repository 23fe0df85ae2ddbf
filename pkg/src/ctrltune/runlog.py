"""Run outputs: per-iteration CSV, timing CSV, summary JSON and binary checkpoints.

CSV values are written with ``repr`` of Python floats, which round-trips
exactly, so identical runs produce identical files. Wall-clock times live
in a separate timing file for the same reason.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .params import ParamSpace

__all__ = [
    "LOG_SCHEMA",
    "CHECKPOINT_VERSION",
    "CsvLog",
    "curve_columns",
    "read_curve",
    "write_summary",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

LOG_SCHEMA = "ctrltune-curve/1"
TIMING_SCHEMA = "ctrltune-timing/1"
CHECKPOINT_VERSION = 1
_MAGIC = b"CTRLTUNE"

BASE_COLUMNS = [
    "iteration",
    "env_steps",
    "train_cost",
    "behavior_cost",
    "eval_cost_mean",
    "eval_cost_std",
    "eval_terminated",
    "eval_pred_error",
    "actor_lr",
    "grad_norm",
    "critic_loss",
]


class CheckpointError(RuntimeError):
    pass


def curve_columns(space: ParamSpace) -> List[str]:
    return BASE_COLUMNS + [f"theta_{n}" for n in space.names]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class CsvLog:
    """Append-only CSV with a schema comment line; flushed after every row."""

    def __init__(self, path: Union[str, Path], columns: Sequence[str], schema: str = LOG_SCHEMA):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.columns = list(columns)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# schema={schema}\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        self._fh.flush()

    def __call__(self, row: dict):
        extra = set(row) - set(self.columns)
        if extra:
            raise KeyError(f"unexpected columns {sorted(extra)}")
        self._writer.writerow([_fmt(row.get(c)) for c in self.columns])
        self._fh.flush()

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_curve(path: Union[str, Path]) -> dict:
    """Load a curve CSV as ``{column: float array}`` (blank cells become NaN)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        out[name] = np.array([float(r[j]) if r[j] != "" else np.nan for r in rows])
    return out


def write_summary(path: Union[str, Path], summary: dict):
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def save_checkpoint(path: Union[str, Path], meta: dict, arrays: dict):
    """Versioned flat binary: magic, version, JSON header length + header, float64 payload.

    The header records each array's name and shape in payload order.
    """
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in arrays.items()}
    header = dict(meta)
    header["arrays"] = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(v.tobytes())


def load_checkpoint(path: Union[str, Path]):
    """Return ``(meta, arrays)`` from :func:`save_checkpoint` output."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(_MAGIC)
    try:
        version, n = struct.unpack_from("<II", data, off)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off += 8
        meta = json.loads(data[off:off + n].decode())
        off += n
        arrays = {}
        for spec in meta.pop("arrays"):
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            if off + 8 * count > len(data):
                raise CheckpointError(f"{path}: truncated payload")
            arrays[spec["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
            off += 8 * count
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if off != len(data):
        raise CheckpointError(f"{path}: trailing or missing payload bytes")
    return meta, arrays
