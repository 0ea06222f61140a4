"""Atomic artifact writes: CSV tables, JSON manifests, network checkpoints.

All writes go to a temporary file first, then are renamed into place
so a crash mid-write never leaves a half-written artifact behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel

from .models import NetworkArchitecture

# 17 significant digits round-trip every IEEE double exactly.
_FLOAT_FORMAT = ".17g"


def resolve_path(path: str | Path) -> Path:
    """Return an absolute Path."""
    return Path(path).expanduser().resolve()


def _atomic_write_bytes(path: str | Path, payload: bytes) -> Path:
    p = resolve_path(path)
    p.parent.mkdir(parents=True, exist_ok=True)

    fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp", prefix=f".{p.stem}_")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        # os.replace() is atomic on the same filesystem and overwrites on Windows.
        os.replace(tmp, p)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return p


def format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), _FLOAT_FORMAT)
    if value is None:
        return ""
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Atomically write a CSV table with full-precision floats."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        writer.writerow([format_value(v) for v in row])
    return _atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))


def write_json(path: str | Path, data: BaseModel | dict[str, Any]) -> Path:
    """Atomically write a pydantic model or plain dict as indented JSON."""
    if isinstance(data, BaseModel):
        text = data.model_dump_json(indent=2)
    else:
        text = json.dumps(data, indent=2, sort_keys=True, default=_json_default)
    return _atomic_write_bytes(path, (text + "\n").encode("utf-8"))


def _json_default(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with resolve_path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, [row for row in reader]


# ── Checkpoints ──────────────────────────────────────────────


def save_network(path: str | Path, arch: NetworkArchitecture, flat_params: np.ndarray) -> Path:
    """Write ``<path>.npz`` (flat parameters) and ``<path>.json`` (architecture)."""
    base = resolve_path(path).with_suffix("")
    buffer = io.BytesIO()
    np.savez(buffer, theta=np.asarray(flat_params, dtype=float))
    _atomic_write_bytes(base.with_suffix(".npz"), buffer.getvalue())
    write_json(base.with_suffix(".json"), arch)
    return base.with_suffix(".npz")


def load_network(path: str | Path) -> tuple[NetworkArchitecture, np.ndarray]:
    base = resolve_path(path).with_suffix("")
    arch = NetworkArchitecture.model_validate_json(base.with_suffix(".json").read_text(encoding="utf-8"))
    with np.load(base.with_suffix(".npz")) as data:
        theta = np.array(data["theta"], dtype=float)
    if theta.size != arch.n_params:
        raise ValueError(f"checkpoint holds {theta.size} parameters, architecture needs {arch.n_params}")
    return arch, theta


def save_arrays(path: str | Path, **arrays: np.ndarray) -> Path:
    """Atomically write a ``.npz`` bundle (used for snapshot checkpoints)."""
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    return _atomic_write_bytes(resolve_path(path).with_suffix(".npz"), buffer.getvalue())
