"""Raw tensor dumps: a little-endian flat buffer plus a JSON sidecar.

A dump of array ``X`` to base path ``p`` writes ``p.bin`` (the row-major
element bytes, little-endian) and ``p.json`` holding
``{"dtype": <tag>, "shape": [...], "layout": "row-major"}``.  The format
is deliberately trivial so dumps can be diffed byte-for-byte and read
from any language without this package.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dtypes import tag_of, to_numpy
from .errors import DataError

__all__ = ["dump_tensor", "load_tensor"]

_LAYOUT = "row-major"


def dump_tensor(arr: np.ndarray, base: str | Path) -> Path:
    """Write ``base``.bin / ``base``.json; returns the .bin path."""
    base = Path(base)
    try:
        tag = tag_of(arr)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    contig = np.ascontiguousarray(arr)
    if contig.dtype.byteorder == ">":  # pragma: no cover - big-endian hosts only
        contig = contig.astype(contig.dtype.newbyteorder("<"))
    raw_path = base.with_suffix(".bin")
    raw_path.write_bytes(contig.tobytes())
    sidecar = {"dtype": tag, "shape": list(arr.shape), "layout": _LAYOUT}
    base.with_suffix(".json").write_text(json.dumps(sidecar))
    return raw_path


def load_tensor(base: str | Path) -> np.ndarray:
    """Read a dump written by :func:`dump_tensor`."""
    base = Path(base)
    sidecar_path = base.with_suffix(".json")
    raw_path = base.with_suffix(".bin")
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except OSError as exc:
        raise DataError(f"cannot read tensor sidecar {sidecar_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"tensor sidecar {sidecar_path} is not JSON: {exc}") from None
    if sidecar.get("layout") != _LAYOUT:
        raise DataError(f"unsupported tensor layout {sidecar.get('layout')!r}")
    try:
        dtype = to_numpy(sidecar["dtype"])
        shape = tuple(int(d) for d in sidecar["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad tensor sidecar {sidecar_path}: {exc}") from None
    try:
        raw = raw_path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor data {raw_path}: {exc}") from None
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
    if len(raw) != expected:
        raise DataError(
            f"tensor data {raw_path} holds {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
