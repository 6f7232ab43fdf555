"""Binary containers for standardized matrices and diagnostic traces.

Both formats are deterministic byte-for-byte given identical inputs:
an 8-byte magic, a little-endian uint32 header length, a compact JSON
header with sorted keys, then raw little-endian float64 blocks.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .panel import PredictorMatrix

MATRIX_MAGIC = b"PSXMAT01"
COLUMN_MAGIC = b"PSXCOL01"


class CacheError(ValueError):
    """Corrupt or mismatched cache file."""


def _pack_header(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _read_header(fh, magic: bytes) -> dict:
    got = fh.read(len(magic))
    if got != magic:
        raise CacheError(f"bad magic {got!r}; expected {magic!r}")
    (length,) = struct.unpack("<I", fh.read(4))
    return json.loads(fh.read(length).decode("utf-8"))


def write_matrix_cache(path, matrices: dict) -> None:
    """Persist per-month standardized predictor matrices."""
    months = sorted(matrices)
    names = list(matrices[months[0]].predictor_names)
    header = {
        "version": 1,
        "months": months,
        "predictor_names": names,
        "blocks": {},
    }
    offset = 0
    for m in months:
        X = matrices[m]
        if list(X.predictor_names) != names:
            raise CacheError("predictor names differ across months")
        header["blocks"][str(m)] = {
            "firms": list(X.firm_ids),
            "rows": X.n_firms,
            "offset": offset,
            "degenerate": [bool(b) for b in X.degenerate],
        }
        offset += X.n_firms * len(names) * 8
    blob = _pack_header(header)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for m in months:
            fh.write(np.ascontiguousarray(matrices[m].values, dtype="<f8").tobytes())


def read_matrix_cache(path) -> dict:
    """Load a matrix cache written by :func:`write_matrix_cache`."""
    with open(path, "rb") as fh:
        header = _read_header(fh, MATRIX_MAGIC)
        names = tuple(header["predictor_names"])
        out = {}
        for m in header["months"]:
            block = header["blocks"][str(m)]
            count = block["rows"] * len(names)
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(
                block["rows"], len(names)
            )
            out[int(m)] = PredictorMatrix(
                month=int(m),
                firm_ids=tuple(block["firms"]),
                values=data.astype(np.float64),
                predictor_names=names,
                degenerate=np.asarray(block["degenerate"], dtype=bool),
            )
    return out


def write_column_file(path, columns: dict) -> None:
    """Persist named 1-D float arrays (diagnostic traces)."""
    header = {"version": 1, "columns": []}
    offset = 0
    for name in sorted(columns):
        arr = np.asarray(columns[name], dtype=np.float64).ravel()
        header["columns"].append({"name": name, "offset": offset, "length": arr.shape[0]})
        offset += arr.shape[0] * 8
    blob = _pack_header(header)
    with open(path, "wb") as fh:
        fh.write(COLUMN_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in sorted(columns):
            fh.write(np.ascontiguousarray(columns[name], dtype="<f8").ravel().tobytes())


def read_column_file(path) -> dict:
    with open(path, "rb") as fh:
        header = _read_header(fh, COLUMN_MAGIC)
        out = {}
        for col in header["columns"]:
            data = np.frombuffer(fh.read(col["length"] * 8), dtype="<f8")
            out[col["name"]] = data.astype(np.float64)
    return out
