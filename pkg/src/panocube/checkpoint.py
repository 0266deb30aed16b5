"""CPAN1 checkpoint format.

Layout: 5-byte magic ``CPAN1``, little-endian uint64 header length, UTF-8 JSON
header, then the raw little-endian array blobs.  The header carries arbitrary
metadata plus a manifest of ``{name, shape, dtype, offset}`` entries whose
offsets are relative to the blob region.  Offsets must be non-overlapping and
in bounds; a reload reproduces every array bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError

__all__ = ["MAGIC", "save_arrays", "load_arrays"]

MAGIC = b"CPAN1"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus JSON-serializable metadata."""
    manifest = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        raw = arr.astype(_DTYPES[arr.dtype.name]).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    header = dict(meta)
    header["manifest"] = manifest
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a CPAN1 file back into ``(arrays, metadata)``; validates layout."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"checkpoint {path} is truncated")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"checkpoint {path} has magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}"
        )
    hlen = int.from_bytes(raw[len(MAGIC) : len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    if header_start + hlen > len(raw):
        raise CheckpointError(f"checkpoint {path} header extends past end of file")
    try:
        header = json.loads(raw[header_start : header_start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint {path} has a corrupt header: {e}") from None
    if "manifest" not in header:
        raise CheckpointError(f"checkpoint {path} lacks a manifest")
    blob = raw[header_start + hlen :]

    spans = []
    arrays: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        for key in ("name", "shape", "dtype", "offset"):
            if key not in entry:
                raise CheckpointError(f"manifest entry missing {key!r}")
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise CheckpointError(f"manifest entry {entry['name']!r} has bad dtype {dtype!r}")
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(_DTYPES[dtype]).itemsize
        start = int(entry["offset"])
        end = start + nbytes
        if start < 0 or end > len(blob):
            raise CheckpointError(
                f"array {entry['name']!r} spans [{start}, {end}) outside blob of {len(blob)} bytes"
            )
        spans.append((start, end, entry["name"]))
        arr = np.frombuffer(blob, dtype=_DTYPES[dtype], count=int(np.prod(shape, dtype=np.int64)),
                            offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(dtype)
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if e0 > s1:
            raise CheckpointError(f"arrays {n0!r} and {n1!r} overlap in the blob region")
    meta = {k: v for k, v in header.items() if k != "manifest"}
    return arrays, meta
