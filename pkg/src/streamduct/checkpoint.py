"""Single-file checkpoints: JSON header + raw little-endian float64 payload.

Layout: magic "DMCK" | u32 header length | header JSON (UTF-8) | payload.
The header records the format version, step, an experiment-config snapshot
and, per named array, shape, kind ("param" or "state") and byte offset into
the payload.  Writes are atomic (temp file + rename) and byte-for-byte
reproducible, so save -> load -> save round-trips identically.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DMCK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict, state: dict, config_snapshot: dict, step: int) -> None:
    """Write named parameter and state arrays plus the config snapshot."""
    path = Path(path)
    entries = []
    payload = bytearray()
    for kind, table in (("param", params), ("state", state)):
        for name, arr in table.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            entries.append(
                {"name": name, "kind": kind, "shape": list(arr.shape), "offset": len(payload)}
            )
            payload.extend(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "step": step,
        "config": config_snapshot,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Read a checkpoint; returns (header dict, params dict, state dict)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError("checkpoint not found: %s" % path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError("bad checkpoint magic in %s" % path)
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("unsupported checkpoint format version %r" % header.get("format_version"))
    params, state = {}, {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        hi = lo + count * 8
        if hi > len(payload):
            raise CheckpointError("truncated checkpoint payload in %s" % path)
        arr = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(shape).copy()
        (params if entry["kind"] == "param" else state)[entry["name"]] = arr
    return header, params, state


def restore_arrays(target: dict, source: dict, what: str) -> None:
    """Copy arrays from ``source`` into Tensors/arrays of ``target`` by name."""
    missing = [name for name in target if name not in source]
    extra = [name for name in source if name not in target]
    if missing or extra:
        raise CheckpointError(
            "%s mismatch: missing %s, unexpected %s" % (what, missing[:3], extra[:3])
        )
    for name, dest in target.items():
        src = source[name]
        dest_arr = dest.data if hasattr(dest, "data") else dest
        if tuple(dest_arr.shape) != tuple(src.shape):
            raise CheckpointError(
                "%s %r shape %s does not match model %s" % (what, name, src.shape, dest_arr.shape)
            )
    for name, dest in target.items():
        if hasattr(dest, "data"):
            dest.data = source[name].copy()
        else:
            dest[...] = source[name]
