"""Binary checkpoint archive.

Layout::

    b"GEOCKPT1" | uint32 LE header length | JSON header | raw arrays

The header (sorted keys, compact separators) records the format version,
configuration fingerprint, creation seed, an ``entries`` list of
``[name, shape]`` in file order, and a free-form ``meta`` object. Arrays follow
in the same order as little-endian float32, row-major. Saving what was loaded
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"GEOCKPT1"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    arrays: dict
    fingerprint: str
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def prefixed(self, prefix: str) -> dict:
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    names = sorted(ckpt.arrays)
    arrays = [np.asarray(ckpt.arrays[n], dtype=_DTYPE, order="C") for n in names]
    for n, a in zip(names, arrays):
        if not np.isfinite(a).all():
            raise CheckpointError(f"refusing to save non-finite parameter {n}")
    header = {
        "format_version": FORMAT_VERSION,
        "fingerprint": ckpt.fingerprint,
        "seed": int(ckpt.seed),
        "entries": [[n, list(a.shape)] for n, a in zip(names, arrays)],
        "meta": ckpt.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob] + [a.tobytes() for a in arrays]
    return b"".join(parts)


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        entries = header["entries"]
        version = header["format_version"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{source}: corrupt header ({exc})") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {version}")
    pos = start + hlen
    arrays = {}
    for name, shape in entries:
        n = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if pos + n > len(data):
            raise CheckpointError(f"{source}: truncated while reading {name}")
        arrays[name] = np.frombuffer(data[pos:pos + n], dtype=_DTYPE).reshape(shape).copy()
        pos += n
    if pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - pos} trailing bytes")
    return Checkpoint(arrays, header.get("fingerprint", ""), header.get("seed", 0),
                      header.get("meta", {}))


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path, expect_fingerprint: str | None = None, allow_mismatch: bool = False) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = from_bytes(data, str(path))
    if expect_fingerprint is not None and ckpt.fingerprint != expect_fingerprint and not allow_mismatch:
        raise CheckpointError(
            f"{path}: configuration fingerprint {ckpt.fingerprint} does not match "
            f"{expect_fingerprint}; pass allow_mismatch to override"
        )
    return ckpt
