"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"LECKPT1\\n"
    u32 entry count
    per entry: u16 name length, utf-8 name, u32 rank, u32 extents..., u64 payload offset
    payload: float64 little-endian arrays, concatenated in entry order

Offsets are relative to the start of the payload section.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LECKPT1\n"


class CheckpointError(ValueError):
    pass


def dumps(state: Mapping[str, np.ndarray]) -> bytes:
    header = [MAGIC, struct.pack("<I", len(state))]
    payload = []
    offset = 0
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        header.append(struct.pack("<Q", offset))
        payload.append(arr.tobytes())
        offset += arr.nbytes
    return b"".join(header + payload)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    entries = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        (offset,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        entries.append((name, shape, offset))
    state = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape)) if shape else 1
        start = pos + offset
        if start + 8 * count > len(blob):
            raise CheckpointError(f"truncated payload for {name}")
        state[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape).astype(np.float64)
    return state


def save(path: str | Path, state: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
