"""Flat binary checkpoint format for named float64 tensors.

Layout: 4-byte magic ``FDT1``, then one record per tensor until EOF:
name length (u64 LE), utf-8 name bytes, rank (u64 LE), one extent per
axis (u64 LE each), then the row-major float64 little-endian payload.
Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FDT1"


class CheckpointError(RuntimeError):
    pass


def save_tensors(path, named):
    """Write an ordered mapping of name -> ndarray."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in named.items():
            # tobytes() emits C order itself; ascontiguousarray would
            # promote rank-0 arrays to rank 1 and break scalar round-trips
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(arr.tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_tensors(path):
    """Read a checkpoint back into a dict of name -> float64 ndarray."""
    out = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        while True:
            head = f.read(8)
            if not head:
                break
            if len(head) != 8:
                raise CheckpointError("truncated checkpoint while reading name length")
            (name_len,) = struct.unpack("<Q", head)
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(f, 8, "rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exact(f, 8, "extent"))[0] for _ in range(rank)
            )
            count = 1
            for extent in shape:
                count *= extent
            payload = _read_exact(f, count * 8, f"data of {name}")
            if name in out:
                raise CheckpointError(f"duplicate tensor name {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return out
