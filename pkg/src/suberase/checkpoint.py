"""Binary checkpoint files: named float64 arrays, bit-exact round trip.

Layout: magic ``SEDC``, version u32, then repeated records of
(name length u32, name bytes, rank u32, dims u64 each, row-major
little-endian f64 payload). Records are written sorted by name so the
same state always produces identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SEDC"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    out: dict[str, np.ndarray] = {}
    off = 8
    end = len(blob)
    while off < end:
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            if len(blob[off : off + nlen]) != nlen:
                raise struct.error("short name")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            count = 1
            for d in dims:
                count *= d
            payload = blob[off : off + 8 * count]
            if len(payload) != 8 * count:
                raise struct.error("short payload")
            off += 8 * count
        except struct.error as e:
            raise CheckpointError(f"{path}: truncated record ({e})") from None
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return out
