"""Binary video formats.

``.vten``: one dense float64 tensor — magic ``VTEN``, version u32,
rank u32, dims u64 each, row-major little-endian f64 payload.

``.svid``: an append-only frame stream — magic ``SVID``, version u32,
height/width/channels u32, then repeated records of (frame_index u64,
little-endian f64 frame payload). Any prefix that ends mid-record still
decodes to the frames written so far.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

VTEN_MAGIC = b"VTEN"
SVID_MAGIC = b"SVID"
VERSION = 1


class FormatError(Exception):
    pass


def write_vten(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(VTEN_MAGIC)
        f.write(struct.pack("<II", VERSION, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        f.write(arr.astype("<f8", copy=False).tobytes())


def read_vten(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    shape, off = _parse_vten_header(blob, path)
    count = int(np.prod(shape)) if shape else 1
    payload = blob[off : off + 8 * count]
    if len(payload) != 8 * count:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def _parse_vten_header(blob: bytes, path) -> tuple[tuple[int, ...], int]:
    if blob[:4] != VTEN_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, rank = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        shape = struct.unpack_from(f"<{rank}Q", blob, 12)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    return tuple(int(d) for d in shape), 12 + 8 * rank


class SvidWriter:
    """Appends frame records, flushing after each so prefixes stay valid."""

    def __init__(self, path, height: int, width: int, channels: int):
        self.height, self.width, self.channels = height, width, channels
        self._next_index = 0
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(path, "wb")
        self._f.write(SVID_MAGIC)
        self._f.write(struct.pack("<IIII", VERSION, height, width, channels))
        self._f.flush()

    def append(self, frame: np.ndarray) -> None:
        expect = (self.height, self.width, self.channels)
        if frame.shape != expect:
            raise FormatError(f"frame shape {frame.shape} != {expect}")
        self._f.write(struct.pack("<Q", self._next_index))
        self._f.write(np.ascontiguousarray(frame, dtype="<f8").tobytes())
        self._f.flush()
        self._next_index += 1

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_svid(path) -> np.ndarray:
    """Decode all complete frame records; a truncated tail is ignored."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != SVID_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    try:
        version, h, w, c = struct.unpack_from("<IIII", blob, 4)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    rec = 8 + 8 * h * w * c
    off = 20
    frames = []
    while off + rec <= len(blob):
        (idx,) = struct.unpack_from("<Q", blob, off)
        if idx != len(frames):
            raise FormatError(f"{path}: non-sequential frame index {idx}")
        frames.append(np.frombuffer(blob[off + 8 : off + rec], dtype="<f8").reshape(h, w, c))
        off += rec
    if not frames:
        return np.zeros((0, h, w, c))
    return np.stack(frames).copy()


class FrameSource:
    """Random-access frames from a .vten/.svid file or an in-memory video.

    Tracks the peak number of frames resident at once so streaming code
    can assert its memory bound.
    """

    def __init__(self, source):
        self._path = None
        self._video = None
        self.peak_resident = 0
        if isinstance(source, np.ndarray):
            if source.ndim != 4:
                raise FormatError(f"expected (F,H,W,C) video, got shape {source.shape}")
            self._video = source
            self.shape = source.shape
            self._kind = "memory"
            return
        path = Path(source)
        self._path = path
        with open(path, "rb") as f:
            blob_head = f.read(64)
        if blob_head[:4] == VTEN_MAGIC:
            with open(path, "rb") as f:
                shape, off = _parse_vten_header(f.read(64), path)
            if len(shape) != 4:
                raise FormatError(f"{path}: expected rank-4 video, got {shape}")
            self.shape = shape
            self._payload_off = off
            self._kind = "vten"
        elif blob_head[:4] == SVID_MAGIC:
            version, h, w, c = struct.unpack_from("<IIII", blob_head, 4)
            if version != VERSION:
                raise FormatError(f"{path}: unsupported version {version}")
            rec = 8 + 8 * h * w * c
            size = path.stat().st_size
            nframes = (size - 20) // rec
            self.shape = (int(nframes), h, w, c)
            self._payload_off = 20
            self._rec = rec
            self._kind = "svid"
        else:
            raise FormatError(f"{path}: unrecognized magic {blob_head[:4]!r}")

    @property
    def frames(self) -> int:
        return self.shape[0]

    def read(self, start: int, end: int) -> np.ndarray:
        """Frames [start, end] inclusive, shape (end-start+1, H, W, C)."""
        if not (0 <= start <= end < self.frames):
            raise IndexError(f"frame range [{start}, {end}] out of [0, {self.frames})")
        n = end - start + 1
        self.peak_resident = max(self.peak_resident, n)
        f_, h, w, c = self.shape
        if self._kind == "memory":
            return self._video[start : end + 1].astype(np.float64, copy=True)
        frame_bytes = 8 * h * w * c
        with open(self._path, "rb") as f:
            if self._kind == "vten":
                f.seek(self._payload_off + start * frame_bytes)
                raw = f.read(n * frame_bytes)
                return np.frombuffer(raw, dtype="<f8").reshape(n, h, w, c).copy()
            out = np.empty((n, h, w, c))
            for i in range(n):
                f.seek(self._payload_off + (start + i) * self._rec + 8)
                out[i] = np.frombuffer(f.read(frame_bytes), dtype="<f8").reshape(h, w, c)
            return out

    def iter_pairs(self):
        """Yield (i, frame_i, frame_i+1) holding two frames at a time."""
        prev = self.read(0, 0)[0]
        for i in range(1, self.frames):
            self.peak_resident = max(self.peak_resident, 2)
            cur = self.read(i, i)[0]
            yield i - 1, prev, cur
            prev = cur
