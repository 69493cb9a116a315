"""Event streams and their voxel-grid encoding.

CSV files hold one ``t_us,x,y,p`` row per event (header optional, ``p`` in
{-1, 1} or {0, 1} with 0 read as -1). The binary format is a 4-byte magic
``EVT1``, little-endian ``u16`` height and width, then 13-byte records
``<u64 t, u16 x, u16 y, i8 p>``.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .imageio import atomic_write_bytes

log = logging.getLogger(__name__)

MAGIC = b"EVT1"
RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
DEFAULT_BINS = 32


class EventFormatError(ValueError):
    pass


@dataclass
class EventStream:
    t: np.ndarray  # int64 microseconds, non-decreasing
    x: np.ndarray  # int64 column
    y: np.ndarray  # int64 row
    p: np.ndarray  # int8, -1 or +1
    height: int
    width: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays differ in length")
        if n:
            if self.t.min() < 0:
                raise ValueError("timestamps must be non-negative")
            if not np.isin(self.p, (-1, 1)).all():
                raise ValueError("polarities must be -1 or +1")
            bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
            if bad.any():
                i = int(np.argmax(bad))
                raise ValueError(
                    f"event {i} at (x={self.x[i]}, y={self.y[i]}) outside {self.width}x{self.height} sensor"
                )
            if np.any(np.diff(self.t) < 0):
                order = np.argsort(self.t, kind="stable")
                self.t, self.x, self.y, self.p = self.t[order], self.x[order], self.y[order], self.p[order]

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class VoxelGrid:
    data: np.ndarray  # (B, H, W)
    t_start: float
    t_end: float
    dropped: int = 0  # events outside the window

    @property
    def bins(self) -> int:
        return self.data.shape[0]


def parse_events(path, format: str | None = None, height: int | None = None, width: int | None = None) -> EventStream:
    """Load a CSV or binary event file (format inferred from the extension if omitted)."""
    path = os.fspath(path)
    if format is None:
        format = "binary" if path.endswith((".bin", ".evt")) else "csv"
    if format == "csv":
        return _read_csv(path, height, width)
    if format == "binary":
        return _read_binary(path, height, width)
    raise ValueError(f"unknown event format {format!r}")


def _read_csv(path: str, height, width) -> EventStream:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [s.strip() for s in line.split(",")]
            if lineno == 1 and not parts[0].lstrip("-").isdigit():
                continue  # header
            if len(parts) != 4:
                raise EventFormatError(f"{path}:{lineno}: expected 4 fields t_us,x,y,p, got {len(parts)}")
            try:
                t, x, y, p = (int(s) for s in parts)
            except ValueError:
                raise EventFormatError(f"{path}:{lineno}: non-integer field in {line!r}") from None
            if p not in (-1, 0, 1):
                raise EventFormatError(f"{path}:{lineno}: polarity must be -1, 0 or 1, got {p}")
            if t < 0 or x < 0 or y < 0:
                raise EventFormatError(f"{path}:{lineno}: negative value in {line!r}")
            rows.append((t, x, y, 1 if p == 1 else -1))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    h = height if height is not None else (int(arr[:, 2].max()) + 1 if len(arr) else 0)
    w = width if width is not None else (int(arr[:, 1].max()) + 1 if len(arr) else 0)
    return EventStream(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], h, w)


def _read_binary(path: str, height, width) -> EventStream:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise EventFormatError(f"{path}: missing EVT1 header")
    h, w = struct.unpack("<HH", blob[4:8])
    body = blob[8:]
    if len(body) % RECORD.itemsize:
        raise EventFormatError(f"{path}: truncated record at byte {8 + len(body) // RECORD.itemsize * RECORD.itemsize}")
    rec = np.frombuffer(body, dtype=RECORD)
    if height is not None and height != h or width is not None and width != w:
        raise EventFormatError(f"{path}: header says {w}x{h}, caller expected {width}x{height}")
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], h, w)


def write_events(stream: EventStream, path, format: str | None = None) -> None:
    path = os.fspath(path)
    if format is None:
        format = "binary" if path.endswith((".bin", ".evt")) else "csv"
    if format == "csv":
        rows = [f"{t},{x},{y},{p}" for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p)]
        data = ("\n".join(["t_us,x,y,p"] + rows) + "\n").encode()
    elif format == "binary":
        rec = np.empty(len(stream), dtype=RECORD)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        data = MAGIC + struct.pack("<HH", stream.height, stream.width) + rec.tobytes()
    else:
        raise ValueError(f"unknown event format {format!r}")
    atomic_write_bytes(path, data)


def voxelize(events: EventStream, bins: int = DEFAULT_BINS, height: int | None = None, width: int | None = None,
             t_start: float | None = None, t_end: float | None = None) -> VoxelGrid:
    """Bilinear temporal binning into a (B, H, W) grid.

    Normalised time tau = (t - t_start) / (t_end - t_start) * (B - 1); an
    event adds (1 - frac(tau)) * p to bin floor(tau) and frac(tau) * p to the
    next bin. Events outside [t_start, t_end] are dropped. The window
    defaults to the first and last timestamps.
    """
    if bins < 1:
        raise ValueError(f"bin count must be >= 1, got {bins}")
    h = events.height if height is None else height
    w = events.width if width is None else width
    implicit = t_start is None and t_end is None
    if t_start is None:
        t_start = float(events.t[0]) if len(events) else 0.0
    if t_end is None:
        t_end = float(events.t[-1]) if len(events) else t_start + 1.0
    if implicit and t_end == t_start:
        t_end = t_start + 1.0  # every event shares one timestamp
    if not t_end > t_start:
        raise ValueError(f"degenerate event window [{t_start}, {t_end}]")
    grid = np.zeros((bins, h, w), dtype=np.float64)
    if not len(events):
        return VoxelGrid(grid, t_start, t_end)
    t = events.t.astype(np.float64)
    keep = (t >= t_start) & (t <= t_end)
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d of %d events outside window [%s, %s]", dropped, len(events), t_start, t_end)
    tau = (t[keep] - t_start) / (t_end - t_start) * (bins - 1)
    lo = np.floor(tau).astype(np.int64)
    frac = tau - lo
    p = events.p[keep].astype(np.float64)
    pix = events.y[keep] * w + events.x[keep]
    flat = grid.reshape(bins, h * w)
    np.add.at(flat, (lo, pix), p * (1.0 - frac))
    hi = lo + 1
    upper = hi < bins  # frac is 0 whenever hi == bins
    np.add.at(flat, (hi[upper], pix[upper]), (p * frac)[upper])
    return VoxelGrid(grid, t_start, t_end, dropped)


def normalize_voxel(v: VoxelGrid, mode: str = "none") -> VoxelGrid:
    """Scale by max |value| ("max_abs") or by the std of non-zero entries ("std")."""
    data = v.data
    if mode == "none":
        out = data.copy()
    elif mode == "max_abs":
        m = np.abs(data).max() if data.size else 0.0
        out = data / m if m > 0 else data.copy()
    elif mode == "std":
        nz = data[data != 0]
        s = nz.std() if nz.size else 0.0
        out = data / s if s > 0 else data.copy()
    else:
        raise ValueError(f"unknown voxel normalisation {mode!r}")
    return VoxelGrid(out, v.t_start, v.t_end, v.dropped)
