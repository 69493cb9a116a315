"""
From an event stream to a voxel grid
====================================

Writes a synthetic stream to disk in both supported formats, reads it back
and bins it into a time-by-pixel grid.
"""

import tempfile
from pathlib import Path

import numpy as np

from evrwkv import normalize_voxel, parse_events, voxelize, write_events
from evrwkv.synthetic import make_pair

pair = make_pair(seed=0, height=32, width=32)
events = pair.events
print(f"{len(events.t)} events, {np.sum(events.p > 0)} positive")

with tempfile.TemporaryDirectory() as d:
    for name in ("events.csv", "events.bin"):
        path = Path(d) / name
        write_events(events, path)
        back = parse_events(path)
        print(name, path.stat().st_size, "bytes, round trip exact:", np.array_equal(back.t, events.t))

grid = voxelize(events, bins=8)
# each event splits its polarity between the two nearest time bins
print("grid shape", grid.data.shape)
print("sum of grid", grid.data.sum(), "sum of polarities", events.p.sum())
print("per-bin totals", np.round(grid.data.sum(axis=(1, 2)), 2))
print("after max_abs normalisation, peak =", np.abs(normalize_voxel(grid, "max_abs").data).max())
