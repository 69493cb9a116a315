"""
Overfitting one synthetic low-light pair
========================================

A short Adam run on a single image pair. The gain in PSNR shows the whole
model, losses included, is wired together and trainable. Takes about a
minute on one CPU core.
"""

from evrwkv import RunConfig, train_toy
from evrwkv.pipeline import event_voxels
from evrwkv.synthetic import make_pair

cfg = RunConfig(seed=0)
pair = make_pair(seed=0, height=64, width=64)
voxel = event_voxels(pair.events, cfg)

res = train_toy(pair.low, pair.sharp, voxel, cfg, steps=150, log_every=25)
print(f"PSNR {res.psnr_start:.2f} dB -> {res.psnr_end:.2f} dB over {len(res.losses)} steps")
print(f"loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}")
