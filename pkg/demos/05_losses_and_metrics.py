"""
Image-quality losses and metrics
================================
"""

import numpy as np

from evrwkv.losses import LossWeights, ms_ssim_index, psnr, ssim_index, total_loss

rng = np.random.default_rng(0)
clean = rng.uniform(size=(3, 64, 64))

for noise in (0.0, 0.02, 0.1, 0.3):
    noisy = np.clip(clean + noise * rng.normal(size=clean.shape), 0, 1)
    print(f"noise {noise:4.2f}: PSNR {psnr(noisy, clean):6.2f} dB  "
          f"SSIM {ssim_index(noisy, clean):.4f}  MS-SSIM {ms_ssim_index(noisy, clean):.4f}")

# training objective, split into its terms
parts = {}
noisy = np.clip(clean + 0.1 * rng.normal(size=clean.shape), 0, 1)
total = total_loss(noisy, clean, LossWeights(), parts=parts)
for name, value in parts.items():
    print(f"{name:15s} {value:.4f}")
print("weighted total ", float(total.data))
