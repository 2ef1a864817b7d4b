"""
PSNR, SSIM and the Frechet distance
===================================

Metrics work on images in [0, 1]. The Frechet distance compares Gaussian
fits of an embedding; the built-in embedding is the 8x8 grid of block
means, and features from any external network can be loaded instead.
"""

import numpy as np

from bmapdiff import PhantomSpec, feature_embed, frechet_distance, phantom_dataset, psnr, ssim, to_unit

clean = [to_unit(x) for x in phantom_dataset(40, PhantomSpec(32, 32, mu_att=0.05), seed=0)]
other = [to_unit(x) for x in phantom_dataset(40, PhantomSpec(32, 32, mu_att=0.05), seed=1)]
flat = [to_unit(x) for x in phantom_dataset(40, PhantomSpec(32, 32, mu_att=0.0), seed=1)]

rng = np.random.default_rng(0)
for sigma in (0.01, 0.05, 0.1):
    noisy = np.clip(clean[0] + sigma * rng.standard_normal(clean[0].shape), 0, 1)
    print(f"noise {sigma:.2f}: PSNR {psnr(clean[0], noisy):6.2f} dB  SSIM {ssim(clean[0], noisy):.3f}")

ref = feature_embed(clean)
print("Frechet, same generator, new seed:", round(frechet_distance(ref, feature_embed(other)), 4))
print("Frechet, no attenuation:          ", round(frechet_distance(ref, feature_embed(flat)), 4))
