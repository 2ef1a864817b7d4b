"""
Training a small denoiser and sampling
======================================

A reduced run that finishes in well under a minute. The full desk-scale
run (64 phantoms, 32x32, T=200, 2000 iterations) is what
`bmapdiff train` does with its defaults.
"""

import numpy as np

from bmapdiff import PhantomSpec, RngStream, TrainConfig, ancestral_sample, phantom_dataset, train
from bmapdiff.io import write_pgm

data = phantom_dataset(32, PhantomSpec(16, 16, mu_att=0.1), seed=0)
cfg = TrainConfig(T=50, eps_b=0.04, iterations=600, lr=2e-3, hidden=8, seed=0)

params, losses = train(cfg, data)
print("parameters:", params.n_params)
print("mean loss, first 50 iterations:", round(float(np.mean(losses[:50])), 4))
print("mean loss, last 50 iterations: ", round(float(np.mean(losses[-50:])), 4))

# the reverse chain starts from pure noise; the callback sees every x_t
sched, stack = cfg.build_schedule(16, 16)
seen = {}
samples = ancestral_sample(params, sched, stack, RngStream(0, [1]), (8, 16, 16),
                           callback=lambda t, x: seen.setdefault(t, x.copy()))

# bottom rows stay noisier for longer on the way down
for t in (40, 20, 5):
    v = seen[t].var(axis=(0, 2))
    print(f"t={t:2d}  row variance top {v[:5].mean():.3f}  bottom {v[-5:].mean():.3f}")

top = samples[:, :5].mean(axis=(1, 2))
bottom = samples[:, -5:].mean(axis=(1, 2))
print("samples brighter at the top:", int(np.sum(top > bottom)), "of", len(samples))
write_pgm("demo_sample.pgm", samples[0])
