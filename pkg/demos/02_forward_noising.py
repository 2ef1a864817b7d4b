"""
Forward noising from the bottom up
==================================

The closed-form marginal noises a phantom in one shot. With B-maps the
bottom of the image reaches pure noise well before the top.
"""

import numpy as np

from bmapdiff import BMapSpec, PhantomSpec, RngStream, alpha_schedule, build_bmap_stack, forward_closed, forward_step
from bmapdiff.phantom import depth_profile, phantom_generate

T = 200
sched = alpha_schedule("cosine", T)
stack = build_bmap_stack(sched, BMapSpec(32, 32, eps_b=0.04))

# a speckled phantom whose brightness decays with depth
x0 = phantom_generate(PhantomSpec(32, 32, mu_att=0.05), RngStream(0))
print("clean row means (every 8th row):", np.round(depth_profile(x0)[::8], 3))

# correlation with the clean image, top third versus bottom third
for t in (20, 60, 100, 140, 180):
    xt = forward_closed(x0, t, sched, stack, RngStream(1, [t])).x_t
    top = np.corrcoef(xt[:10].ravel(), x0[:10].ravel())[0, 1]
    bottom = np.corrcoef(xt[-10:].ravel(), x0[-10:].ravel())[0, 1]
    print(f"t={t:3d}  corr top {top:.3f}  bottom {bottom:.3f}")

# chaining one-step kernels gives the same distribution as the closed form
chain = np.broadcast_to(x0, (4000, 32, 32))
rng = RngStream(2)
for s in range(1, 51):
    chain = forward_step(chain, s, sched, stack, rng)
closed = forward_closed(np.broadcast_to(x0, (4000, 32, 32)), 50, sched, stack, RngStream(3)).x_t
print("step-by-step vs closed form at t=50, bottom-row variance:",
      chain[:, -1].var().round(4), closed[:, -1].var().round(4))
