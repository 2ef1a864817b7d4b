"""Executable checks of the B-map diffusion formulas against independent oracles.

The plain-DDPM functions here are written from the usual beta
parameterisation and deliberately share no code with
:mod:`bmapdiff.diffusion`; the reduction check compares the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffusion as dm
from .core import RngStream
from .denoiser import denoiser_init, gradient_check
from .schedule import BMapSpec, ScheduleTable, alpha_schedule, build_bmap_stack

POSTERIOR_TOL = 1e-3
MC_SE_TOL = 3.0
REDUCTION_TOL = 1e-8
REDUCTION_EPS_B = 1e-12
GRAD_TOL = 1e-4
KL_TIMESTEPS = (10, 50, 100, 150, 200)

# stream labels under the verify seed
_POSTERIOR, _RECURSION, _REDUCTION, _GRAD = 1, 2, 3, 4


def ddpm_forward(x0, t: int, sched: ScheduleTable, rng: RngStream) -> np.ndarray:
    ab = sched.alpha_bar[t]
    eps = rng.normal(np.shape(x0))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddpm_posterior(x_t, x0, t: int, sched: ScheduleTable):
    beta = sched.beta[t]
    ab = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    coef_x0 = beta * np.sqrt(ab_prev) / (1.0 - ab)
    coef_xt = (1.0 - ab_prev) * np.sqrt(sched.alpha[t]) / (1.0 - ab)
    var = beta * (1.0 - ab_prev) / (1.0 - ab)
    return coef_x0 * x0 + coef_xt * x_t, var


def ddpm_predict_x0(x_t, eps, t: int, sched: ScheduleTable):
    ab = sched.alpha_bar[t]
    return np.clip(np.sqrt(1.0 / ab) * x_t - np.sqrt(1.0 / ab - 1.0) * eps, -1.0, 1.0)


def ddpm_ancestral_sample(denoiser, sched: ScheduleTable, rng: RngStream, shape) -> np.ndarray:
    x = rng.normal(shape)
    for t in range(sched.T, 0, -1):
        x0 = ddpm_predict_x0(x, denoiser(x, t), t, sched)
        if t == 1:
            x = x0
        else:
            mean, var = ddpm_posterior(x, x0, t, sched)
            x = mean + np.sqrt(var) * rng.normal(shape)
    return np.clip(x, -1.0, 1.0)


def posterior_as_printed(x_t, x0, a_step, a_prev_bar):
    """Posterior mean with both factors under the square roots, as typeset
    in some write-ups. Used only as a negative control."""
    denom = 1.0 - a_step * a_prev_bar
    mu = (np.sqrt(a_step * (1.0 - a_prev_bar)) * x_t + np.sqrt(a_prev_bar * (1.0 - a_step)) * x0) / denom
    return mu, (1.0 - a_step) * (1.0 - a_prev_bar) / denom


@dataclass(frozen=True)
class Check:
    name: str
    tolerance: float
    observed: float

    @property
    def passed(self) -> bool:
        return bool(self.observed <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name} tolerance={self.tolerance!r} observed={self.observed!r} {status}"


def check_posterior(seed: int, n_draws: int = 100, posterior: Callable = dm.posterior_from_coeffs) -> list[Check]:
    rng = RngStream(seed, [_POSTERIOR])
    a = rng.uniform(0.01, 0.999, n_draws)
    ap = rng.uniform(0.01, 0.999, n_draws)
    xt = rng.uniform(-2.0, 2.0, n_draws)
    x0 = rng.uniform(-2.0, 2.0, n_draws)
    d_mu = d_var = 0.0
    for i in range(n_draws):
        mu, var = posterior(xt[i], x0[i], a[i], ap[i])
        mu_o, var_o = dm.posterior_bayes_oracle(xt[i], x0[i], a[i], ap[i])
        d_mu = max(d_mu, abs(float(mu) - mu_o))
        d_var = max(d_var, abs(float(var) - var_o))
    return [Check("posterior_mean_vs_bayes", POSTERIOR_TOL, d_mu), Check("posterior_var_vs_bayes", POSTERIOR_TOL, d_var)]


def check_recursion(seed: int, n_samples: int = 100_000, size: int = 8, T: int = 16, eps_b: float = 0.3) -> list[Check]:
    sched = alpha_schedule("cosine", T)
    stack = build_bmap_stack(sched, BMapSpec(size, size, eps_b))
    rng = RngStream(seed, [_RECURSION])
    x0 = rng.child(0).uniform(-1.0, 1.0, (size, size))
    rep = dm.iterated_equals_closed_check(x0, T, sched, stack, n_samples, rng.child(1))
    return [Check("recursion_mean_gap_se", MC_SE_TOL, rep.mean_gap_se), Check("recursion_var_gap_se", MC_SE_TOL, rep.var_gap_se)]


def check_reduction(seed: int, T: int = 50, size: int = 16, n_images: int = 4) -> list[Check]:
    sched = alpha_schedule("cosine", T)
    stack = build_bmap_stack(sched, BMapSpec(size, size, REDUCTION_EPS_B))
    rng = RngStream(seed, [_REDUCTION])
    x0 = rng.child(0).uniform(-1.0, 1.0, (n_images, size, size))

    fwd = 0.0
    for t in range(1, T + 1):
        ours = dm.forward_closed(x0, t, sched, stack, rng.child(1, t)).x_t
        ref = ddpm_forward(x0, t, sched, rng.child(1, t))
        fwd = max(fwd, float(np.abs(ours - ref).max()))

    post = 0.0
    xt = rng.child(2).normal((n_images, size, size))
    for t in range(2, T + 1):
        p = dm.posterior_params(xt, x0, t, sched, stack)
        mean, var = ddpm_posterior(xt, x0, t, sched)
        post = max(post, float(np.abs(p.mu - mean).max()), float(np.abs(p.sigma2 - var).max()))

    net = denoiser_init(size, size, 8, T, seed)
    net.tensors["conv4.w"] = 0.1 * rng.child(3).normal(net.tensors["conv4.w"].shape)
    ours = dm.ancestral_sample(net, sched, stack, rng.child(4), (n_images, size, size))
    ref = ddpm_ancestral_sample(net, sched, rng.child(4), (n_images, size, size))
    samp = float(np.abs(ours - ref).max())
    return [
        Check("reduction_forward_marginal", REDUCTION_TOL, fwd),
        Check("reduction_posterior", REDUCTION_TOL, post),
        Check("reduction_ancestral_sample", REDUCTION_TOL, samp),
    ]


def depth_kl_violations(stack, timesteps=KL_TIMESTEPS, x0_values=np.linspace(-1.0, 1.0, 21)) -> int:
    """Count broken depth-ordering conditions of the forward-marginal KL.

    For every tested step and constant clean value, KL to N(0, 1) must be
    non-increasing down every column (in-cone pixels only), and from
    ``t >= 50`` on it must strictly drop somewhere.
    """
    bad = 0
    mask = stack.mask
    for t in timesteps:
        if t > stack.T:
            continue
        for v in x0_values:
            kl = dm.marginal_kl(np.full(stack.shape, v), t, stack)
            for c in range(kl.shape[1]):
                col = kl[mask[:, c], c]
                steps = np.diff(col)
                if np.any(steps > 0):
                    bad += 1
                if t >= 50 and col.size > 1 and not np.any(steps < 0):
                    bad += 1
    return bad


def check_depth_kl(config) -> list[Check]:
    _, stack = config.build_schedule()
    return [Check("depth_ordered_kl_violations", 0.0, float(depth_kl_violations(stack)))]


def check_gradients(seed: int) -> list[Check]:
    size, hidden, T = 8, 8, 50
    rng = RngStream(seed, [_GRAD])
    params = denoiser_init(size, size, hidden, T, seed)
    # move off the zero-initialised last layer so every gradient is non-trivial
    jitter = rng.child(0)
    for k, v in params.tensors.items():
        params.tensors[k] = v + 0.2 * jitter.normal(v.shape)
    batch = (np.array([1, 17, 50]), rng.child(1).normal((3, size, size)), rng.child(2).normal((3, size, size)))
    return [Check(f"gradient_check_{params.n_params}_params", GRAD_TOL, gradient_check(params, batch))]


def run_checks(config, corrupt_posterior: bool = False) -> list[Check]:
    """Every oracle check for ``config``; deterministic given ``config.seed``."""
    posterior = posterior_as_printed if corrupt_posterior else dm.posterior_from_coeffs
    checks = []
    checks += check_posterior(config.seed, posterior=posterior)
    checks += check_recursion(config.seed, n_samples=config.verify_samples)
    checks += check_reduction(config.seed)
    checks += check_depth_kl(config)
    checks += check_gradients(config.seed)
    return checks
