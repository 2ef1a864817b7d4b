"""Forward noising, reverse posterior and ancestral sampling with B-maps.

Every coefficient is per pixel. Writing ``a_t = alpha_t * B_t`` for the
one-step signal gain and ``c_t = alpha_bar_t * B_bar_t`` for the cumulative
one, the one-step kernel is

    x_t = sqrt(a_t) * x_{t-1} + sqrt(1 - a_t) * eps

and the marginal is ``x_t = sqrt(c_t) * x_0 + sqrt(1 - c_t) * eps``. With
``B = 1`` everything collapses to plain DDPM.

Functions accept a single ``(H, W)`` grid or a ``(N, H, W)`` batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DimensionError, NumericDegenerateError, RngStream
from .schedule import BMapStack, ScheduleTable

DEGENERATE = 1e-12


@dataclass(frozen=True)
class ForwardSample:
    x_t: np.ndarray
    eps: np.ndarray
    t: int


@dataclass(frozen=True)
class PosteriorParams:
    mu: np.ndarray
    sigma2: np.ndarray


def _check(x, sched: ScheduleTable, stack: BMapStack, t: int, low: int = 1):
    if sched.T != stack.T:
        raise DimensionError(f"schedule has T={sched.T} but B-map stack has T={stack.T}")
    stack.check_t(t, low)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != stack.shape:
        raise DimensionError(f"grid shape {x.shape[-2:]} does not match B-maps {stack.shape}")
    return x


def step_coeff(t: int, sched: ScheduleTable, stack: BMapStack) -> np.ndarray:
    """One-step signal gain ``alpha_t * B_t``."""
    return sched.alpha[t] * stack.B[t]


def forward_step(x_prev, t: int, sched: ScheduleTable, stack: BMapStack, rng: RngStream) -> np.ndarray:
    x_prev = _check(x_prev, sched, stack, t)
    a = step_coeff(t, sched, stack)
    eps = rng.normal(x_prev.shape)
    return np.sqrt(a) * x_prev + np.sqrt(1.0 - a) * eps


def forward_closed(x0, t: int, sched: ScheduleTable, stack: BMapStack, rng: RngStream) -> ForwardSample:
    """Sample ``x_t`` directly from the marginal given ``x_0``."""
    x0 = _check(x0, sched, stack, t)
    c = stack.signal_coeff[t]
    eps = rng.normal(x0.shape)
    return ForwardSample(np.sqrt(c) * x0 + np.sqrt(1.0 - c) * eps, eps, t)


def marginal_kl(x0, t: int, stack: BMapStack) -> np.ndarray:
    """Per-pixel KL( q(x_t | x_0) || N(0, 1) ).

    Equals ``0.5 * (c x0^2 - c - log(1 - c))``, which is increasing in the
    signal coefficient ``c``, so it falls with depth whenever B-maps do.
    """
    stack.check_t(t, 0)
    c = stack.signal_coeff[t]
    x0 = np.asarray(x0, dtype=np.float64)
    return 0.5 * (c * x0**2 - c - np.log1p(-c))


@dataclass(frozen=True)
class ConsistencyReport:
    n_samples: int
    max_mean_gap: float = float("nan")
    max_var_gap: float = float("nan")
    mean_gap_se: float = float("nan")  # worst gap in standard errors
    var_gap_se: float = float("nan")
    error: str | None = None

    def passed(self, n_se: float = 3.0) -> bool:
        return self.error is None and self.mean_gap_se <= n_se and self.var_gap_se <= n_se


def iterated_equals_closed_check(
    x0, t: int, sched: ScheduleTable, stack: BMapStack, n_samples: int, rng: RngStream
) -> ConsistencyReport:
    """Monte-Carlo comparison of ``t`` chained one-step kernels with the marginal.

    Gaps are reported both raw and in units of their standard error; the
    variance SE uses the empirical fourth central moment of each sample.
    """
    if n_samples < 2:
        return ConsistencyReport(n_samples, error="need at least two samples")
    x0 = _check(x0, sched, stack, t)
    batch = np.broadcast_to(x0, (n_samples,) + x0.shape)

    chain_rng = rng.child(0)
    x = batch
    for s in range(1, t + 1):
        x = forward_step(x, s, sched, stack, chain_rng)
    closed = forward_closed(batch, t, sched, stack, rng.child(1)).x_t

    stats = []
    for sample in (x, closed):
        m = sample.mean(axis=0)
        dev = sample - m
        v = (dev**2).sum(axis=0) / (n_samples - 1)
        m4 = (dev**4).mean(axis=0)
        stats.append((m, v, m4))
    (m1, v1, q1), (m2, v2, q2) = stats
    mean_gap = np.abs(m1 - m2)
    var_gap = np.abs(v1 - v2)
    mean_se = np.sqrt((v1 + v2) / n_samples)
    var_se = np.sqrt((q1 - v1**2 + q2 - v2**2) / n_samples)
    return ConsistencyReport(
        n_samples,
        float(mean_gap.max()),
        float(var_gap.max()),
        float((mean_gap / mean_se).max()),
        float((var_gap / var_se).max()),
    )


def posterior_from_coeffs(x_t, x0, a_step, a_prev_bar) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian posterior q(x_{t-1} | x_t, x_0) from the one-step gain
    ``a_step`` and the previous cumulative gain ``a_prev_bar``."""
    a_step = np.asarray(a_step, dtype=np.float64)
    a_prev_bar = np.asarray(a_prev_bar, dtype=np.float64)
    denom = 1.0 - a_step * a_prev_bar
    if np.any(denom < DEGENERATE):
        raise NumericDegenerateError("1 - alpha_bar_t * B_bar_t vanishes")
    mu = (np.sqrt(a_step) * (1.0 - a_prev_bar) * x_t + np.sqrt(a_prev_bar) * (1.0 - a_step) * x0) / denom
    sigma2 = (1.0 - a_step) * (1.0 - a_prev_bar) / denom
    return mu, sigma2


def posterior_params(x_t, x0_hat, t: int, sched: ScheduleTable, stack: BMapStack) -> PosteriorParams:
    x_t = _check(x_t, sched, stack, t, low=2)
    mu, sigma2 = posterior_from_coeffs(
        x_t, np.asarray(x0_hat, dtype=np.float64), step_coeff(t, sched, stack), stack.signal_coeff[t - 1]
    )
    return PosteriorParams(mu, sigma2)


def posterior_bayes_oracle(
    x_t: float, x0: float, a_step: float, a_prev_bar: float, n_points: int = 8001, half_width: float = 8.0
) -> tuple[float, float]:
    """Posterior mean and variance by brute-force quadrature of Bayes' rule.

    Multiplies N(x_t; sqrt(a_step) x, 1 - a_step) by
    N(x; sqrt(a_prev_bar) x0, 1 - a_prev_bar) on a uniform grid and takes
    the moments of the normalised product. Shares no algebra with
    :func:`posterior_from_coeffs`.
    """
    x = np.linspace(-half_width, half_width, max(int(n_points), 4001))
    log_lik = -((x_t - np.sqrt(a_step) * x) ** 2) / (2.0 * (1.0 - a_step))
    log_prior = -((x - np.sqrt(a_prev_bar) * x0) ** 2) / (2.0 * (1.0 - a_prev_bar))
    log_w = log_lik + log_prior
    w = np.exp(log_w - log_w.max())
    z = np.trapezoid(w, x)
    mean = np.trapezoid(x * w, x) / z
    var = np.trapezoid((x - mean) ** 2 * w, x) / z
    return float(mean), float(var)


def predict_x0_from_eps(x_t, eps_hat, t: int, sched: ScheduleTable, stack: BMapStack, clip: bool = True) -> np.ndarray:
    """Invert the marginal for ``x_0``.

    Pixels whose signal coefficient is below 1e-12 carry no recoverable
    signal and get the prior mean 0.
    """
    x_t = _check(x_t, sched, stack, t)
    c = stack.signal_coeff[t]
    ok = c > DEGENERATE
    safe_c = np.where(ok, c, 1.0)
    x0 = (x_t - np.sqrt(1.0 - c) * eps_hat) / np.sqrt(safe_c)
    x0 = np.where(ok, x0, 0.0)
    if clip:
        x0 = np.clip(x0, -1.0, 1.0)
    return x0


Denoiser = Callable[[np.ndarray, int], np.ndarray]


def ancestral_sample(
    denoiser: Denoiser,
    sched: ScheduleTable,
    stack: BMapStack,
    rng: RngStream,
    shape=None,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Run the reverse chain from pure noise down to ``x_0``.

    ``denoiser(x_t, t)`` returns the predicted noise. ``shape`` is
    ``(H, W)`` or ``(N, H, W)`` and defaults to one grid. The last step
    returns the clamped ``x_0`` estimate without fresh noise.
    ``callback(t, x_t)`` sees the state after each step, starting with
    ``x_T``.

    Noise is drawn from ``rng`` in a fixed order: ``x_T`` first, then one
    field per step for ``t = T..2``.
    """
    if sched.T != stack.T:
        raise DimensionError(f"schedule has T={sched.T} but B-map stack has T={stack.T}")
    shape = tuple(stack.shape) if shape is None else tuple(shape)
    if shape[-2:] != stack.shape:
        raise DimensionError(f"sample shape {shape} does not match B-maps {stack.shape}")
    x = rng.normal(shape)
    if callback is not None:
        callback(stack.T, x)
    for t in range(stack.T, 0, -1):
        x0_hat = predict_x0_from_eps(x, denoiser(x, t), t, sched, stack)
        if t > 1:
            post = posterior_params(x, x0_hat, t, sched, stack)
            x = post.mu + np.sqrt(post.sigma2) * rng.normal(shape)
        else:
            x = x0_hat
        if callback is not None:
            callback(t - 1, x)
    return np.clip(x, -1.0, 1.0)


def training_pair(x0, sched: ScheduleTable, stack: BMapStack, rng: RngStream) -> tuple[int, np.ndarray, np.ndarray]:
    """Draw ``t`` uniformly from ``1..T`` and noise ``x0`` to that step."""
    t = int(rng.integers(1, stack.T + 1))
    fs = forward_closed(x0, t, sched, stack, rng)
    return t, fs.x_t, fs.eps
