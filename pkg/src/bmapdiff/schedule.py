"""Time schedules for alpha and the depth-dependent B-map multipliers.

All per-timestep arrays are padded so that index ``t`` is timestep ``t``:
entry 0 holds the identity values of the clean image (beta 0, alpha 1,
B-map of ones) and entries ``1..T`` are the real steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DimensionError, ParameterError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 0.02

OUTSIDE_MODES = ("gamma", "one", "row-value")
GAMMA_KINDS = ("square-root", "linear")
ALPHA_KINDS = ("cosine", "linear")


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ScheduleTable:
    kind: str
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray


def alpha_schedule(kind: str, T: int) -> ScheduleTable:
    """Scalar noise schedule for ``T`` steps.

    ``cosine`` follows the improved-DDPM squared-cosine curve with offset
    0.008 and betas clamped at 0.999; ``alpha_bar`` is then rebuilt as the
    running product of the clamped alphas so that
    ``alpha_bar[t] == alpha_bar[t-1] * alpha[t]`` holds exactly.
    ``linear`` spaces beta evenly from 1e-4 to 0.02.
    """
    T = int(T)
    if T < 1:
        raise DimensionError(f"T must be >= 1, got {T}")
    if kind == "cosine":
        u = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((u + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        ratio = f / f[0]
        beta = np.minimum(1.0 - ratio[1:] / ratio[:-1], MAX_BETA)
    elif kind == "linear":
        beta = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T)
    else:
        raise ParameterError(f"unknown alpha schedule {kind!r}")
    beta = np.concatenate([[0.0], beta])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return ScheduleTable(kind, T, _readonly(beta), _readonly(alpha), _readonly(alpha_bar))


def gamma_trajectory(kind: str, T: int, eps_b: float) -> np.ndarray:
    """Bottom-row B-map value for every step ``t = 0..T``.

    Starts at 1 and ends at ``1 - eps_b``.
    """
    if not 0.0 < eps_b < 1.0:
        raise ParameterError(f"eps_b must lie in (0, 1), got {eps_b}")
    T = int(T)
    if T < 1:
        raise DimensionError(f"T must be >= 1, got {T}")
    frac = np.arange(T + 1, dtype=np.float64) / T
    if kind == "square-root":
        return 1.0 - eps_b * np.sqrt(frac)
    if kind == "linear":
        return 1.0 - eps_b * frac
    raise ParameterError(f"unknown gamma trajectory {kind!r}")


@dataclass(frozen=True)
class Cone:
    """Sector-shaped field of view of a curvilinear probe.

    The apex may sit above the image (negative row). Pixels closer to the
    apex than ``near_radius`` are outside the sector.
    """

    apex_row: float
    apex_col: float
    half_angle: float
    near_radius: float = 0.0

    def mask(self, height: int, width: int) -> np.ndarray:
        r, c = np.mgrid[0:height, 0:width].astype(np.float64)
        dr = r - self.apex_row
        dc = c - self.apex_col
        angle = np.degrees(np.arctan2(np.abs(dc), dr))
        return (angle <= self.half_angle) & (np.hypot(dr, dc) >= self.near_radius)


@dataclass(frozen=True)
class BMapSpec:
    height: int
    width: int
    eps_b: float
    gamma_kind: str = "square-root"
    cone: Cone | None = None
    outside_cone_mode: str = "gamma"

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise DimensionError(f"invalid B-map size {self.height}x{self.width}")
        if not 0.0 < self.eps_b < 1.0:
            raise ParameterError(f"eps_b must lie in (0, 1), got {self.eps_b}")
        if self.gamma_kind not in GAMMA_KINDS:
            raise ParameterError(f"unknown gamma trajectory {self.gamma_kind!r}")
        if self.outside_cone_mode not in OUTSIDE_MODES:
            raise ParameterError(f"unknown outside_cone_mode {self.outside_cone_mode!r}")
        if self.cone is not None and not self.cone.mask(self.height, self.width).any():
            raise ParameterError("cone does not intersect the grid")

    def mask(self) -> np.ndarray:
        if self.cone is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.cone.mask(self.height, self.width)


def depth_fraction(height: int) -> np.ndarray:
    """Row depth scaled to [0, 1]; a single-row grid sits at depth 0."""
    if height == 1:
        return np.zeros(1)
    return np.arange(height, dtype=np.float64) / (height - 1)


def build_bmap(gamma_t: float, spec: BMapSpec) -> np.ndarray:
    """One B-map: 1 on the top row, decaying linearly to ``gamma_t`` at the bottom."""
    lo = 1.0 - spec.eps_b
    if gamma_t > 1.0 or gamma_t < lo - 1e-15:
        raise ParameterError(f"gamma_t={gamma_t} outside [{lo}, 1]")
    column = 1.0 - depth_fraction(spec.height) * (1.0 - gamma_t)
    bmap = np.repeat(column[:, None], spec.width, axis=1)
    if spec.cone is not None and spec.outside_cone_mode != "row-value":
        fill = gamma_t if spec.outside_cone_mode == "gamma" else 1.0
        bmap[~spec.mask()] = fill
    return bmap


@dataclass(frozen=True)
class BMapStack:
    """Per-step B-maps with their running products.

    ``B``, ``B_bar`` and ``signal_coeff`` have shape ``(T + 1, H, W)``;
    ``signal_coeff[t] = alpha_bar[t] * B_bar[t]`` is the squared signal
    gain of the closed-form marginal at step ``t``.
    """

    spec: BMapSpec
    gamma: np.ndarray
    B: np.ndarray
    B_bar: np.ndarray
    signal_coeff: np.ndarray
    mask: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.B.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.B.shape[1:]

    def check_t(self, t: int, low: int = 1):
        if not low <= t <= self.T:
            raise IndexError(f"timestep {t} outside [{low}, {self.T}]")


def build_bmap_stack(sched: ScheduleTable, spec: BMapSpec) -> BMapStack:
    gamma = gamma_trajectory(spec.gamma_kind, sched.T, spec.eps_b)
    B = np.stack([build_bmap(g, spec) for g in gamma])
    B_bar = np.cumprod(B, axis=0)
    signal = sched.alpha_bar[:, None, None] * B_bar
    return BMapStack(
        spec=spec,
        gamma=_readonly(gamma),
        B=_readonly(B),
        B_bar=_readonly(B_bar),
        signal_coeff=_readonly(signal),
        mask=spec.mask(),
    )


def per_pixel_snr(stack: BMapStack, t: int) -> np.ndarray:
    stack.check_t(t)
    c = stack.signal_coeff[t]
    return c / (1.0 - c)
