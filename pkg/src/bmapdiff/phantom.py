"""Procedural B-mode phantoms: speckle, depth attenuation, inclusions, sector mask.

Intensity model before remapping to [-1, 1]::

    I(r, c) = mask * clip(exp(-mu_att * r) * echo(r, c) * speckle(r, c), 0, 1)

Speckle is fully developed, i.e. Rayleigh distributed with unit mean, and
blended with 1 by ``speckle`` (0 turns it off). Attenuation acts on
intensity, not in dB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParameterError, RngStream
from .schedule import Cone

RAYLEIGH_UNIT_MEAN_SCALE = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class Inclusion:
    center_row: float
    center_col: float
    radius_row: float
    radius_col: float
    echogenicity: float

    def mask(self, height, width):
        r, c = np.mgrid[0:height, 0:width].astype(np.float64)
        return ((r - self.center_row) / self.radius_row) ** 2 + ((c - self.center_col) / self.radius_col) ** 2 <= 1.0


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 32
    width: int = 32
    mu_att: float = 0.05
    speckle: float = 1.0
    background: float = 0.5
    inclusions: tuple[Inclusion, ...] = ()
    random_inclusions: int = 2
    cone: Cone | None = None

    def __post_init__(self):
        if self.mu_att < 0:
            raise ParameterError("mu_att must be non-negative")
        if self.speckle < 0 or self.background < 0:
            raise ParameterError("speckle and background must be non-negative")
        for inc in self.inclusions:
            if inc.radius_row <= 0 or inc.radius_col <= 0:
                raise ParameterError("inclusion radii must be positive")
            if not 0.0 <= inc.echogenicity <= 2.0:
                raise ParameterError("inclusion echogenicity must lie in [0, 2]")

    def mask(self) -> np.ndarray:
        if self.cone is None:
            return np.ones((self.height, self.width), dtype=bool)
        return self.cone.mask(self.height, self.width)


def _random_inclusion(spec: PhantomSpec, rng: RngStream) -> Inclusion:
    h, w = spec.height, spec.width
    return Inclusion(
        center_row=float(rng.uniform(0, h)),
        center_col=float(rng.uniform(0, w)),
        radius_row=float(rng.uniform(h / 10, h / 5)),
        radius_col=float(rng.uniform(w / 10, w / 5)),
        echogenicity=float(rng.uniform(0.1, 1.9)),
    )


def phantom_generate(spec: PhantomSpec, rng: RngStream) -> np.ndarray:
    """One phantom image in [-1, 1].

    ``spec.random_inclusions`` extra ellipses are drawn from ``rng`` before
    the speckle; later inclusions paint over earlier ones.
    """
    h, w = spec.height, spec.width
    inclusions = list(spec.inclusions) + [_random_inclusion(spec, rng) for _ in range(spec.random_inclusions)]
    echo = np.full((h, w), spec.background)
    for inc in inclusions:
        echo[inc.mask(h, w)] = spec.background * inc.echogenicity
    rayleigh = rng.generator.rayleigh(RAYLEIGH_UNIT_MEAN_SCALE, (h, w))
    speckle = 1.0 + spec.speckle * (rayleigh - 1.0)
    atten = np.exp(-spec.mu_att * np.arange(h, dtype=np.float64))[:, None]
    intensity = np.clip(atten * echo * speckle, 0.0, 1.0) * spec.mask()
    return 2.0 * intensity - 1.0


def phantom_dataset(n: int, spec: PhantomSpec, seed: int) -> list[np.ndarray]:
    """``n`` phantoms; image ``i`` uses the substream ``(seed, [i])``."""
    if n < 1:
        raise ParameterError("dataset size must be >= 1")
    return [phantom_generate(spec, RngStream(seed, [i])) for i in range(n)]


def depth_profile(img, mask=None) -> np.ndarray:
    """Row means over in-mask pixels (NaN for rows with no such pixel)."""
    img = np.asarray(img, dtype=np.float64)
    if mask is None:
        return img.mean(axis=-1)
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    sums = np.where(mask, img, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

