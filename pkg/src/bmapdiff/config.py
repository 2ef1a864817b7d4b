"""Run configuration shared by every command.

Config files are flat ``key = value`` lines. A run manifest is a config
file with extra bookkeeping keys (``command``, ``version`` and
``file.*``), so any manifest can be fed back with ``--config``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .core import ParameterError
from .denoiser import TrainConfig
from .io import parse_key_values
from .phantom import PhantomSpec
from .schedule import ALPHA_KINDS, GAMMA_KINDS, OUTSIDE_MODES, BMapSpec, Cone, alpha_schedule, build_bmap_stack

MANIFEST_KEYS = ("command", "version")
EMBEDDERS = ("pixel-stat", "external-file")


@dataclass(frozen=True)
class RunConfig:
    # schedule
    T: int = 200
    eps_b: float = 0.04
    alpha_kind: str = "cosine"
    gamma_kind: str = "square-root"
    height: int = 32
    width: int = 32
    cone_apex_row: float | None = None
    cone_apex_col: float | None = None
    cone_half_angle: float | None = None
    cone_near_radius: float = 0.0
    outside_cone_mode: str = "gamma"
    # training
    batch_size: int = 4
    lr: float = 1e-4
    iterations: int = 2000
    hidden: int = 16
    seed: int = 0
    # data
    dataset: str = ""
    n_phantoms: int = 64
    mu_att: float = 0.05
    speckle: float = 1.0
    # commands
    out: str = "out"
    input: str = ""
    checkpoint: str = ""
    timesteps: str = ""
    forward_steps: int = 8
    n_samples: int = 8
    snapshots: int = 0
    embedder: str = "pixel-stat"
    features_a: str = ""
    features_b: str = ""
    verify_samples: int = 100000

    def __post_init__(self):
        checks = [
            (self.T >= 1, "T must be >= 1"),
            (0.0 < self.eps_b < 1.0, "eps_b must lie in (0, 1)"),
            (self.alpha_kind in ALPHA_KINDS, f"alpha_kind must be one of {ALPHA_KINDS}"),
            (self.gamma_kind in GAMMA_KINDS, f"gamma_kind must be one of {GAMMA_KINDS}"),
            (self.outside_cone_mode in OUTSIDE_MODES, f"outside_cone_mode must be one of {OUTSIDE_MODES}"),
            (self.height >= 8 and self.width >= 8, "height and width must be >= 8"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0, "lr must be positive"),
            (self.iterations >= 0, "iterations must be >= 0"),
            (self.hidden >= 4, "hidden must be >= 4"),
            (0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
            (self.n_phantoms >= 1, "n_phantoms must be >= 1"),
            (self.mu_att >= 0, "mu_att must be >= 0"),
            (self.speckle >= 0, "speckle must be >= 0"),
            (self.forward_steps >= 1, "forward_steps must be >= 1"),
            (self.n_samples >= 0, "n_samples must be >= 0"),
            (self.snapshots >= 0, "snapshots must be >= 0"),
            (self.embedder in EMBEDDERS, f"embedder must be one of {EMBEDDERS}"),
            (self.verify_samples >= 2, "verify_samples must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)
        cone = (self.cone_apex_row, self.cone_apex_col, self.cone_half_angle)
        if any(v is not None for v in cone) and any(v is None for v in cone):
            raise ParameterError("cone needs cone_apex_row, cone_apex_col and cone_half_angle together")

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "RunConfig | None" = None) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        changes = {}
        for key, raw in values.items():
            if key in MANIFEST_KEYS or key.startswith("file."):
                continue
            if key not in known:
                raise ParameterError(f"unknown config key {key!r}")
            changes[key] = _coerce(known[key], raw)
        return dataclasses.replace(base or cls(), **changes)

    @classmethod
    def load(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        cfg = cls()
        if path is not None:
            cfg = cls.from_strings(parse_key_values(Path(path).read_text(encoding="utf-8"), str(path)))
        return cls.from_strings(overrides or {}, cfg)

    def items(self):
        for f in fields(self):
            v = getattr(self, f.name)
            yield f.name, "none" if v is None else (repr(v) if isinstance(v, float) else str(v))

    @property
    def cone(self) -> Cone | None:
        if self.cone_half_angle is None:
            return None
        return Cone(self.cone_apex_row, self.cone_apex_col, self.cone_half_angle, self.cone_near_radius)

    def bmap_spec(self) -> BMapSpec:
        return BMapSpec(self.height, self.width, self.eps_b, self.gamma_kind, self.cone, self.outside_cone_mode)

    def build_schedule(self):
        sched = alpha_schedule(self.alpha_kind, self.T)
        return sched, build_bmap_stack(sched, self.bmap_spec())

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            T=self.T,
            eps_b=self.eps_b,
            batch_size=self.batch_size,
            iterations=self.iterations,
            lr=self.lr,
            seed=self.seed,
            hidden=self.hidden,
            alpha_kind=self.alpha_kind,
            gamma_kind=self.gamma_kind,
            cone=self.cone,
            outside_cone_mode=self.outside_cone_mode,
        )

    def phantom_spec(self) -> PhantomSpec:
        return PhantomSpec(self.height, self.width, self.mu_att, self.speckle, cone=self.cone)


def _coerce(f, raw: str):
    kind = f.type
    if raw.lower() == "none" and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ParameterError(f"{f.name}: cannot parse {raw!r} as {kind}") from None
    return raw
