"""Run configuration: built-in defaults, a JSON file, then command-line overrides.

Schema::

    {
      "experiment": "example1" | "pendulum" | "gradcheck",
      "seed": int,
      "out": str,
      "example1": {"n": [int], "T": float, "dt": float, "loss": str, "param": "well" | "mis",
                   "theta0": float, "y0_db0": float, "lr": float, "batch": int, "steps": int,
                   "val_batch": int},
      "pendulum": {<every PIConfig field except seed>}
    }

Unknown keys are rejected. Missing keys keep their defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .losses import LOSSES
from .policy_iteration import PIConfig
from .problems import Parameterization

EXPERIMENTS = ("example1", "pendulum", "gradcheck")


@dataclass
class Example1Config:
    n: list[int] = field(default_factory=lambda: [1])
    T: float = 0.5
    dt: float = 0.01
    loss: str = "measurability"
    param: str = "well"
    theta0: float = 0.5
    y0_db0: float = 1.0
    lr: float = 0.01
    batch: int = 32
    steps: int = 2000
    val_batch: int = 32

    def __post_init__(self):
        self.n = [int(v) for v in self.n]
        if not self.n or min(self.n) < 1:
            raise ValueError("n must be a non-empty list of positive integers")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        Parameterization(self.param)
        if not (self.T > 0 and self.dt > 0 and self.dt <= self.T):
            raise ValueError("need 0 < dt <= T")
        if self.batch < 2 or self.val_batch < 2 or self.steps < 0 or not self.lr >= 0:
            raise ValueError("batch sizes must be >= 2, steps >= 0, lr >= 0")


def full_pendulum() -> PIConfig:
    """Full-scale pendulum settings."""
    return PIConfig(rollouts=12800, buffer=12800, batch=128, lr_z=1e-4, lr_u=1e-4, weight_decay=1e-8)


def desk_pendulum() -> PIConfig:
    """Laptop-scale pendulum settings."""
    return PIConfig(rollouts=128, buffer=128, batch=128, lr_z=1e-3, lr_u=1e-3, weight_decay=1e-8)


PRESETS = {"full": full_pendulum, "desk": desk_pendulum}


@dataclass
class RunConfig:
    experiment: str = "example1"
    seed: int = 0
    out: str = "out"
    example1: Example1Config = field(default_factory=Example1Config)
    pendulum: PIConfig = field(default_factory=full_pendulum)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")

    def pi_config(self) -> PIConfig:
        return replace(self.pendulum, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pendulum"].pop("seed")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        """Overlay ``d`` on ``base`` (defaults when omitted)."""
        base = base or cls()
        top = {f.name for f in fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        ex = _overlay(base.example1, d.get("example1", {}), "example1")
        pend = _overlay(base.pendulum, d.get("pendulum", {}), "pendulum", exclude={"seed"})
        scalars = {k: d.get(k, getattr(base, k)) for k in ("experiment", "seed", "out")}
        return cls(example1=ex, pendulum=pend, **scalars)

    @classmethod
    def from_json(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_dict(json.loads(text), base)

    @classmethod
    def load(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.from_json(Path(path).read_text(), base)


def _overlay(obj, d: dict, section: str, exclude=frozenset()):
    if not isinstance(d, dict):
        raise ValueError(f"{section} must be an object")
    allowed = {f.name for f in fields(obj)} - set(exclude)
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown {section} keys: {sorted(unknown)}")
    return replace(obj, **d)
