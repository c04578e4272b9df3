"""Training configuration and loss records."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .net3d import Variant


class Strategy(str, enum.Enum):
    OURS = "ours"  # pre-train 3DCN, then fine-tune jointly
    T1 = "t1"      # pre-train 3DCN, then freeze it
    T2 = "t2"      # joint training from scratch


class Phase(str, enum.Enum):
    PRETRAIN = "pretrain"
    JOINT = "joint"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"


@dataclass
class TrainConfig:
    strategy: Strategy = Strategy.OURS
    variant: Variant = Variant.BASE
    alpha: float = 1.0
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    pretrain_iters: int = 10_000
    joint_iters: int = 100_000
    batch: int = 1
    seed: int = 0
    log_every: int = 100
    val_every: Optional[int] = None
    val_samples: int = 8
    checkpoint_every: int = 0
    reduced: bool = False
    fusion: bool = True
    converge_window: int = 1000
    converge_tol: float = 0.005
    hole_lo_frac: float = 0.375
    hole_hi_frac: float = 0.5
    mean_pixel: Optional[tuple] = None

    def __post_init__(self):
        self.strategy = Strategy(self.strategy)
        self.variant = Variant(self.variant)
        if self.mean_pixel is not None:
            self.mean_pixel = tuple(float(v) for v in self.mean_pixel)
        self.validate()

    def validate(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.strategy is Strategy.T2 and self.pretrain_iters != 0:
            raise ValueError("strategy t2 has no pre-training phase; set pretrain_iters=0")
        if not self.fusion and self.pretrain_iters != 0:
            raise ValueError("the fusion-free 2D baseline has no pre-training phase")
        if self.batch != 1:
            raise ValueError("one video per step is the only supported batch")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")

    @property
    def eval_every(self) -> int:
        return self.val_every or self.log_every

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["variant"] = self.variant.value
        if self.mean_pixel is not None:
            d["mean_pixel"] = list(self.mean_pixel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class LossReport:
    iter: int
    phase: Phase
    split: Split
    loss_3dcn: float
    loss_combcn: float
    loss_total: float

    def row(self) -> list:
        return [self.iter, self.phase.value, self.split.value,
                self.loss_3dcn, self.loss_combcn, self.loss_total]


CSV_HEADER = ["iter", "phase", "split", "loss_3dcn", "loss_combcn", "loss_total"]


def combine(l3: float, lc: float, alpha: float) -> float:
    """Total loss with missing terms (NaN) treated as absent."""
    if math.isnan(lc):
        return l3
    if math.isnan(l3):
        return alpha * lc
    return l3 + alpha * lc
