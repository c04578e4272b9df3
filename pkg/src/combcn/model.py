"""The two networks together: parameters, input preparation and the joint forward."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from . import data
from .blocks import ParameterSet, init_params
from .combnet import CombSpec, build_combcn, forward_video, init_combcn
from .net3d import Variant, build_3dcn, forward_3dcn

GROUP_3D = "3dcn"
GROUP_COMB = "combcn"


@dataclass
class Batch:
    """Network-ready tensors for one video sample, all channels-last."""
    v_c: torch.Tensor
    m: torch.Tensor
    v_in: torch.Tensor
    v_c_d: torch.Tensor
    m_d: torch.Tensor
    v_in_d: torch.Tensor


def make_batch(clean: np.ndarray, mask: np.ndarray, mean_pixel: Sequence[float],
               r: int, dtype=torch.float32) -> Batch:
    """Pre-fill the holes and build both resolutions of the input."""
    clean = np.asarray(clean, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint8)
    v_in = data.prefill(clean, mask, mean_pixel)
    v_c_d = data.downsample_volume(clean, r)
    m_d = data.downsample_mask(mask, r)
    # every low-res pixel touching the hole is treated as unknown
    v_in_d = data.prefill(v_c_d, m_d, mean_pixel)

    def t(a):
        return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)

    return Batch(v_c=t(clean), m=t(mask), v_in=t(v_in),
                 v_c_d=t(v_c_d), m_d=t(m_d), v_in_d=t(v_in_d))


@dataclass
class ModelBundle:
    variant: Variant
    reduced: bool
    p3d: ParameterSet
    pcomb: ParameterSet
    fusion: bool = True
    mean_pixel: tuple = (0.5, 0.5, 0.5)
    net3d: object = field(init=False, repr=False)
    comb: CombSpec = field(init=False, repr=False)

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.net3d = build_3dcn(self.variant, self.reduced)
        self.comb = build_combcn(self.variant, self.reduced)

    @classmethod
    def create(cls, variant=Variant.BASE, reduced: bool = False, seed: int = 0,
               fusion: bool = True, mean_pixel=(0.5, 0.5, 0.5),
               dtype=torch.float32) -> "ModelBundle":
        variant = Variant(variant)
        p3d = init_params(build_3dcn(variant, reduced), seed, dtype)
        pcomb = init_combcn(build_combcn(variant, reduced), seed + 7919, dtype)
        return cls(variant, reduced, p3d, pcomb, fusion, tuple(mean_pixel))

    @property
    def r(self) -> int:
        return self.variant.r

    def tensors(self) -> dict:
        out = {f"{GROUP_3D}/{k}": v for k, v in self.p3d.items()}
        out.update({f"{GROUP_COMB}/{k}": v for k, v in self.pcomb.items()})
        return out

    def load_tensors(self, tensors: dict) -> None:
        for name, value in tensors.items():
            group, key = name.split("/", 1)
            target = self.p3d if group == GROUP_3D else self.pcomb
            target[key] = value

    def run_3dcn(self, batch: Batch, training: bool = False) -> torch.Tensor:
        return forward_3dcn(self.net3d, self.p3d, batch.v_in_d, batch.m_d, training=training)

    def run_combcn(self, batch: Batch, guidance: Optional[torch.Tensor],
                   training: bool = False) -> torch.Tensor:
        return forward_video(self.comb, self.pcomb, batch.v_in, batch.m, guidance,
                             training=training, fusion=self.fusion)

    def forward(self, batch: Batch, training: bool = False):
        """Returns (low-res 3D output, full-res CombCN output)."""
        g_out = self.run_3dcn(batch, training) if self.fusion else None
        return g_out, self.run_combcn(batch, g_out, training)
