"""The 12-layer 3D completion network operating on the downsampled video."""
from __future__ import annotations

import enum
from typing import Optional

import torch

from .blocks import Kind, LayerSpec, NetworkSpec, ParameterSet, forward_network
from .errors import ShapeMismatch


class Variant(str, enum.Enum):
    BASE = "base"
    V1 = "v1"  # guidance at r = 4
    V2 = "v2"  # 3D encoder also strides the frame axis

    @property
    def r(self) -> int:
        return 4 if self is Variant.V1 else 2

    @property
    def temporal_stride(self) -> bool:
        return self is Variant.V2


# (kind, kernel, channels, dilation) per layer, numbered from 1
TABLE_3DCN = [
    (Kind.CONV, 5, 16, 1),
    (Kind.CONV_DOWN, 3, 32, 1),
    (Kind.CONV, 3, 64, 1),
    (Kind.CONV_DOWN, 3, 128, 1),
    (Kind.DILATED_CONV, 3, 256, 2),
    (Kind.DILATED_CONV, 3, 256, 4),
    (Kind.DILATED_CONV, 3, 256, 8),
    (Kind.CONV, 3, 128, 1),
    (Kind.DECONV_UP, 4, 64, 1),
    (Kind.CONV, 3, 32, 1),
    (Kind.DECONV_UP, 4, 16, 1),
    (Kind.CONV, 3, 3, 1),
]
SKIPS_3DCN = (("L01", "L11"), ("L03", "L09"))
REDUCED_3DCN = (1, 2, 11, 12)


def make_layer(idx: int, row, dims: int, last: int, temporal_stride: bool = False) -> LayerSpec:
    kind, k, c, d = row
    strided = kind in (Kind.CONV_DOWN, Kind.DECONV_UP)
    return LayerSpec(
        name=f"L{idx:02d}", kind=kind, dims=dims, kernel=k,
        stride=2 if strided else 1, out_channels=c, dilation=d,
        has_bn_relu=idx != last,
        temporal_stride=temporal_stride and strided,
    )


def build_3dcn(variant: Variant = Variant.BASE, reduced: bool = False) -> NetworkSpec:
    """Layer table of the 3D completion network.

    With ``reduced`` only layers 1, 2, 11 and 12 are kept (original numbering
    and the 1-11 skip preserved); this is the small network used for gradient
    checks and quick training runs.
    """
    variant = Variant(variant)
    keep = REDUCED_3DCN if reduced else range(1, 13)
    layers = tuple(
        make_layer(i, TABLE_3DCN[i - 1], 3, 12, variant.temporal_stride) for i in keep
    )
    names = {l.name for l in layers}
    skips = frozenset(p for p in SKIPS_3DCN if p[0] in names and p[1] in names)
    return NetworkSpec(name="3dcn", layers=layers, input_channels=4, skips=skips)


def to_network_input(video: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """(F, H, W, 3) video + (F, H, W) mask -> (1, 4, F, H, W)."""
    if video.dim() != 4 or mask.shape != video.shape[:3]:
        raise ShapeMismatch(f"video {tuple(video.shape)} and mask {tuple(mask.shape)} do not agree")
    x = torch.cat([video, mask.unsqueeze(-1).to(video.dtype)], dim=-1)
    return x.permute(3, 0, 1, 2).unsqueeze(0)


def forward_3dcn(net: NetworkSpec, params: ParameterSet, v_d_in: torch.Tensor,
                 m_d: torch.Tensor, training: bool = False,
                 trace: Optional[list] = None) -> torch.Tensor:
    """Inpaint a pre-filled low-resolution video; returns (F, h, w, 3)."""
    x = to_network_input(v_d_in, m_d)
    y = forward_network(net, params, x, training=training, trace=trace)
    if y.shape[2:] != x.shape[2:]:
        raise ShapeMismatch(f"3dcn output {tuple(y.shape)} does not match input {tuple(x.shape)}")
    return y[0].permute(1, 2, 3, 0)
