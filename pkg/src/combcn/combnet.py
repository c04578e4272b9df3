"""The 17-layer 2D combined completion network with temporal guidance fusion.

Guidance frames from the 3D network are passed through two independent 3x3
convolution branches; the results are added to the earliest and latest
CombCN feature maps whose spatial size matches the guidance. Disabling the
fusion yields the plain per-frame 2D network.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch

from .blocks import (Kind, LayerSpec, NetworkSpec, ParameterSet, apply_layer,
                     forward_network, init_layer, init_params)
from .errors import ShapeMismatch
from .net3d import Variant, make_layer

TABLE_COMBCN = [
    (Kind.CONV, 5, 64, 1),
    (Kind.CONV_DOWN, 3, 128, 1),
    (Kind.CONV, 3, 128, 1),
    (Kind.CONV_DOWN, 3, 256, 1),
    (Kind.CONV, 3, 256, 1),
    (Kind.CONV, 3, 256, 1),
    (Kind.DILATED_CONV, 3, 256, 2),
    (Kind.DILATED_CONV, 3, 256, 4),
    (Kind.DILATED_CONV, 3, 256, 8),
    (Kind.DILATED_CONV, 3, 256, 16),
    (Kind.CONV, 3, 256, 1),
    (Kind.CONV, 3, 256, 1),
    (Kind.DECONV_UP, 4, 128, 1),
    (Kind.CONV, 3, 128, 1),
    (Kind.DECONV_UP, 4, 64, 1),
    (Kind.CONV, 3, 32, 1),
    (Kind.CONV, 3, 3, 1),
]
SKIPS_COMBCN = (("L01", "L15"), ("L03", "L13"))
REDUCED_COMBCN = (1, 2, 15, 16, 17)


@dataclass(frozen=True)
class CombSpec:
    """CombCN layers plus the two guidance branches and where they join.

    ``branch_a`` output is added to the output of layer ``early``;
    ``branch_b`` output is added to the input of layer ``late``.
    """
    net: NetworkSpec
    branch_a: LayerSpec
    branch_b: LayerSpec
    early: str
    late: str
    guidance_rate: int


def build_combcn(variant: Variant = Variant.BASE, reduced: bool = False) -> CombSpec:
    variant = Variant(variant)
    if reduced and variant is Variant.V1:
        raise ValueError("the reduced CombCN has no H/4 feature maps for V1 guidance")
    keep = REDUCED_COMBCN if reduced else range(1, 18)
    layers = tuple(make_layer(i, TABLE_COMBCN[i - 1], 2, 17) for i in keep)
    names = {l.name for l in layers}
    skips = frozenset(p for p in SKIPS_COMBCN if p[0] in names and p[1] in names)
    net = NetworkSpec(name="combcn", layers=layers, input_channels=4, skips=skips)

    if variant is Variant.V1:
        early, late = "L04", "L13"
    else:
        early, late = "L02", "L15"
    chans = net.layer(early).out_channels
    branch = dict(kind=Kind.CONV, dims=2, kernel=3, stride=1, out_channels=chans)
    return CombSpec(
        net=net,
        branch_a=LayerSpec(name="FA", **branch),
        branch_b=LayerSpec(name="FB", **branch),
        early=early,
        late=late,
        guidance_rate=variant.r,
    )


def init_combcn(comb: CombSpec, rng_seed: int, dtype=torch.float32) -> ParameterSet:
    params = init_params(comb.net, rng_seed, dtype)
    gen = torch.Generator().manual_seed(int(rng_seed) + 1)
    params.update(init_layer(comb.branch_a, 3, gen, dtype))
    params.update(init_layer(comb.branch_b, 3, gen, dtype))
    return params


def fuse_guidance(comb: CombSpec, params: ParameterSet, guidance: torch.Tensor,
                  training: bool = False, frame_size: Optional[int] = None):
    """Guidance frames (N, h, w, 3) -> two (N, C, h, w) feature maps."""
    if guidance.dim() == 3:
        guidance = guidance.unsqueeze(0)
    if guidance.dim() != 4 or guidance.shape[-1] != 3:
        raise ShapeMismatch(f"guidance must be (N, h, w, 3), got {tuple(guidance.shape)}")
    if frame_size is not None:
        want = frame_size // comb.guidance_rate
        if guidance.shape[1:3] != (want, want):
            raise ShapeMismatch(
                f"guidance is {tuple(guidance.shape[1:3])}, fusion maps are {want}x{want}"
            )
    g = guidance.permute(0, 3, 1, 2)
    return (apply_layer(comb.branch_a, params, g, training),
            apply_layer(comb.branch_b, params, g, training))


def to_frame_batch(video: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """(F, H, W, 3) + (F, H, W) -> (F, 4, H, W)."""
    if video.dim() != 4 or mask.shape != video.shape[:3]:
        raise ShapeMismatch(f"video {tuple(video.shape)} and mask {tuple(mask.shape)} do not agree")
    return torch.cat([video, mask.unsqueeze(-1).to(video.dtype)], dim=-1).permute(0, 3, 1, 2)


def forward_video(comb: CombSpec, params: ParameterSet, v_in: torch.Tensor,
                  m: torch.Tensor, v_d_out: Optional[torch.Tensor],
                  training: bool = False, fusion: bool = True,
                  trace: Optional[list] = None) -> torch.Tensor:
    """Inpaint every frame of ``v_in`` as one batch; returns (F, H, W, 3).

    ``v_d_out`` is the 3D network's output (F, H/r, W/r, 3). With
    ``fusion=False`` (or ``v_d_out=None``) the guidance path is skipped.
    """
    x = to_frame_batch(v_in, m)
    add_after = add_before = None
    if fusion and v_d_out is not None:
        if v_d_out.shape[0] != v_in.shape[0]:
            raise ShapeMismatch(
                f"guidance has {v_d_out.shape[0]} frames, input has {v_in.shape[0]}"
            )
        feat_a, feat_b = fuse_guidance(comb, params, v_d_out, training, frame_size=v_in.shape[1])
        add_after = {comb.early: feat_a}
        add_before = {comb.late: feat_b}
    y = forward_network(comb.net, params, x, training=training,
                        add_after=add_after, add_before=add_before, trace=trace)
    return y.permute(0, 2, 3, 1)


def forward_frame(comb: CombSpec, params: ParameterSet, frame_in: torch.Tensor,
                  guidance: Optional[torch.Tensor], fusion: bool = True) -> torch.Tensor:
    """Inference on one frame: (H, W, 4) + (h, w, 3) -> (H, W, 3)."""
    if frame_in.dim() != 3 or frame_in.shape[-1] != 4:
        raise ShapeMismatch(f"frame must be (H, W, 4), got {tuple(frame_in.shape)}")
    g = None if guidance is None else guidance.unsqueeze(0)
    out = forward_video(comb, params, frame_in[None, ..., :3], frame_in[None, ..., 3],
                        g, training=False, fusion=fusion)
    return out[0]
