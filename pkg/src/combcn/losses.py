"""Mask-weighted l1 losses, reported on the [0, 255] scale.

Each loss is the mean absolute error per masked pixel per channel: the masked
l1 norm divided by the number of hole pixels times the channel count.
"""
from __future__ import annotations

import torch

from .errors import EmptyMask, ShapeMismatch

PIXEL_SCALE = 255.0


def _check(out: torch.Tensor, mask: torch.Tensor, target: torch.Tensor):
    if out.shape != target.shape or mask.shape != out.shape[:-1]:
        raise ShapeMismatch(
            f"output {tuple(out.shape)}, mask {tuple(mask.shape)} and target "
            f"{tuple(target.shape)} do not agree"
        )


def masked_l1_per_frame(out: torch.Tensor, mask: torch.Tensor, target: torch.Tensor):
    """Per-frame normalized masked l1 (F,) and the per-frame hole sizes (F,)."""
    _check(out, mask, target)
    m = mask.to(out.dtype)
    channels = out.shape[-1]
    err = (m.unsqueeze(-1) * (out - target).abs()).flatten(1).sum(dim=1)
    count = m.flatten(1).sum(dim=1)
    per_frame = PIXEL_SCALE * err / (count.clamp(min=1) * channels)
    return per_frame, count


def loss_3dcn(g_out: torch.Tensor, m_d: torch.Tensor, v_c_d: torch.Tensor) -> torch.Tensor:
    """Masked l1 over the whole low-resolution volume."""
    _check(g_out, m_d, v_c_d)
    m = m_d.to(g_out.dtype)
    count = m.sum()
    if count.item() == 0:
        raise EmptyMask("mask has no hole pixels")
    err = (m.unsqueeze(-1) * (g_out - v_c_d).abs()).sum()
    return PIXEL_SCALE * err / (count * g_out.shape[-1])


def loss_combcn(out_frames: torch.Tensor, m: torch.Tensor, v_c: torch.Tensor) -> torch.Tensor:
    """Mean over frames of the per-frame masked l1; empty-mask frames are skipped."""
    per_frame, count = masked_l1_per_frame(out_frames, m, v_c)
    valid = count > 0
    n_valid = int(valid.sum().item())
    if n_valid == 0:
        raise EmptyMask("every frame mask is empty")
    return per_frame[valid].sum() / n_valid


def loss_total(l3, lc, alpha: float = 1.0):
    return l3 + alpha * lc
