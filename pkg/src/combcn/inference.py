"""Inpainting with a trained checkpoint, masked-l1 metrics and temporal diffs."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import data, sampleio
from .checkpoint import read_checkpoint, load_checkpoint
from .errors import EmptyMask, ShapeMismatch, TooFewFrames
from .losses import loss_combcn, masked_l1_per_frame
from .model import ModelBundle, make_batch

DIFF_GAIN = 5.0


class MaskSource(str, enum.Enum):
    FILE = "file"
    REGULAR = "regular"
    RANDOM = "random"


@dataclass
class InpaintRequest:
    checkpoint_path: Path
    frames: object  # directory / video path, or an (F, H, W, 3) array
    mask_source: MaskSource = MaskSource.REGULAR
    mask_path: Optional[Path] = None
    seed: int = 0
    output_dir: Optional[Path] = None
    emit_lowres: bool = False
    emit_diffs: bool = False
    resize: bool = False

    def __post_init__(self):
        self.mask_source = MaskSource(self.mask_source)
        if self.mask_source is MaskSource.FILE and self.mask_path is None:
            raise ValueError("mask source 'file' needs a mask path")


@dataclass
class InpaintResult:
    output: np.ndarray
    mask: np.ndarray
    original: np.ndarray
    lowres: Optional[np.ndarray] = None
    raw: Optional[np.ndarray] = field(default=None, repr=False)


@torch.no_grad()
def inpaint(bundle: ModelBundle, video: np.ndarray, mask: np.ndarray) -> InpaintResult:
    """Run both networks on one video and composite the hole region.

    Pixels outside the mask are copied from ``video`` unchanged.
    """
    video = np.asarray(video, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint8)
    if video.ndim != 4 or mask.shape != video.shape[:3]:
        raise ShapeMismatch(f"video {video.shape} and mask {mask.shape} do not agree")
    batch = make_batch(video, mask, bundle.mean_pixel, bundle.r)
    g_out, out = bundle.forward(batch, training=False)
    raw = out.numpy()
    hole = mask[..., None].astype(bool)
    composite = np.where(hole, np.clip(raw, 0.0, 1.0), video).astype(np.float32)
    lowres = None if g_out is None else np.clip(g_out.numpy(), 0.0, 1.0)
    return InpaintResult(output=composite, mask=mask, original=video, lowres=lowres, raw=raw)


def _load_video(frames, size: Optional[int], resize: bool) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        clip = [frames[k] for k in range(frames.shape[0])]
    else:
        clip = sampleio.read_frames(frames)
    clip = [data.as_float_frame(fr)[..., :3] for fr in clip]
    video = np.stack(clip)
    if size is None or video.shape[1:3] == (size, size):
        return video
    if not resize:
        raise ShapeMismatch(
            f"frames are {video.shape[1]}x{video.shape[2]}, checkpoint was trained at {size}x{size}"
        )
    return data.resize_frames(np.stack([data.center_square(f) for f in video]), size)


def resolve_mask(req: InpaintRequest, n_frames: int, size: int) -> np.ndarray:
    if req.mask_source is MaskSource.FILE:
        mask = sampleio.read_mask(req.mask_path)
        if mask.shape != (n_frames, size, size):
            raise ShapeMismatch(f"mask is {mask.shape}, video is {(n_frames, size, size)}")
        return mask
    if req.mask_source is MaskSource.RANDOM:
        return data.gen_random_masks(n_frames, size, req.seed)
    return data.gen_regular_mask(n_frames, size, req.seed)


def inpaint_video(req: InpaintRequest) -> InpaintResult:
    doc = read_checkpoint(req.checkpoint_path)
    bundle, _, _ = load_checkpoint(req.checkpoint_path)
    size = doc["meta"].get("frame_size")
    video = _load_video(req.frames, size, req.resize)
    mask = resolve_mask(req, video.shape[0], video.shape[1])
    result = inpaint(bundle, video, mask)
    if req.output_dir is not None:
        out = Path(req.output_dir)
        sampleio.write_frames(out / "frames", result.output)
        if req.emit_lowres and result.lowres is not None:
            sampleio.write_frames(out / "lowres", result.lowres, suffix="_lowres")
        if req.emit_diffs and result.output.shape[0] >= 2:
            sampleio.write_frames(out / "diffs", temporal_diff(result.output)[..., None])
        np.save(out / "mask.npy", result.mask)
    return result


@dataclass
class MetricsReport:
    video: float
    frames: list

    def rows(self, video_id: str) -> list:
        rows = [[video_id, k, v] for k, v in enumerate(self.frames)]
        rows.append([video_id, "all", self.video])
        return rows


def compute_metrics(out, gt, m) -> MetricsReport:
    """Normalized masked l1 on the [0, 255] scale, per frame and per video.

    Frames without hole pixels get NaN and are excluded from the video value.
    """
    out_t = torch.as_tensor(np.asarray(out), dtype=torch.float64)
    gt_t = torch.as_tensor(np.asarray(gt), dtype=torch.float64)
    m_t = torch.as_tensor(np.asarray(m), dtype=torch.float64)
    video = float(loss_combcn(out_t, m_t, gt_t))
    per_frame, count = masked_l1_per_frame(out_t, m_t, gt_t)
    frames = [float(v) if c > 0 else float("nan") for v, c in zip(per_frame, count)]
    return MetricsReport(video=video, frames=frames)


def temporal_diff(video: np.ndarray, gain: float = DIFF_GAIN) -> np.ndarray:
    """|frame[k+1] - frame[k]| averaged over channels, scaled by ``gain`` and clipped."""
    video = np.asarray(video, dtype=np.float32)
    if video.shape[0] < 2:
        raise TooFewFrames(f"need at least 2 frames, got {video.shape[0]}")
    if video.ndim == 3:
        video = video[..., None]
    diff = np.abs(np.diff(video, axis=0)).mean(axis=-1)
    return np.clip(gain * diff, 0.0, 1.0)


def check_mask_nonempty(mask: np.ndarray) -> None:
    if not np.any(mask):
        raise EmptyMask("mask contains no hole pixels")
