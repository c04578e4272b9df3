"""Sample extraction, hole synthesis, pre-filling and the synthetic test corpus.

Videos are plain ``float32`` numpy arrays of shape ``(F, H, W, C)`` with
values in ``[0, 1]``; masks are ``uint8`` arrays of shape ``(F, H, W)`` with
1 marking pixels to be filled.
"""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EmptyInput, IndivisibleSize, ShapeMismatch


class CropMode(str, enum.Enum):
    CENTER_SQUARE = "center_square"
    NONE = "none"


@dataclass
class PipelineConfig:
    sample_frames: int = 32
    target_size: int = 128
    downsample_rate: int = 2
    hole_lo_frac: float = 0.375
    hole_hi_frac: float = 0.5
    crop_mode: CropMode = CropMode.CENTER_SQUARE
    split_ratio: tuple[int, int] = (5, 1)
    mean_pixel: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        self.crop_mode = CropMode(self.crop_mode)
        self.split_ratio = tuple(self.split_ratio)
        if self.mean_pixel is not None:
            self.mean_pixel = tuple(float(v) for v in self.mean_pixel)
        self.validate()

    def validate(self):
        if not 0 < self.hole_lo_frac <= self.hole_hi_frac < 1:
            raise ValueError(
                f"hole fractions must satisfy 0 < lo <= hi < 1, got "
                f"{self.hole_lo_frac}, {self.hole_hi_frac}"
            )
        if self.sample_frames < 1:
            raise ValueError("sample_frames must be positive")
        if self.downsample_rate < 1 or self.target_size % self.downsample_rate:
            raise IndivisibleSize(
                f"downsample rate {self.downsample_rate} does not divide "
                f"target size {self.target_size}"
            )

    def to_dict(self) -> dict:
        return {
            "sample_frames": self.sample_frames,
            "target_size": self.target_size,
            "downsample_rate": self.downsample_rate,
            "hole_lo_frac": self.hole_lo_frac,
            "hole_hi_frac": self.hole_hi_frac,
            "crop_mode": self.crop_mode.value,
            "split_ratio": list(self.split_ratio),
            "mean_pixel": None if self.mean_pixel is None else list(self.mean_pixel),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(**d)


@dataclass
class Sample:
    clean: np.ndarray
    mask: Optional[np.ndarray] = None
    source_id: str = ""
    frame_offset: int = 0

    def __post_init__(self):
        if self.mask is not None and self.mask.shape != self.clean.shape[:3]:
            raise ShapeMismatch(
                f"mask {self.mask.shape} does not match video {self.clean.shape[:3]}"
            )


def as_float_frame(img: np.ndarray) -> np.ndarray:
    """Convert an image (H, W[, C]) to float32 in [0, 1]."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        return img.astype(np.float32) / float(info.max)
    return np.clip(img.astype(np.float32), 0.0, 1.0)


def center_square(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return img[top:top + side, left:left + side]


def resize_frames(frames: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (N, H, W, C) stack to (N, size, size, C)."""
    if frames.shape[1] == size and frames.shape[2] == size:
        return frames.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    antialias = frames.shape[1] > size or frames.shape[2] > size
    out = F.interpolate(t, size=(size, size), mode="bilinear",
                        align_corners=False, antialias=antialias)
    return out.clamp_(0.0, 1.0).permute(0, 2, 3, 1).contiguous().numpy()


def extract_samples(frames: Sequence[np.ndarray], cfg: PipelineConfig,
                    source_id: str = "clip") -> list[Sample]:
    """Group consecutive frames into non-overlapping samples.

    Each frame is cropped according to ``cfg.crop_mode`` and resized to
    ``cfg.target_size`` squared. A trailing partial group is dropped. The
    returned samples carry no mask yet.
    """
    if len(frames) == 0:
        raise EmptyInput("no frames given")
    shape = np.shape(frames[0])
    for i, fr in enumerate(frames):
        if np.shape(fr) != shape:
            raise ShapeMismatch(f"frame {i} has shape {np.shape(fr)}, expected {shape}")

    n_groups = len(frames) // cfg.sample_frames
    samples = []
    for g in range(n_groups):
        offset = g * cfg.sample_frames
        group = frames[offset:offset + cfg.sample_frames]
        prepared = []
        for fr in group:
            fr = as_float_frame(fr)
            if cfg.crop_mode is CropMode.CENTER_SQUARE:
                fr = center_square(fr)
            prepared.append(fr)
        clip = resize_frames(np.stack(prepared), cfg.target_size)
        samples.append(Sample(clean=clip, source_id=source_id, frame_offset=offset))
    return samples


def split_train_val(samples: Sequence, ratio: tuple[int, int] = (5, 1)):
    """Order-preserving split: the first ceil(n*a/(a+b)) items go to training."""
    a, b = ratio
    if a <= 0 or b <= 0:
        raise ValueError(f"split ratio components must be positive, got {ratio}")
    n = len(samples)
    if n == 0:
        raise EmptyInput("no samples to split")
    # integer ceiling avoids float error at exact multiples
    n_train = -(-n * a // (a + b))
    return list(samples[:n_train]), list(samples[n_train:])


def hole_side_range(l: int, lo_frac: float = 0.375, hi_frac: float = 0.5) -> tuple[int, int]:
    """Inclusive integer range of hole sides, endpoints rounded half-up."""
    return int(math.floor(lo_frac * l + 0.5)), int(math.floor(hi_frac * l + 0.5))


def draw_holes(n: int, l: int, rng: np.random.Generator,
               lo_frac: float = 0.375, hi_frac: float = 0.5) -> np.ndarray:
    """Draw ``n`` square holes as rows of (side, top, left)."""
    if l < 8:
        raise ValueError(f"frame size must be at least 8, got {l}")
    lo, hi = hole_side_range(l, lo_frac, hi_frac)
    sides = rng.integers(lo, hi + 1, size=n)
    tops = rng.integers(0, l - sides + 1)
    lefts = rng.integers(0, l - sides + 1)
    return np.stack([sides, tops, lefts], axis=1)


def render_holes(holes: np.ndarray, l: int) -> np.ndarray:
    """Rasterize (side, top, left) rows into an (n, l, l) uint8 mask."""
    holes = np.asarray(holes)
    idx = np.arange(l)
    s, y, x = (holes[:, i, None] for i in range(3))
    rows = (idx >= y) & (idx < y + s)
    cols = (idx >= x) & (idx < x + s)
    return (rows[:, :, None] & cols[:, None, :]).astype(np.uint8)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_regular_mask(F: int, l: int, rng_seed, lo_frac: float = 0.375,
                     hi_frac: float = 0.5) -> np.ndarray:
    """One square hole shared by every frame."""
    hole = draw_holes(1, l, _rng(rng_seed), lo_frac, hi_frac)
    return np.repeat(render_holes(hole, l), F, axis=0)


def gen_random_masks(F: int, l: int, rng_seed, lo_frac: float = 0.375,
                     hi_frac: float = 0.5) -> np.ndarray:
    """Independent square hole per frame."""
    return render_holes(draw_holes(F, l, _rng(rng_seed), lo_frac, hi_frac), l)


def sample_seed(global_seed: int, source_id: str, frame_offset: int) -> int:
    """Stable per-sample seed, independent of processing order."""
    h = hashlib.sha256(f"{global_seed}:{source_id}:{frame_offset}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def _check_pair(video: np.ndarray, mask: np.ndarray):
    if video.ndim != 4 or mask.shape != video.shape[:3]:
        raise ShapeMismatch(f"video {video.shape} and mask {mask.shape} do not agree")


def prefill(video: np.ndarray, mask: np.ndarray, mean_pixel) -> np.ndarray:
    """Replace hole pixels by the per-channel mean pixel."""
    video = np.asarray(video)
    mask = np.asarray(mask)
    _check_pair(video, mask)
    mean = np.broadcast_to(np.asarray(mean_pixel, dtype=video.dtype), (video.shape[-1],))
    return np.where(mask[..., None].astype(bool), mean, video).astype(video.dtype)


def mean_pixel(videos: Sequence[np.ndarray], masks: Optional[Sequence[np.ndarray]] = None):
    """Per-channel mean over all known (unmasked) pixels of a corpus."""
    total = None
    count = 0
    for i, v in enumerate(videos):
        v = np.asarray(v, dtype=np.float64)
        if masks is not None and masks[i] is not None:
            keep = ~np.asarray(masks[i]).astype(bool)
            px = v[keep]
        else:
            px = v.reshape(-1, v.shape[-1])
        s = px.sum(axis=0)
        total = s if total is None else total + s
        count += px.shape[0]
    if not count:
        raise EmptyInput("no known pixels to average")
    return tuple(float(x) for x in total / count)


def assemble_input(video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Stack RGB and mask into a 4-channel (F, H, W, 4) volume."""
    video = np.asarray(video)
    mask = np.asarray(mask)
    _check_pair(video, mask)
    if video.shape[-1] != 3:
        raise ShapeMismatch(f"expected 3 channels, got {video.shape[-1]}")
    return np.concatenate([video, mask[..., None].astype(video.dtype)], axis=-1)


def downsample_volume(video: np.ndarray, r: int) -> np.ndarray:
    """Spatial area-average downsampling of an (F, H, W, C) volume."""
    f, h, w, c = video.shape
    if h % r or w % r:
        raise IndivisibleSize(f"rate {r} does not divide {h}x{w}")
    if r == 1:
        return video.copy()
    blocks = video.reshape(f, h // r, r, w // r, r, c)
    # float64 accumulation keeps the global mean exact to ~1e-7
    return blocks.mean(axis=(2, 4), dtype=np.float64).astype(video.dtype)


def downsample_mask(mask: np.ndarray, r: int) -> np.ndarray:
    """Max-pool an (F, H, W) mask: a block touching any hole pixel is a hole."""
    f, h, w = mask.shape
    if h % r or w % r:
        raise IndivisibleSize(f"rate {r} does not divide {h}x{w}")
    if r == 1:
        return mask.copy()
    return mask.reshape(f, h // r, r, w // r, r).max(axis=(2, 4))


# -- synthetic corpus -------------------------------------------------------

@dataclass
class Rect:
    top: int
    left: int
    height: int
    width: int
    vy: int
    vx: int
    color: tuple[float, float, float]


@dataclass
class SceneParams:
    corner_colors: np.ndarray  # (2, 2, 3): background colour at each corner
    rects: list[Rect] = field(default_factory=list)


def synth_scene_params(n_videos: int, F: int, l: int, rng_seed) -> list[SceneParams]:
    if n_videos < 1:
        raise ValueError("n_videos must be at least 1")
    rng = _rng(rng_seed)
    scenes = []
    for _ in range(n_videos):
        corners = rng.uniform(0.1, 0.9, size=(2, 2, 3))
        rects = []
        for _ in range(int(rng.integers(2, 5))):
            h = int(rng.integers(max(2, l // 8), max(3, l // 4) + 1))
            w = int(rng.integers(max(2, l // 8), max(3, l // 4) + 1))
            vmax = max(1, l // 16)
            vy, vx = (int(v) for v in rng.integers(-vmax, vmax + 1, size=2))
            rects.append(Rect(
                top=int(rng.integers(0, l - h + 1)),
                left=int(rng.integers(0, l - w + 1)),
                height=h, width=w, vy=vy, vx=vx,
                color=tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3)),
            ))
        scenes.append(SceneParams(corner_colors=corners, rects=rects))
    return scenes


def render_scene(scene: SceneParams, F: int, l: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, l, dtype=np.float64)
    wy = t[:, None, None]
    wx = t[None, :, None]
    c = scene.corner_colors
    bg = ((1 - wy) * (1 - wx) * c[0, 0] + (1 - wy) * wx * c[0, 1]
          + wy * (1 - wx) * c[1, 0] + wy * wx * c[1, 1])
    video = np.empty((F, l, l, 3), dtype=np.float32)
    for k in range(F):
        frame = bg.copy()
        for r in scene.rects:
            y0 = r.top + r.vy * k
            x0 = r.left + r.vx * k
            ys, ye = max(y0, 0), min(y0 + r.height, l)
            xs, xe = max(x0, 0), min(x0 + r.width, l)
            if ys < ye and xs < xe:
                frame[ys:ye, xs:xe] = r.color
        video[k] = frame
    return video


def synth_corpus(n_videos: int, F: int, l: int, rng_seed) -> list[np.ndarray]:
    """Moving coloured rectangles over a gradient background, one video each."""
    return [render_scene(s, F, l) for s in synth_scene_params(n_videos, F, l, rng_seed)]
