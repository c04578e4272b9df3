"""On-disk formats for prepared samples and clip frame directories.

A sample file is::

    b"CCSM"  magic
    u32      format version
    u32 x4   frames, height, width, channels
    u32      mask flag (1 if a mask bitmap follows)
    f32[]    pixel data, little-endian, (F, H, W, C) order
    u8[]     packed mask bits, (F, H, W) order, only when flagged
"""
from __future__ import annotations

import json
import os
import re
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .data import PipelineConfig, Sample
from .errors import ChecksumError, EmptyInput, VersionError

SAMPLE_MAGIC = b"CCSM"
SAMPLE_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm"}


def cache_dir() -> Path:
    return Path(os.environ.get("COMBCN_CACHE", Path.home() / ".cache" / "combcn"))


def write_sample(path, sample: Sample) -> None:
    clean = np.ascontiguousarray(sample.clean, dtype="<f4")
    f, h, w, c = clean.shape
    has_mask = sample.mask is not None
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SAMPLE_MAGIC, SAMPLE_VERSION, f, h, w, c, int(has_mask)))
        fh.write(clean.tobytes())
        if has_mask:
            fh.write(np.packbits(np.asarray(sample.mask, dtype=bool).ravel()).tobytes())


def read_sample(path, source_id: str = "", frame_offset: int = 0) -> Sample:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ChecksumError(f"{path}: truncated header")
    magic, version, f, h, w, c, has_mask = _HEADER.unpack_from(raw)
    if magic != SAMPLE_MAGIC:
        raise ChecksumError(f"{path}: bad magic {magic!r}")
    if version != SAMPLE_VERSION:
        raise VersionError(f"{path}: sample format version {version}")
    n_px = f * h * w * c
    n_bits = f * h * w
    expected = _HEADER.size + 4 * n_px + (-(-n_bits // 8) if has_mask else 0)
    if len(raw) != expected:
        raise ChecksumError(f"{path}: expected {expected} bytes, found {len(raw)}")
    clean = np.frombuffer(raw, dtype="<f4", count=n_px, offset=_HEADER.size)
    clean = clean.reshape(f, h, w, c).astype(np.float32)
    mask = None
    if has_mask:
        bits = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size + 4 * n_px)
        mask = np.unpackbits(bits, count=n_bits).reshape(f, h, w)
    return Sample(clean=clean, mask=mask, source_id=source_id, frame_offset=frame_offset)


def write_manifest(path, entries: list[dict], cfg: PipelineConfig) -> None:
    doc = {"version": SAMPLE_VERSION, "pipeline": cfg.to_dict(), "samples": entries}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_manifest(path) -> tuple[list[dict], PipelineConfig]:
    doc = json.loads(Path(path).read_text())
    return doc["samples"], PipelineConfig.from_dict(doc["pipeline"])


def load_split(manifest_path, split: str) -> list[Sample]:
    """Load every sample of a manifest assigned to ``split`` ("train"/"val")."""
    entries, _ = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    return [
        read_sample(root / e["file"], e["source_id"], e["frame_offset"])
        for e in entries if e["split"] == split
    ]


def _numeric_key(p: Path):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", p.name)]


def list_images(directory) -> list[Path]:
    files = [p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    return sorted(files, key=_numeric_key)


def read_frames(source) -> list[np.ndarray]:
    """Read a clip from a directory of numbered images or a video file."""
    source = Path(source)
    if source.is_dir():
        files = list_images(source)
        if not files:
            raise EmptyInput(f"{source}: no image files")
        return [np.asarray(Image.open(p).convert("RGB")) for p in files]
    if source.suffix.lower() in VIDEO_SUFFIXES:
        import cv2  # optional dependency, only needed for container input

        cap = cv2.VideoCapture(str(source))
        frames = []
        while True:
            ok, bgr = cap.read()
            if not ok:
                break
            frames.append(bgr[..., ::-1].copy())
        cap.release()
        if not frames:
            raise EmptyInput(f"{source}: no decodable frames")
        return frames
    raise EmptyInput(f"{source}: not a frame directory or known video file")


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_frames(directory, video: np.ndarray, suffix: str = "") -> list[Path]:
    """Write an (F, H, W, C) float video as numbered PNG files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(video):
        frame = to_uint8(frame)
        if frame.ndim == 3 and frame.shape[-1] == 1:
            frame = frame[..., 0]
        p = directory / f"{k:05d}{suffix}.png"
        Image.fromarray(frame).save(p)
        paths.append(p)
    return paths


def read_mask(source) -> np.ndarray:
    """Load an (F, H, W) mask from ``.npy`` or a directory of mask images."""
    source = Path(source)
    if source.is_dir():
        files = list_images(source)
        if not files:
            raise EmptyInput(f"{source}: no mask images")
        return np.stack([(np.asarray(Image.open(p).convert("L")) > 127) for p in files]).astype(np.uint8)
    return (np.load(source) > 0).astype(np.uint8)


def iter_clip_sources(root) -> Iterable[Path]:
    root = Path(root)
    for p in sorted(root.iterdir(), key=_numeric_key):
        if p.is_dir() or p.suffix.lower() in VIDEO_SUFFIXES:
            yield p


def resolve_source_id(path: Path, root: Optional[Path] = None) -> str:
    return path.stem if root is None else str(path.relative_to(root))
