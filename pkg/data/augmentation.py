"""
Fine-tuning clip augmentation and sliding-window evaluation clips.

Training windows take a uniformly placed run of consecutive frames, a
square crop whose side is a random scale of the shorter frame side at a
random position, and a 50% horizontal flip, resized bilinearly to the
fine-tune input size. Evaluation windows are non-overlapping, center
cropped at scale 1 and involve no randomness.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np
from PIL import Image

from puzzles.geometry import GeometryConfig

logger = logging.getLogger(__name__)

SCALES = (1.0, 2 ** -0.25, 2 ** -0.5, 2 ** -0.75, 0.5)


@dataclass(frozen=True)
class ClipAugmentation:
    """One draw of the fine-tune augmentation: frame window and square crop box."""

    start: int
    scale: float
    top: int
    left: int
    side: int
    flip: bool


def _frames(clip) -> np.ndarray:
    frames = getattr(clip, "frames", clip)
    if frames.ndim != 4:
        raise ValueError(f"clip frames must be T x H x W x C, got shape {frames.shape}")
    return frames


def _check_length(frames: np.ndarray, geometry: GeometryConfig):
    if frames.shape[0] < geometry.finetune_frames:
        raise ValueError(
            f"clip has {frames.shape[0]} frames; at least {geometry.finetune_frames} are needed"
        )


def draw_augmentation(clip, geometry: GeometryConfig, rng: np.random.Generator,
                      center: bool = False) -> ClipAugmentation:
    """
    Draw window start, scale, crop position and flip.

    With center set, the scale is 1, the crop is centered and there is no flip;
    only the window start is random.
    """
    frames = _frames(clip)
    _check_length(frames, geometry)
    t, h, w = frames.shape[:3]
    start = int(rng.integers(0, t - geometry.finetune_frames + 1))
    if center:
        side = min(h, w)
        return ClipAugmentation(start, 1.0, (h - side) // 2, (w - side) // 2, side, False)
    scale = SCALES[int(rng.integers(len(SCALES)))]
    side = max(1, int(round(min(h, w) * scale)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    return ClipAugmentation(start, scale, top, left, side, bool(rng.random() < 0.5))


def normalize_clip(volume: np.ndarray) -> np.ndarray:
    """[T, S, S, C] pixels -> [C, T, S, S] in [0, 1] minus the window mean."""
    scaled = volume.astype(np.float32) / np.float32(255.0)
    scaled -= np.float32(scaled.mean(dtype=np.float64))
    return np.ascontiguousarray(scaled.transpose(3, 0, 1, 2))


def apply_augmentation(clip, geometry: GeometryConfig, aug: ClipAugmentation) -> np.ndarray:
    """
    Cut and resize one window.

    Returns:
        Tensor [C, finetune_frames, finetune_size, finetune_size]
    """
    frames = _frames(clip)
    _check_length(frames, geometry)
    t, h, w = frames.shape[:3]
    if aug.start + geometry.finetune_frames > t:
        raise ValueError(f"window start {aug.start} leaves fewer than {geometry.finetune_frames} frames")
    if aug.top < 0 or aug.left < 0 or aug.top + aug.side > h or aug.left + aug.side > w:
        raise ValueError(f"crop box ({aug.top}, {aug.left}, side {aug.side}) outside the {h}x{w} frame")

    size = geometry.finetune_size
    box = (aug.left, aug.top, aug.left + aug.side, aug.top + aug.side)
    resized = []
    for frame in frames[aug.start:aug.start + geometry.finetune_frames]:
        image = Image.fromarray(frame)
        resized.append(np.asarray(image.resize((size, size), Image.BILINEAR, box=box)))
    volume = np.stack(resized)
    if aug.flip:
        volume = volume[:, :, ::-1]
    return normalize_clip(volume)


def finetune_sample(clip, geometry: GeometryConfig, rng: np.random.Generator,
                    center: bool = False) -> np.ndarray:
    """Randomly augmented fine-tuning window [C, F, S, S]."""
    return apply_augmentation(clip, geometry, draw_augmentation(clip, geometry, rng, center))


def window_starts(num_frames: int, window: int) -> List[int]:
    """Starts of the non-overlapping windows; a short tail is dropped."""
    return [i * window for i in range(num_frames // window)]


def sliding_window_clips(clip, geometry: GeometryConfig) -> List[np.ndarray]:
    """
    Every non-overlapping fine-tune window of a clip, center cropped.

    Raises:
        ValueError if the clip is shorter than one window
    """
    frames = _frames(clip)
    _check_length(frames, geometry)
    t, h, w = frames.shape[:3]
    side = min(h, w)
    windows = []
    for start in window_starts(t, geometry.finetune_frames):
        aug = ClipAugmentation(start, 1.0, (h - side) // 2, (w - side) // 2, side, False)
        windows.append(apply_augmentation(frames, geometry, aug))
    return windows
