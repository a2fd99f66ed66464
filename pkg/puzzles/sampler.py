"""
Space-time cubic puzzle sampler.

Turns a clip into a labeled puzzle sample: grid the clip into 2x2x4 cells,
pick a spatial (2x2x1) or temporal (1x1x4) group of four cells, cut a
jittered crop from each, apply the colour treatment, shuffle the crops by a
uniformly drawn permutation and optionally flip the whole tuple upside-down.
"""

import logging
import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .geometry import GRID_H, GRID_T, GRID_W, GeometryConfig, Triple
from .permutations import NUM_PERMUTATIONS, PuzzleLabel, inverse_permutation, permutation_unrank

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]  # (h, w, t)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


class TupleMode(str, Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class AblationFlags:
    """Anti-shortcut measures; all on for the full method."""

    jitter: bool = True
    channel_replication: bool = True
    rwc: bool = True
    grayscale: bool = False


@dataclass
class PuzzleSample:
    crops: List[np.ndarray]
    label: PuzzleLabel
    mode: TupleMode
    cells: List[Cell] = field(default_factory=list)
    offsets: List[Triple] = field(default_factory=list)

    def __post_init__(self):
        if len(self.crops) != 4:
            raise ValueError(f"a puzzle sample holds exactly 4 crops, got {len(self.crops)}")
        if len({c.shape for c in self.crops}) != 1:
            raise ValueError(f"crop shapes differ: {[c.shape for c in self.crops]}")

    @property
    def class_id(self) -> int:
        return self.label.class_id


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, key, ...); string keys are hashed with crc32."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        words.append(int(key))
    return np.random.default_rng(words)


def _frames(clip) -> np.ndarray:
    return getattr(clip, "frames", clip)


def select_tuple_cells(mode: TupleMode, rng: np.random.Generator) -> List[Cell]:
    """
    Four cells in canonical order.

    Spatial: all (h, w) at one temporal index, row-major.
    Temporal: t = 0..3 at one spatial position.
    """
    mode = TupleMode(mode)
    if mode is TupleMode.SPATIAL:
        t = int(rng.integers(GRID_T))
        return [(h, w, t) for h in range(GRID_H) for w in range(GRID_W)]
    position = int(rng.integers(GRID_H * GRID_W))
    h, w = divmod(position, GRID_W)
    return [(h, w, t) for t in range(GRID_T)]


def draw_jitter_offset(geometry: GeometryConfig, rng: np.random.Generator,
                       jitter: bool = True) -> Triple:
    """(t, h, w) offset of a crop inside its cell, uniform over [0, cell - crop] per axis."""
    if not jitter:
        return (0, 0, 0)
    return tuple(int(rng.integers(0, limit + 1)) for limit in geometry.jitter_range)


def extract_crop(clip, cell: Cell, offset: Triple, geometry: GeometryConfig) -> np.ndarray:
    """Raw crop [C, cropT, cropH, cropW] of a cell at the given in-cell offset."""
    frames = _frames(clip)
    if frames.ndim != 4:
        raise ValueError(f"clip frames must be T x H x W x C, got shape {frames.shape}")
    for axis, have, need in zip(("T", "H", "W"), frames.shape[:3], geometry.clip_size):
        if have < need:
            raise ValueError(f"clip extent {have} along {axis} is smaller than the geometry ({need})")
    h, w, t = cell
    if not (0 <= h < GRID_H and 0 <= w < GRID_W and 0 <= t < GRID_T):
        raise ValueError(f"cell {cell} outside the {GRID_H}x{GRID_W}x{GRID_T} grid")
    cell_t, cell_h, cell_w = geometry.cell_size
    crop_t, crop_h, crop_w = geometry.crop_size
    for axis, off, limit in zip(("T", "H", "W"), offset, geometry.jitter_range):
        if not 0 <= off <= limit:
            raise ValueError(f"offset {off} along {axis} outside [0, {limit}]")
    t0 = t * cell_t + offset[0]
    y0 = h * cell_h + offset[1]
    x0 = w * cell_w + offset[2]
    volume = frames[t0:t0 + crop_t, y0:y0 + crop_h, x0:x0 + crop_w]
    return np.ascontiguousarray(volume.transpose(3, 0, 1, 2))


def extract_crop_jittered(clip, cell: Cell, geometry: GeometryConfig,
                          rng: np.random.Generator, jitter: bool = True) -> np.ndarray:
    return extract_crop(clip, cell, draw_jitter_offset(geometry, rng, jitter), geometry)


def channel_replicate(crop: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Copy one uniformly chosen colour channel into all three."""
    if crop.shape[0] != 3:
        raise ValueError(f"channel replication needs 3 channels, got {crop.shape[0]}")
    channel = int(rng.integers(3))
    return np.ascontiguousarray(np.broadcast_to(crop[channel], crop.shape))


def to_grayscale(crop: np.ndarray) -> np.ndarray:
    """Luma of an RGB crop replicated to three channels."""
    if crop.shape[0] != 3:
        raise ValueError(f"grayscale conversion needs 3 channels, got {crop.shape[0]}")
    luma = np.tensordot(LUMA_WEIGHTS, crop.astype(np.float32), axes=([0], [0]))
    return np.ascontiguousarray(np.broadcast_to(luma, crop.shape), dtype=np.float32)


def flip_vertical(crop: np.ndarray) -> np.ndarray:
    """Mirror every frame of a [C, T, H, W] crop along the height axis."""
    return np.ascontiguousarray(crop[:, :, ::-1, :])


def normalize_crops(crops: List[np.ndarray]) -> List[np.ndarray]:
    """Scale pixels to [0, 1], then subtract the mean over all crops of the sample."""
    # exact sum for uint8 crops, so the mean does not depend on crop order or flips
    total = math.fsum(float(c.sum(dtype=np.float64)) for c in crops)
    mean = np.float32(total / (255.0 * sum(c.size for c in crops)))
    return [c.astype(np.float32) / np.float32(255.0) - mean for c in crops]


def _check_probability(name: str, value: float):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def make_puzzle_sample(clip, geometry: GeometryConfig, rng: np.random.Generator,
                       mode_prob_spatial: float = 0.5, flip_prob: float = 0.5,
                       flags: Optional[AblationFlags] = None) -> PuzzleSample:
    """
    Build one labeled puzzle sample.

    Args:
        clip: VideoClip (or a T x H x W x 3 uint8 array) at geometry resolution
        geometry: Grid and crop dimensions
        rng: Random generator owned by this sample
        mode_prob_spatial: Probability of a spatial tuple (else temporal)
        flip_prob: Probability of flipping the tuple upside-down (ignored when flags.rwc is off)
        flags: Ablation switches

    Returns:
        PuzzleSample whose crop i is the cell at canonical position perm[i]
    """
    _check_probability("mode_prob_spatial", mode_prob_spatial)
    _check_probability("flip_prob", flip_prob)
    flags = flags or AblationFlags()

    mode = TupleMode.SPATIAL if rng.random() < mode_prob_spatial else TupleMode.TEMPORAL
    cells = select_tuple_cells(mode, rng)
    offsets = [draw_jitter_offset(geometry, rng, flags.jitter) for _ in cells]
    crops = [extract_crop(clip, cell, offset, geometry) for cell, offset in zip(cells, offsets)]

    if flags.grayscale:
        crops = [to_grayscale(c) for c in crops]
    elif flags.channel_replication:
        crops = [channel_replicate(c, rng) for c in crops]

    rank = int(rng.integers(NUM_PERMUTATIONS))
    perm = permutation_unrank(rank)
    crops = [crops[p] for p in perm]
    cells = [cells[p] for p in perm]
    offsets = [offsets[p] for p in perm]

    flipped = bool(flags.rwc and rng.random() < flip_prob)
    if flipped:
        crops = [flip_vertical(c) for c in crops]

    return PuzzleSample(
        crops=normalize_crops(crops),
        label=PuzzleLabel(rank, flipped),
        mode=mode,
        cells=cells,
        offsets=offsets,
    )


def decode_puzzle_sample(sample: PuzzleSample) -> List[np.ndarray]:
    """Undo the flip and the permutation: crops back in canonical cell order."""
    crops = sample.crops
    if sample.label.flipped:
        crops = [flip_vertical(c) for c in crops]
    inverse = inverse_permutation(sample.label.permutation)
    return [crops[i] for i in inverse]
