"""
First-layer filter images.

Each 3D filter is drawn as its temporal slices side by side, min-max
normalized over the whole filter, and saved as a binary PPM (3 input
channels) or PGM (anything else). A montage holds every filter, one row
per filter group, separated by black lines.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from engine import NetworkParams
from models.checkpoint import CheckpointError

logger = logging.getLogger(__name__)

STEM_WEIGHT = "backbone.conv1.weight"
VARIATION_THRESHOLD = 1e-3


@dataclass
class FilterExport:
    filters: List[Path] = field(default_factory=list)
    montage: Path = None
    variation: Path = None
    temporal_spread: np.ndarray = None


def normalize_filter(weights: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a constant filter maps to 0.5 everywhere."""
    weights = weights.astype(np.float64)
    low, high = weights.min(), weights.max()
    if high == low:
        return np.full_like(weights, 0.5)
    return (weights - low) / (high - low)


def filter_tile(weights: np.ndarray) -> np.ndarray:
    """
    One filter [C_in, kT, kH, kW] as a uint8 image [kH, kT*kW(, 3)].
    """
    norm = normalize_filter(weights)
    c, kt, kh, kw = norm.shape
    if c == 3:
        tile = norm.transpose(2, 1, 3, 0).reshape(kh, kt * kw, 3)
    else:
        tile = norm.mean(axis=0).transpose(1, 0, 2).reshape(kh, kt * kw)
    return np.round(tile * 255).astype(np.uint8)


def temporal_spread(weights: np.ndarray) -> np.ndarray:
    """Per filter: mean over pixels of the std across temporal slices of the normalized filter."""
    return np.array([normalize_filter(w).std(axis=1).mean() for w in weights])


def _save(array: np.ndarray, path: Path) -> Path:
    Image.fromarray(array).save(path, format="PPM")
    return path


def export_filters(params: NetworkParams, out_dir, name: str = STEM_WEIGHT) -> FilterExport:
    """
    Write one image per filter, the montage and temporal_variation.txt.

    Raises:
        CheckpointError if the parameter set has no such 5-D tensor
    """
    if name not in params:
        raise CheckpointError(f"checkpoint has no {name!r} tensor to export")
    weights = params[name]
    if weights.ndim != 5:
        raise CheckpointError(f"{name!r} has shape {weights.shape}; expected [C_out, C_in, kT, kH, kW]")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    suffix = "ppm" if weights.shape[1] == 3 else "pgm"
    result = FilterExport()
    tiles = []
    for index, filt in enumerate(weights):
        tile = filter_tile(filt)
        tiles.append(tile)
        result.filters.append(_save(tile, out_dir / f"filter_{index:03d}.{suffix}"))

    columns = math.ceil(math.sqrt(len(tiles)))
    rows = math.ceil(len(tiles) / columns)
    th, tw = tiles[0].shape[:2]
    montage = np.zeros((rows * (th + 1) - 1, columns * (tw + 1) - 1) + tiles[0].shape[2:], dtype=np.uint8)
    for index, tile in enumerate(tiles):
        r, c = divmod(index, columns)
        montage[r * (th + 1):r * (th + 1) + th, c * (tw + 1):c * (tw + 1) + tw] = tile
    result.montage = _save(montage, out_dir / f"montage.{suffix}")

    spread = temporal_spread(weights)
    varying = float(np.mean(spread > VARIATION_THRESHOLD))
    lines = ["filter\ttemporal_spread"]
    lines += [f"{i}\t{value:.6f}" for i, value in enumerate(spread)]
    lines.append(f"# fraction of filters varying over time (> {VARIATION_THRESHOLD:g}): {varying:.3f}")
    result.variation = out_dir / "temporal_variation.txt"
    result.variation.write_text("\n".join(lines) + "\n", encoding="utf-8")
    result.temporal_spread = spread
    logger.info(f"Exported {len(tiles)} filters of {name} to {out_dir} ({varying:.0%} vary over time)")
    return result
