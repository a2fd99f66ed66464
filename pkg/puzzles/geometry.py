"""
Clip, grid, cell and crop geometry.

All volumetric sizes are (T, H, W) triples. The cuboid grid is fixed at
2 (H) x 2 (W) x 4 (T) cells.
"""

from dataclasses import asdict, dataclass
from typing import Tuple

Triple = Tuple[int, int, int]

GRID_T, GRID_H, GRID_W = 4, 2, 2
GRID = (GRID_T, GRID_H, GRID_W)


@dataclass(frozen=True)
class GeometryConfig:
    """
    Spatial and temporal dimensions for puzzle pretraining and fine-tuning.

    Args:
        clip_frames: Frames per pretraining clip
        frame_size: (H, W) of every frame
        crop_size: (T, H, W) of one puzzle crop
        finetune_frames: Frames per fine-tuning / evaluation window
        finetune_size: Square side of fine-tuning inputs
    """

    clip_frames: int = 32
    frame_size: Tuple[int, int] = (56, 56)
    crop_size: Triple = (4, 20, 20)
    finetune_frames: int = 4
    finetune_size: int = 28

    def __post_init__(self):
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        object.__setattr__(self, "crop_size", tuple(int(v) for v in self.crop_size))
        if len(self.frame_size) != 2 or len(self.crop_size) != 3:
            raise ValueError(f"frame_size must be (H, W) and crop_size (T, H, W); got {self.frame_size}, {self.crop_size}")
        for axis, extent, cells in zip(("T", "H", "W"), self.clip_size, GRID):
            if extent <= 0 or extent % cells:
                raise ValueError(f"clip extent {extent} along {axis} is not divisible into {cells} grid cells")
        for axis, crop, cell in zip(("T", "H", "W"), self.crop_size, self.cell_size):
            if not 1 <= crop <= cell:
                raise ValueError(f"crop extent {crop} along {axis} must lie in [1, cell extent {cell}]")
        if not 1 <= self.finetune_frames <= self.clip_frames:
            raise ValueError(f"finetune_frames={self.finetune_frames} must lie in [1, clip_frames={self.clip_frames}]")
        if self.finetune_size < 1:
            raise ValueError(f"finetune_size must be positive, got {self.finetune_size}")

    @property
    def clip_size(self) -> Triple:
        return (self.clip_frames,) + self.frame_size

    @property
    def cell_size(self) -> Triple:
        return tuple(extent // cells for extent, cells in zip(self.clip_size, GRID))

    @property
    def jitter_range(self) -> Triple:
        """Largest crop offset inside a cell, per axis."""
        return tuple(cell - crop for cell, crop in zip(self.cell_size, self.crop_size))

    @property
    def finetune_input(self) -> Triple:
        return (self.finetune_frames, self.finetune_size, self.finetune_size)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def paper(cls) -> "GeometryConfig":
        """224x224 frames, 128-frame clips, 112x112x32 cells, 80x80x16 crops."""
        return cls(clip_frames=128, frame_size=(224, 224), crop_size=(16, 80, 80),
                   finetune_frames=16, finetune_size=112)

    @classmethod
    def desk(cls) -> "GeometryConfig":
        return cls()
