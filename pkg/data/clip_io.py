"""
Clip storage.

One file per clip, little-endian:
    magic b"STCL" | u16 version | u32 T, H, W, C | i32 label (-1: none)
    u16 clip-id length | clip id (UTF-8) | T*H*W*C uint8 pixels
Each split has an index file `index_<split>.txt` with `clip_path<TAB>label`
lines (paths relative to the dataset root) and the dataset root holds a
`dataset.txt` header of key=value lines.
"""

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b"STCL"
FORMAT_VERSION = 1
HEADER_FILE = "dataset.txt"
_HEADER = struct.Struct("<4sH4IiH")


class ClipFormatError(ValueError):
    """Corrupt, truncated or mismatched clip file."""


@dataclass
class VideoClip:
    frames: np.ndarray
    clip_id: str
    action_label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or min(self.frames.shape) < 1:
            raise ValueError(f"clip frames must be a non-empty T x H x W x C volume, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.frames.shape


def write_clip(clip: VideoClip, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    encoded = clip.clip_id.encode("utf-8")
    label = -1 if clip.action_label is None else int(clip.action_label)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, *clip.frames.shape, label, len(encoded))
    with open(path, "wb") as f:
        f.write(header)
        f.write(encoded)
        f.write(clip.frames.tobytes())
    return path


def read_clip(path, expected_shape: Optional[Tuple[int, ...]] = None) -> VideoClip:
    """
    Read a clip file.

    Args:
        path: Clip file
        expected_shape: (T, H, W) or (T, H, W, C) the dataset header promises

    Raises:
        ClipFormatError on bad magic, version, truncation or extent mismatch
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ClipFormatError(f"cannot read clip {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise ClipFormatError(f"{path}: truncated clip header")
    magic, version, t, h, w, c, label, id_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ClipFormatError(f"{path}: not a clip file (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ClipFormatError(f"{path}: unsupported clip version {version}")
    if min(t, h, w, c) < 1:
        raise ClipFormatError(f"{path}: invalid extents {(t, h, w, c)}")
    if expected_shape is not None:
        expected = tuple(expected_shape)
        if (t, h, w, c)[:len(expected)] != expected:
            raise ClipFormatError(f"{path}: extents {(t, h, w, c)} do not match the dataset header {expected}")
    start = _HEADER.size + id_len
    size = t * h * w * c
    if len(blob) != start + size:
        raise ClipFormatError(f"{path}: expected {start + size} bytes, found {len(blob)} (truncated or padded)")
    clip_id = blob[_HEADER.size:start].decode("utf-8", errors="replace")
    frames = np.frombuffer(blob, dtype=np.uint8, count=size, offset=start).reshape(t, h, w, c).copy()
    return VideoClip(frames, clip_id, None if label < 0 else label)


def write_header(root, entries: Dict[str, object]) -> Path:
    path = Path(root) / HEADER_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{key}={value}" for key, value in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_header(root) -> Dict[str, str]:
    path = Path(root) / HEADER_FILE
    if not path.exists():
        raise ClipFormatError(f"dataset header not found: {path}")
    header = {}
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ClipFormatError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def write_index(root, split: str, entries: List[Tuple[str, int]]) -> Path:
    path = Path(root) / f"index_{split}.txt"
    path.write_text("".join(f"{clip_path}\t{label}\n" for clip_path, label in entries), encoding="utf-8")
    return path


def read_index(root, split: str) -> List[Tuple[Path, int]]:
    root = Path(root)
    path = root / f"index_{split}.txt"
    if not path.exists():
        raise ClipFormatError(f"no index for split {split!r}: {path}")
    entries = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ClipFormatError(f"{path}:{number}: expected clip_path<TAB>label")
        entries.append((root / parts[0], int(parts[1])))
    return entries


def dataset_clip_shape(header: Dict[str, str]) -> Tuple[int, int, int, int]:
    try:
        return tuple(int(header[key]) for key in ("frames", "height", "width", "channels"))
    except KeyError as e:
        raise ClipFormatError(f"dataset header lacks {e.args[0]!r}") from e


def load_split(root, split: str) -> List[VideoClip]:
    """Read every clip of a split, checking extents against the dataset header."""
    shape = dataset_clip_shape(read_header(root))
    clips = [read_clip(path, shape) for path, _ in read_index(root, split)]
    logger.info(f"Loaded {len(clips)} clips from split {split!r} of {root}")
    return clips


def has_split(root, split: str) -> bool:
    return os.path.exists(Path(root) / f"index_{split}.txt")
