"""
Synthetic moving-shapes video benchmark.

Every clip shows one or two striped shapes over a noisy background. The
class is the motion pattern; classes come in time-mirror pairs where the
odd class is the exact time reversal of the even one (right/left,
down/up, clockwise/counter-clockwise, down-right/up-left), so within a
pair single frames carry no class information.

A watermark variant paints every grid cell with a colour that encodes its
(h, w, t) coordinate plus a vertical ramp; it is the positive control for
the puzzle label pipeline.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from engine import NetworkParams, linear, linear_backward, sgd_step, softmax_cross_entropy
from puzzles.geometry import GRID_H, GRID_W, GeometryConfig

from .clip_io import VideoClip, write_clip, write_header, write_index

logger = logging.getLogger(__name__)

MOTIONS = (
    "translate_right", "translate_left",
    "translate_down", "translate_up",
    "rotate_cw", "rotate_ccw",
    "diagonal_down_right", "diagonal_up_left",
)
SHAPE_KINDS = ("bar", "triangle", "cross")
SPLIT_CODES = {"train": 0, "test": 1}


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Args:
        num_classes: Number of motion classes (even, at most len(MOTIONS))
        clips_per_class: Training clips per class
        test_clips_per_class: Test clips per class
        shape_kinds: Shapes drawn at random per object
        min_speed, max_speed: Translation speed in pixels per frame
        angular_speed: Rotation speed in radians per frame
        noise_level: Background noise amplitude as a fraction of 255
        max_shapes: Objects per clip are drawn from 1..max_shapes
        watermark: Paint grid-cell coordinate watermarks instead of shapes
        seed: Generation seed
    """

    num_classes: int = 8
    clips_per_class: int = 25
    test_clips_per_class: int = 10
    shape_kinds: Tuple[str, ...] = SHAPE_KINDS
    min_speed: float = 0.5
    max_speed: float = 1.5
    angular_speed: float = 0.15
    noise_level: float = 0.1
    max_shapes: int = 2
    watermark: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape_kinds", tuple(self.shape_kinds))
        if not 2 <= self.num_classes <= len(MOTIONS) or self.num_classes % 2:
            raise ValueError(f"num_classes must be an even number in [2, {len(MOTIONS)}], got {self.num_classes}")
        if self.clips_per_class < 1 or self.test_clips_per_class < 0:
            raise ValueError("clips_per_class must be >= 1 and test_clips_per_class >= 0")
        unknown = set(self.shape_kinds) - set(SHAPE_KINDS)
        if unknown or not self.shape_kinds:
            raise ValueError(f"unknown shape kinds {sorted(unknown)}; expected a subset of {SHAPE_KINDS}")
        if not 0 < self.min_speed <= self.max_speed:
            raise ValueError(f"speeds must satisfy 0 < min_speed <= max_speed, got {self.min_speed}, {self.max_speed}")
        if not 0 <= self.noise_level <= 1:
            raise ValueError(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if self.max_shapes < 1:
            raise ValueError(f"max_shapes must be >= 1, got {self.max_shapes}")

    @property
    def class_names(self) -> Tuple[str, ...]:
        return MOTIONS[:self.num_classes]


def mirror_class(class_id: int) -> int:
    """The time-reversed partner of a class."""
    return class_id ^ 1


def _shape_mask(kind: str, u: np.ndarray, v: np.ndarray, r: float) -> np.ndarray:
    if kind == "bar":
        return (np.abs(u) <= r) & (np.abs(v) <= r / 3)
    if kind == "triangle":
        return (v >= -r) & (v <= r) & (np.abs(u) <= (v + r) / 2)
    return ((np.abs(u) <= r) & (np.abs(v) <= r / 4)) | ((np.abs(u) <= r / 4) & (np.abs(v) <= r))


def _draw_object(spec: SyntheticSpec, pattern: str, frames: int, height: int, width: int,
                 rng: np.random.Generator) -> dict:
    kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]
    radius = float(rng.uniform(min(height, width) / 8, min(height, width) / 5))
    speed = float(rng.uniform(spec.min_speed, spec.max_speed))
    span = max(frames - 1, 1)
    dx = dy = 0.0
    if pattern == "translate_right":
        dx = speed
    elif pattern == "translate_down":
        dy = speed
    elif pattern == "diagonal_down_right":
        dx = dy = speed / np.sqrt(2)
    # keep the whole trajectory inside the frame
    dx = min(dx, max(width - 2 * radius, 0) / span)
    dy = min(dy, max(height - 2 * radius, 0) / span)
    x0 = float(rng.uniform(radius, max(width - radius - dx * span, radius)))
    y0 = float(rng.uniform(radius, max(height - radius - dy * span, radius)))
    omega = spec.angular_speed if pattern == "rotate_cw" else 0.0
    return {
        "kind": kind,
        "radius": radius,
        "x0": x0, "y0": y0, "dx": dx, "dy": dy,
        "angle0": float(rng.uniform(0, 2 * np.pi)),
        "omega": omega,
        "color": rng.integers(60, 256, size=3).astype(np.float32),
        "period": float(rng.uniform(radius / 2, radius)),
    }


def _render_forward(spec: SyntheticSpec, pattern: str, geometry: GeometryConfig,
                    rng: np.random.Generator) -> np.ndarray:
    frames, (height, width) = geometry.clip_frames, geometry.frame_size
    base = float(rng.uniform(40, 120))
    noise = (rng.random((frames, height, width, 3), dtype=np.float32) - 0.5) * (spec.noise_level * 255)
    video = np.clip(base + noise, 0, 255)
    objects = [_draw_object(spec, pattern, frames, height, width, rng)
               for _ in range(int(rng.integers(1, spec.max_shapes + 1)))]

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float32)
    for t in range(frames):
        for obj in objects:
            cx, cy = obj["x0"] + obj["dx"] * t, obj["y0"] + obj["dy"] * t
            angle = obj["angle0"] + obj["omega"] * t
            cos, sin = np.cos(angle), np.sin(angle)
            u = (xs - cx) * cos + (ys - cy) * sin
            v = -(xs - cx) * sin + (ys - cy) * cos
            mask = _shape_mask(obj["kind"], u, v, obj["radius"])
            stripes = 0.75 + 0.25 * np.sign(np.sin(2 * np.pi * u / obj["period"]))
            video[t][mask] = stripes[mask][:, None] * obj["color"][None, :]
    return np.clip(np.round(video), 0, 255).astype(np.uint8)


def render_clip(spec: SyntheticSpec, geometry: GeometryConfig, class_id: int,
                rng: np.random.Generator) -> np.ndarray:
    """
    Frames [T, H, W, 3] of one clip of the given class.

    Odd classes are the time reversal of the even class rendered with the
    same draws, so render_clip(k ^ 1, same seed) == render_clip(k)[::-1].
    """
    if not 0 <= class_id < spec.num_classes:
        raise ValueError(f"class id {class_id} outside [0, {spec.num_classes})")
    forward = MOTIONS[class_id & ~1]
    video = _render_forward(spec, forward, geometry, rng)
    return np.ascontiguousarray(video[::-1]) if class_id % 2 else video


def render_watermark_clip(spec: SyntheticSpec, geometry: GeometryConfig,
                          rng: np.random.Generator) -> np.ndarray:
    """Every grid cell coloured by its (h, w, t) coordinate with a vertical ramp inside the cell."""
    frames, (height, width) = geometry.clip_frames, geometry.frame_size
    cell_t, cell_h, cell_w = geometry.cell_size
    t_idx = np.arange(frames)[:, None, None] // cell_t
    h_idx = np.arange(height)[None, :, None] // cell_h
    w_idx = np.arange(width)[None, None, :] // cell_w
    ramp = (np.arange(height)[None, :, None] % cell_h) / max(cell_h - 1, 1)
    shape = (frames, height, width)
    video = np.empty(shape + (3,), dtype=np.float32)
    video[..., 0] = np.broadcast_to(40 + 120 * h_idx / max(GRID_H - 1, 1) + 40 * ramp, shape)
    video[..., 1] = np.broadcast_to(40 + 120 * w_idx / max(GRID_W - 1, 1) + 40 * ramp, shape)
    video[..., 2] = np.broadcast_to(40 + 40 * t_idx + 40 * ramp, shape)
    video += (rng.random(video.shape, dtype=np.float32) - 0.5) * (spec.noise_level * 64)
    return np.clip(np.round(video), 0, 255).astype(np.uint8)


def _clip_rng(seed: int, split: str, class_id: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLIT_CODES[split], class_id, index])


def generate_clips(spec: SyntheticSpec, geometry: GeometryConfig, split: str = "train",
                   progress: bool = False) -> List[VideoClip]:
    """All clips of a split, in (class, index) order."""
    count = spec.clips_per_class if split == "train" else spec.test_clips_per_class
    clips = []
    jobs = [(c, i) for c in range(spec.num_classes) for i in range(count)]
    for class_id, index in tqdm(jobs, desc=f"Generating {split}", disable=not progress):
        rng = _clip_rng(spec.seed, split, class_id & ~1, index)
        if spec.watermark:
            frames = render_watermark_clip(spec, geometry, rng)
        else:
            frames = render_clip(spec, geometry, class_id, rng)
        clip_id = f"{split}_{spec.class_names[class_id]}_{index:04d}"
        clips.append(VideoClip(frames, clip_id, class_id))
    return clips


def generate_synthetic_dataset(spec: SyntheticSpec, geometry: GeometryConfig, root,
                               progress: bool = True) -> Path:
    """
    Write train/test splits, their index files and the dataset header under root.

    Returns:
        The dataset root
    """
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {root}: {e}") from e

    header: Dict[str, object] = {
        "kind": "watermark" if spec.watermark else "moving_shapes",
        "frames": geometry.clip_frames,
        "height": geometry.frame_size[0],
        "width": geometry.frame_size[1],
        "channels": 3,
    }
    for key, value in asdict(spec).items():
        header[f"spec.{key}"] = ",".join(value) if isinstance(value, tuple) else value
    for class_id, name in enumerate(spec.class_names):
        header[f"class.{class_id}"] = name
        header[f"mirror.{class_id}"] = mirror_class(class_id)

    for split in ("train", "test"):
        entries = []
        for clip in generate_clips(spec, geometry, split, progress):
            relative = f"{split}/{clip.clip_id}.clip"
            write_clip(clip, root / relative)
            entries.append((relative, clip.action_label))
        write_index(root, split, entries)
        logger.info(f"Wrote {len(entries)} {split} clips to {root}")
    write_header(root, header)
    return root


def mean_frame_features(clips: Sequence[VideoClip]) -> np.ndarray:
    """Temporal mean frame of every clip, flattened and scaled to [0, 1]."""
    return np.stack([c.frames.mean(axis=0, dtype=np.float64).ravel() / 255.0 for c in clips]).astype(np.float32)


def mean_frame_probe(train: Sequence[VideoClip], test: Sequence[VideoClip], num_classes: int,
                     steps: int = 300, lr: float = 0.5, seed: int = 0) -> float:
    """
    Framewise-blind control: a softmax-regression probe on mean frames.

    Returns:
        Test top-1 accuracy
    """
    x_train, x_test = mean_frame_features(train), mean_frame_features(test)
    mean = x_train.mean(axis=0)
    x_train, x_test = x_train - mean, x_test - mean
    y_train = np.array([c.action_label for c in train])
    y_test = np.array([c.action_label for c in test])

    rng = np.random.default_rng(seed)
    params = NetworkParams()
    params.add("probe.weight", rng.standard_normal((x_train.shape[1], num_classes)) * 0.01)
    params.add("probe.bias", np.zeros(num_classes))
    for _ in range(steps):
        logits = linear(x_train, params["probe.weight"], params["probe.bias"])
        _, grad = softmax_cross_entropy(logits, y_train)
        grads = {}
        _, grads["probe.weight"], grads["probe.bias"] = linear_backward(grad, x_train, params["probe.weight"])
        params = sgd_step(params, grads, lr, momentum=0.9, weight_decay=1e-3)
    predictions = linear(x_test, params["probe.weight"], params["probe.bias"]).argmax(axis=1)
    return float(np.mean(predictions == y_test))
