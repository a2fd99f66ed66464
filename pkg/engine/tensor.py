"""
Tensor plumbing for the numeric engine.

A tensor is a C-contiguous numpy array of 32-bit floats (64-bit floats are
accepted so gradient checks can run in double precision). This module holds
the validation helpers and the convolution geometry shared by every kernel.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

Tensor = np.ndarray
Triple = Tuple[int, int, int]

FLOAT_DTYPES = (np.float32, np.float64)
AXIS_NAMES = ("T", "H", "W")


def as_tensor(array, ndim: int = None, name: str = "tensor") -> Tensor:
    """
    Validate an array as an engine tensor.

    Args:
        array: Array-like input
        ndim: Required rank, or None to accept any rank
        name: Name used in error messages

    Returns:
        A C-contiguous float32/float64 array (float32 unless the input is float64)
    """
    arr = np.asarray(array)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have rank {ndim}, got shape {arr.shape}")
    if any(extent < 1 for extent in arr.shape):
        raise ValueError(f"{name} has a zero extent: shape {arr.shape}")
    return np.ascontiguousarray(arr)


def result_dtype(*arrays) -> np.dtype:
    """Common float dtype of the given arrays (float64 wins)."""
    return np.result_type(*[a.dtype for a in arrays if a is not None])


def triple(value, name: str) -> Triple:
    """Expand an int or a 3-sequence into a (T, H, W) triple."""
    if isinstance(value, (int, np.integer)):
        return (int(value),) * 3
    values = tuple(int(v) for v in value)
    if len(values) != 3:
        raise ValueError(f"{name} must have 3 entries (T, H, W), got {values}")
    return values


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one 3D convolution."""

    in_channels: int
    out_channels: int
    kernel: Triple = (3, 3, 3)
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", triple(self.kernel, "kernel"))
        object.__setattr__(self, "stride", triple(self.stride, "stride"))
        object.__setattr__(self, "padding", triple(self.padding, "padding"))
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(
                f"channel counts must be positive, got in={self.in_channels} out={self.out_channels}"
            )
        if min(self.kernel) < 1:
            raise ValueError(f"kernel extents must be >= 1, got {self.kernel}")
        if min(self.stride) < 1:
            raise ValueError(f"stride extents must be >= 1, got {self.stride}")
        if min(self.padding) < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel

    def output_extent(self, extent: Sequence[int]) -> Triple:
        """Output (T', H', W') for an input (T, H, W)."""
        return window_output_extent(extent, self.kernel, self.stride, self.padding)


def window_output_extent(extent: Sequence[int], kernel: Triple, stride: Triple,
                         padding: Triple) -> Triple:
    """floor((n + 2p - k) / s) + 1 per axis; rejects windows larger than the padded input."""
    out = []
    for axis, n, k, s, p in zip(AXIS_NAMES, extent, kernel, stride, padding):
        if n + 2 * p < k:
            raise ValueError(
                f"window extent {k} along {axis} exceeds padded input extent {n + 2 * p}"
            )
        out.append((n + 2 * p - k) // s + 1)
    return tuple(out)


def window_slices(offset: Triple, stride: Triple, out_extent: Triple) -> Tuple[slice, ...]:
    """Slices selecting, for a fixed kernel offset, the input element under every output position."""
    return tuple(
        slice(o, o + s * (n - 1) + 1, s)
        for o, s, n in zip(offset, stride, out_extent)
    )


def pad_spatiotemporal(x: Tensor, padding: Triple, value: float = 0.0) -> Tensor:
    """Pad the last three axes of an [N, C, T, H, W] tensor."""
    if not any(padding):
        return x
    widths = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    return np.pad(x, widths, mode="constant", constant_values=value)


def unpad_spatiotemporal(x: Tensor, padding: Triple) -> Tensor:
    pt, ph, pw = padding
    t, h, w = x.shape[2:]
    return x[:, :, pt:t - pt, ph:h - ph, pw:w - pw]
