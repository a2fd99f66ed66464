"""
Checkpoint files.

Little-endian layout:
    magic b"STCP" | u32 format version | u32 header length | header (UTF-8 JSON)
    u32 record count | records
Each record:
    u16 name length | name | u8 rank | u32 extent * rank | float32 data
Record names are "param/<name>", "momentum/<name>" and
"stats/<layer>.running_mean|running_var|num_batches_tracked".
"""

import json
import logging
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from engine import NetworkParams, RunningStats

from .backbone import PREFIX

logger = logging.getLogger(__name__)

MAGIC = b"STCP"
FORMAT_VERSION = 1
_STATS_FIELDS = ("running_mean", "running_var", "num_batches_tracked")


class CheckpointError(ValueError):
    """Malformed checkpoint file or incompatible checkpoint contents."""


def _records(params: NetworkParams) -> List[Tuple[str, np.ndarray]]:
    records = [(f"param/{name}", value) for name, value in params.params.items()]
    records += [(f"momentum/{name}", value) for name, value in params.momentum.items()]
    for name, stats in params.stats.items():
        records.append((f"stats/{name}.running_mean", stats.mean))
        records.append((f"stats/{name}.running_var", stats.var))
        records.append((f"stats/{name}.num_batches_tracked",
                        np.array([stats.num_batches_tracked], dtype=np.float32)))
    return records


def save_checkpoint(params: NetworkParams, path, header: Optional[dict] = None) -> Path:
    """
    Write parameters, momentum buffers and running statistics to path.

    Args:
        params: Parameter set to save
        path: Destination file (written atomically through a temporary file)
        header: Config header (variant, geometry, class count, step...)

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header_bytes = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    records = _records(params)

    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack("<I", len(records)))
        for name, value in records:
            data = np.ascontiguousarray(value, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    os.replace(tmp, path)
    logger.info(f"Checkpoint written to {path} ({len(records)} tensors)")
    return path


class _Reader:
    def __init__(self, blob: bytes, path: Path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint (needed {size} bytes at offset {self.pos})")
        chunk = self.blob[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Tuple[dict, NetworkParams]:
    """
    Read a checkpoint.

    Returns:
        (header dict, NetworkParams)
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    reader = _Reader(blob, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {e}") from e

    (count,) = reader.unpack("<I")
    params = NetworkParams()
    stats_parts: Dict[str, dict] = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)

        group, _, key = name.partition("/")
        if group == "param":
            params.params[key] = data
        elif group == "momentum":
            params.momentum[key] = data
        elif group == "stats":
            layer, _, field_name = key.rpartition(".")
            if field_name not in _STATS_FIELDS:
                raise CheckpointError(f"{path}: unknown statistics record {name!r}")
            stats_parts.setdefault(layer, {})[field_name] = data
        else:
            raise CheckpointError(f"{path}: unknown record group in {name!r}")
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.pos} trailing bytes after the last record")

    if set(params.params) != set(params.momentum):
        raise CheckpointError(f"{path}: parameter and momentum records do not match")
    for layer, parts in stats_parts.items():
        if set(parts) != set(_STATS_FIELDS):
            raise CheckpointError(f"{path}: incomplete statistics for {layer!r}")
        params.stats[layer] = RunningStats(parts["running_mean"], parts["running_var"],
                                           int(parts["num_batches_tracked"][0]))
    params.momentum = OrderedDict((name, params.momentum[name]) for name in params.params)
    logger.info(f"Loaded checkpoint {path} ({len(params.params)} parameters)")
    return header, params


def mismatched_names(target: NetworkParams, source: NetworkParams,
                     names: Iterable[str]) -> List[str]:
    problems = []
    for name in names:
        if name not in source.params:
            problems.append(f"{name} (missing)")
        elif source.params[name].shape != target.params[name].shape:
            problems.append(f"{name} (shape {source.params[name].shape} != {target.params[name].shape})")
    return problems


def load_into(target: NetworkParams, source: NetworkParams, prefix: str = "",
              with_momentum: bool = False) -> NetworkParams:
    """
    Copy every parameter of target whose name starts with prefix from source.

    Running statistics of the matching layers come along; momentum buffers
    only when with_momentum is set. Names outside the prefix keep their
    current values.

    Raises:
        CheckpointError listing missing or mismatched names
    """
    names = target.names(prefix)
    problems = mismatched_names(target, source, names)
    if problems:
        raise CheckpointError(f"checkpoint does not match the network: {', '.join(problems)}")
    loaded = target.copy()
    for name in names:
        loaded.params[name] = source.params[name].copy()
        if with_momentum:
            loaded.momentum[name] = source.momentum[name].copy()
    for layer in loaded.stats:
        if layer.startswith(prefix):
            if layer not in source.stats:
                raise CheckpointError(f"checkpoint has no running statistics for {layer!r}")
            stats = source.stats[layer]
            loaded.stats[layer] = RunningStats(stats.mean.copy(), stats.var.copy(), stats.num_batches_tracked)
    logger.info(f"Loaded {len(names)} tensors with prefix {prefix!r}")
    return loaded


def check_header(header: dict, expected: dict):
    """Raise CheckpointError naming every header field that differs from expected."""
    problems = [
        f"{key}: checkpoint has {header.get(key)!r}, expected {value!r}"
        for key, value in expected.items()
        if header.get(key) != value
    ]
    if problems:
        raise CheckpointError("incompatible checkpoint: " + "; ".join(problems))


def load_backbone(target: NetworkParams, source: NetworkParams) -> Tuple[NetworkParams, List[str], List[str]]:
    """
    Initialize the backbone of target from a pretrained parameter set.

    Returns:
        (loaded parameter set, loaded names, names left at their current values)
    """
    loaded = load_into(target, source, prefix=PREFIX)
    names = target.names(PREFIX)
    skipped = [name for name in target.params if not name.startswith(PREFIX)]
    return loaded, names, skipped
