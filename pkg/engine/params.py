"""
NetworkParams: the named parameter set of a network.

Parameters and their momentum buffers are kept in parallel ordered maps;
batch-norm running statistics are carried alongside as buffers. A tensor
shared by several towers exists exactly once in this map.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from .layers import RunningStats

logger = logging.getLogger(__name__)

NO_DECAY_SUFFIXES = (".gamma", ".beta", ".bias")


def is_decayed(name: str) -> bool:
    """Batch-norm gamma/beta and biases are excluded from weight decay."""
    return not name.endswith(NO_DECAY_SUFFIXES)


@dataclass
class NetworkParams:
    params: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    momentum: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    stats: "OrderedDict[str, RunningStats]" = field(default_factory=OrderedDict)

    def add(self, name: str, value: np.ndarray):
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        value = np.ascontiguousarray(value, dtype=np.float32)
        self.params[name] = value
        self.momentum[name] = np.zeros_like(value)

    def add_stats(self, name: str, channels: int):
        if name in self.stats:
            raise ValueError(f"running statistics {name!r} already exist")
        self.stats[name] = RunningStats.initial(channels)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list:
        return [name for name in self.params if name.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        """Number of scalar parameters whose name starts with prefix."""
        return int(sum(self.params[name].size for name in self.names(prefix)))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            params=OrderedDict((k, v.copy()) for k, v in self.params.items()),
            momentum=OrderedDict((k, v.copy()) for k, v in self.momentum.items()),
            stats=OrderedDict(
                (k, RunningStats(s.mean.copy(), s.var.copy(), s.num_batches_tracked))
                for k, s in self.stats.items()
            ),
        )

    def astype(self, dtype) -> "NetworkParams":
        """Copy with every parameter and statistic cast to dtype (float64 for gradient checks)."""
        return NetworkParams(
            params=OrderedDict((k, v.astype(dtype)) for k, v in self.params.items()),
            momentum=OrderedDict((k, v.astype(dtype)) for k, v in self.momentum.items()),
            stats=OrderedDict(
                (k, RunningStats(s.mean.astype(dtype), s.var.astype(dtype), s.num_batches_tracked))
                for k, s in self.stats.items()
            ),
        )

    def with_stats(self, updates: Dict[str, RunningStats]) -> "NetworkParams":
        """Same parameters, running statistics replaced where given."""
        stats = OrderedDict(self.stats)
        for name, value in updates.items():
            if name not in stats:
                raise KeyError(f"unknown running statistics {name!r}")
            stats[name] = value
        return NetworkParams(self.params, self.momentum, stats)

    def equal(self, other: "NetworkParams", names: Optional[Iterable[str]] = None) -> bool:
        """Bit-exact equality of the selected parameters (all by default)."""
        names = list(self.params) if names is None else list(names)
        if any(name not in other.params for name in names):
            return False
        return all(np.array_equal(self.params[n], other.params[n]) for n in names)
