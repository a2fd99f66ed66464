"""Metric records and the metrics CSV."""

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

logger = logging.getLogger(__name__)

CSV_FIELDS = ("step", "split", "loss", "top1", "wall_ms")


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    split: str
    loss: float
    top1: float
    wall_ms: int = 0

    def __post_init__(self):
        if not 0.0 <= self.top1 <= 1.0:
            raise ValueError(f"top1 accuracy must lie in [0, 1], got {self.top1}")

    def row(self) -> List[str]:
        return [str(self.step), self.split, f"{self.loss:.6f}", f"{self.top1:.6f}", str(self.wall_ms)]


class MetricsWriter:
    """
    Appends one CSV row per evaluation.

    The header is written when the file is new. In deterministic mode wall
    times are recorded as 0 so repeated runs produce identical files.
    """

    def __init__(self, path, deterministic: bool = False, append: bool = False):
        self.path = Path(path) if path is not None else None
        self.deterministic = deterministic
        self.records: List[MetricsRecord] = []
        self._start = time.perf_counter()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not (append and self.path.exists()):
                with open(self.path, "w", newline="") as f:
                    csv.writer(f, lineterminator="\n").writerow(CSV_FIELDS)

    def elapsed_ms(self) -> int:
        return 0 if self.deterministic else int((time.perf_counter() - self._start) * 1000)

    def log(self, step: int, split: str, loss: float, top1: float,
            wall_ms: Optional[int] = None) -> MetricsRecord:
        record = MetricsRecord(step, split, float(loss), float(top1),
                               self.elapsed_ms() if wall_ms is None else wall_ms)
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(record.row())
        logger.info(f"step {step} [{split}] loss={record.loss:.4f} top1={record.top1:.3f}")
        return record


def read_metrics(path) -> List[MetricsRecord]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(CSV_FIELDS)}")
        return [
            MetricsRecord(int(r["step"]), r["split"], float(r["loss"]), float(r["top1"]), int(r["wall_ms"]))
            for r in reader
        ]
