"""
Comparison experiments on a labeled benchmark.

Every experiment pretrains one or more puzzle networks, trains a linear
probe on top of each frozen backbone and reports test top-1 accuracy per
configuration and seed.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from engine import NetworkParams
from models.backbone import BackboneConfig
from puzzles.geometry import GeometryConfig

from .config import Task, TrainConfig
from .evaluation import SplitEval, accuracy_from_scores, ensemble_scores, evaluate_split
from .trainer import finetune_run, pretrain_run

logger = logging.getLogger(__name__)

ABLATION_LADDER: Tuple[Tuple[str, dict], ...] = (
    ("no_regularization", {"jitter": False, "channel_replication": False, "rwc": False}),
    ("+channel_replication", {"jitter": False, "channel_replication": True, "rwc": False}),
    ("+jitter", {"jitter": True, "channel_replication": True, "rwc": False}),
    ("+rwc", {"jitter": True, "channel_replication": True, "rwc": True}),
)


@dataclass(frozen=True)
class ExperimentRow:
    name: str
    seed: int
    accuracy: float


@dataclass
class Benchmark:
    """Train/test clips of a labeled dataset plus the shared architecture."""

    train: Sequence
    test: Sequence
    num_classes: int
    geometry: GeometryConfig
    backbone: BackboneConfig


def linear_probe(bench: Benchmark, config: TrainConfig, pretrained: Optional[NetworkParams],
                 progress: bool = False) -> SplitEval:
    probe_config = replace(config, linear_probe=True)
    result = finetune_run(bench.train, bench.geometry, bench.backbone, probe_config, bench.num_classes,
                          pretrained=pretrained, progress=progress)
    return evaluate_split(result.network, result.params, bench.test, bench.geometry)


def _pretrain(bench: Benchmark, config: TrainConfig, progress: bool) -> NetworkParams:
    return pretrain_run(bench.train, bench.geometry, bench.backbone, config, progress=progress).params


def transfer_comparison(bench: Benchmark, config: TrainConfig, seeds: Sequence[int],
                        progress: bool = False) -> List[ExperimentRow]:
    """Linear probe on an ST-puzzle pretrained backbone vs. on a random one."""
    rows = []
    for seed in seeds:
        run = replace(config, seed=seed, task=Task.ST)
        pretrained = _pretrain(bench, run, progress)
        rows.append(ExperimentRow("pretrained", seed, linear_probe(bench, run, pretrained, progress).top1))
        rows.append(ExperimentRow("random_init", seed, linear_probe(bench, run, None, progress).top1))
        logger.info(f"transfer seed {seed}: pretrained={rows[-2].accuracy:.3f} random={rows[-1].accuracy:.3f}")
    return rows


def strategy_comparison(bench: Benchmark, config: TrainConfig, seeds: Sequence[int],
                        progress: bool = False) -> List[ExperimentRow]:
    """ST, S and T puzzle pretraining, plus the average of the S and T probe scores."""
    rows = []
    for seed in seeds:
        evals: Dict[Task, SplitEval] = {}
        for task in (Task.ST, Task.S, Task.T):
            run = replace(config, seed=seed, task=task)
            evals[task] = linear_probe(bench, run, _pretrain(bench, run, progress), progress)
            rows.append(ExperimentRow(f"{task.value}_puzzle", seed, evals[task].top1))
        scores = ensemble_scores(evals[Task.S].scores, evals[Task.T].scores)
        top1, _ = accuracy_from_scores(scores, evals[Task.S].labels)
        rows.append(ExperimentRow("s+t_ensemble", seed, top1))
        logger.info(f"strategies seed {seed}: " + ", ".join(f"{r.name}={r.accuracy:.3f}" for r in rows[-4:]))
    return rows


def ablation_ladder(bench: Benchmark, config: TrainConfig, seeds: Sequence[int],
                    progress: bool = False) -> List[ExperimentRow]:
    """Accumulated anti-shortcut measures, from none to the full method."""
    rows = []
    for seed in seeds:
        for name, flags in ABLATION_LADDER:
            run = replace(config, seed=seed, task=Task.ST, **flags)
            accuracy = linear_probe(bench, run, _pretrain(bench, run, progress), progress).top1
            rows.append(ExperimentRow(name, seed, accuracy))
            logger.info(f"ablation seed {seed} {name}: {accuracy:.3f}")
    return rows


EXPERIMENTS = {
    "transfer": transfer_comparison,
    "strategies": strategy_comparison,
    "ablation": ablation_ladder,
}


def mean_accuracy(rows: Sequence[ExperimentRow]) -> "OrderedDict[str, float]":
    """Mean accuracy per configuration, in first-seen order."""
    grouped: "OrderedDict[str, List[float]]" = OrderedDict()
    for row in rows:
        grouped.setdefault(row.name, []).append(row.accuracy)
    return OrderedDict((name, float(np.mean(values))) for name, values in grouped.items())


def format_table(rows: Sequence[ExperimentRow]) -> str:
    seeds = sorted({row.seed for row in rows})
    names = list(mean_accuracy(rows))
    lookup = {(row.name, row.seed): row.accuracy for row in rows}
    width = max([len("configuration")] + [len(n) for n in names])
    header = f"{'configuration':<{width}}  " + "  ".join(f"seed {s:>3}" for s in seeds) + "      mean"
    lines = [header, "-" * len(header)]
    for name, mean in mean_accuracy(rows).items():
        cells = "  ".join(f"{lookup.get((name, s), float('nan')):>8.3f}" for s in seeds)
        lines.append(f"{name:<{width}}  {cells}  {mean:>8.3f}")
    return "\n".join(lines)


def check_experiment(kind: str, rows: Sequence[ExperimentRow]) -> List[str]:
    """Failed expectations of an experiment's seed-mean accuracies (empty when all hold)."""
    means = mean_accuracy(rows)
    failures = []
    if kind == "transfer":
        gain = means["pretrained"] - means["random_init"]
        if gain < 0.10:
            failures.append(f"pretrained probe beats random init by {gain:+.3f}, expected at least +0.100")
    elif kind == "strategies":
        single = (means["s_puzzle"], means["t_puzzle"])
        if means["st_puzzle"] < max(single) - 0.01:
            failures.append(f"st_puzzle {means['st_puzzle']:.3f} trails the best single-mode task {max(single):.3f}")
        if means["s+t_ensemble"] < min(single):
            failures.append(f"s+t_ensemble {means['s+t_ensemble']:.3f} is below the weaker single-mode task {min(single):.3f}")
    elif kind == "ablation":
        gain = means["+rwc"] - means["no_regularization"]
        if gain < 0.03:
            failures.append(f"full method beats no regularization by {gain:+.3f}, expected at least +0.030")
    else:
        raise ValueError(f"unknown experiment {kind!r}; expected one of {sorted(EXPERIMENTS)}")
    return failures
