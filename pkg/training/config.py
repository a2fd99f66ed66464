"""Training hyperparameters for puzzle pretraining and action fine-tuning."""

from dataclasses import asdict, dataclass
from enum import Enum

from puzzles.permutations import num_classes
from puzzles.sampler import AblationFlags


class Task(str, Enum):
    """Pretext variants: both tuple modes, spatial tuples only, temporal tuples only."""

    ST = "st"
    S = "s"
    T = "t"

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, cls):
            return value
        text = str(value).lower()
        if text.endswith("_puzzle"):
            text = text[:-len("_puzzle")]
        try:
            return cls(text)
        except ValueError:
            raise ValueError(f"unknown task {value!r}; expected one of st, s, t") from None


MODE_PROB_SPATIAL = {Task.ST: 0.5, Task.S: 1.0, Task.T: 0.0}


@dataclass(frozen=True)
class TrainConfig:
    """
    Args:
        task: Pretext variant (st, s or t)
        batch_size: Puzzle tuples per pretraining step and clips per fine-tuning step
        lr: Pretraining learning rate (constant)
        momentum: SGD momentum for both phases
        weight_decay: Pretraining L2 coefficient
        steps: Pretraining steps
        finetune_lr: Fine-tuning learning rate, divided by 10 after 60% of the steps
        finetune_weight_decay: Fine-tuning L2 coefficient
        finetune_steps: Fine-tuning steps
        linear_probe: Freeze the backbone during fine-tuning
        jitter, channel_replication, rwc, grayscale: Sampler ablation switches
        flip_prob: Probability of an upside-down tuple when rwc is on
        eval_every: Steps between metric records and checkpoints
        eval_samples: Puzzle tuples in the pretext evaluation set
        seed: Run seed
        workers: Sampler threads
        deterministic: Single sampler thread and zeroed wall times
    """

    task: Task = Task.ST
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    steps: int = 1000
    finetune_lr: float = 0.05
    finetune_weight_decay: float = 5e-4
    finetune_steps: int = 300
    linear_probe: bool = True
    jitter: bool = True
    channel_replication: bool = True
    rwc: bool = True
    grayscale: bool = False
    flip_prob: float = 0.5
    eval_every: int = 100
    eval_samples: int = 64
    seed: int = 0
    workers: int = 2
    deterministic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task", Task.parse(self.task))
        for name in ("batch_size", "eval_every", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("steps", "finetune_steps", "eval_samples"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("lr", "finetune_lr", "weight_decay", "finetune_weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def mode_prob_spatial(self) -> float:
        return MODE_PROB_SPATIAL[self.task]

    @property
    def ablation_flags(self) -> AblationFlags:
        return AblationFlags(self.jitter, self.channel_replication, self.rwc, self.grayscale)

    @property
    def num_classes(self) -> int:
        return num_classes(self.rwc)

    @property
    def sampler_workers(self) -> int:
        return 1 if self.deterministic else self.workers

    def finetune_lr_at(self, step: int) -> float:
        """Fine-tune learning rate with the single step decay at 60% of the run."""
        return self.finetune_lr / 10 if step >= 0.6 * self.finetune_steps else self.finetune_lr

    def to_dict(self) -> dict:
        values = asdict(self)
        values["task"] = self.task.value
        return values
