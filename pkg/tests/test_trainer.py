"""
Tests for batches, pretraining, fine-tuning, evaluation and the comparison experiments.
"""

import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from data.augmentation import sliding_window_clips
from data.clip_io import VideoClip
from data.synthetic import SyntheticSpec, generate_clips
from engine import EVAL, TRAIN, softmax
from models.backbone import BackboneConfig
from models.checkpoint import CheckpointError, load_checkpoint
from models.networks import ActionNetwork, PuzzleNetwork, apply_stats
from puzzles.geometry import GeometryConfig
from puzzles.sampler import TupleMode
from training.batches import Prefetcher, collate_puzzles, puzzle_batch, puzzle_samples
from training.config import Task, TrainConfig
from training.evaluation import ensemble_scores, evaluate_pretext, evaluate_video
from training.experiments import (
    Benchmark,
    ExperimentRow,
    ablation_ladder,
    check_experiment,
    format_table,
    mean_accuracy,
    strategy_comparison,
    transfer_comparison,
)
from training.metrics import MetricsRecord, read_metrics
from training.trainer import (
    CHECKPOINT_NAME,
    METRICS_NAME,
    finetune_run,
    geometry_from_header,
    pretrain_run,
    pretrain_step,
)

TINY = BackboneConfig.for_variant("tiny")


@pytest.fixture(scope="module")
def clips():
    spec = SyntheticSpec(num_classes=4, clips_per_class=2, test_clips_per_class=1, seed=1)
    return generate_clips(spec, GeometryConfig.desk(), "train")


@pytest.fixture
def quick():
    return TrainConfig(batch_size=4, steps=2, finetune_steps=2, eval_every=1, eval_samples=8,
                       workers=1, deterministic=True)


class TestConfig:
    """Tests for training hyperparameters."""

    @pytest.mark.parametrize("text,task", [("st", Task.ST), ("S_puzzle", Task.S), ("t", Task.T)])
    def test_parse_task(self, text, task):
        """Test task names with and without the _puzzle suffix."""
        assert Task.parse(text) is task

    def test_mode_probabilities(self):
        """Test 0.5 / 1 / 0 spatial probability for st / s / t."""
        assert [TrainConfig(task=t).mode_prob_spatial for t in ("st", "s", "t")] == [0.5, 1.0, 0.0]

    def test_rwc_class_count(self):
        """Test 48 classes with rwc and 24 without."""
        assert TrainConfig().num_classes == 48
        assert TrainConfig(rwc=False).num_classes == 24

    def test_finetune_schedule(self):
        """Test the tenfold decay at 60% of the fine-tuning steps."""
        config = TrainConfig(finetune_lr=0.1, finetune_steps=10)
        assert config.finetune_lr_at(5) == 0.1
        assert config.finetune_lr_at(6) == pytest.approx(0.01)

    def test_invalid_values(self):
        """Test that out-of-range hyperparameters are rejected."""
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError, match="unknown task"):
            TrainConfig(task="xy")

    def test_deterministic_uses_one_worker(self):
        """Test that deterministic mode forces a single sampler thread."""
        assert TrainConfig(workers=4, deterministic=True).sampler_workers == 1


class TestBatches:
    """Tests for batch assembly and prefetching."""

    def test_puzzle_batch_layout(self, clips, desk_geometry, quick):
        """Test 4 crop tensors of [N, 3, 4, 20, 20]."""
        batch = puzzle_batch(clips, desk_geometry, quick, step=0)
        assert len(batch) == 4
        assert all(c.shape == (4, 3, 4, 20, 20) for c in batch.crops)

    def test_task_restricts_modes(self, clips, desk_geometry, quick):
        """Test that s and t tasks draw only their tuple mode."""
        spatial = puzzle_samples(clips, desk_geometry, replace(quick, task="s"), 0, 16)
        temporal = puzzle_samples(clips, desk_geometry, replace(quick, task="t"), 0, 16)
        assert {s.mode for s in spatial} == {TupleMode.SPATIAL}
        assert {s.mode for s in temporal} == {TupleMode.TEMPORAL}

    def test_empty_batch(self):
        """Test that zero samples cannot be collated."""
        with pytest.raises(ValueError, match="zero samples"):
            collate_puzzles([])

    def test_prefetcher_is_worker_independent(self, clips, desk_geometry, quick):
        """Test that 1 and 3 sampler threads produce the same batches in step order."""
        def make(step):
            return puzzle_batch(clips, desk_geometry, quick, step)

        single = list(Prefetcher(make, 0, 5, workers=1))
        threaded = list(Prefetcher(make, 0, 5, workers=3, depth=2))
        assert [s for s, _ in threaded] == [0, 1, 2, 3, 4]
        for (_, a), (_, b) in zip(single, threaded):
            np.testing.assert_array_equal(a.labels, b.labels)
            for ca, cb in zip(a.crops, b.crops):
                np.testing.assert_array_equal(ca, cb)


class TestMetrics:
    """Tests for metric records."""

    def test_row_format(self):
        """Test the CSV row of a record."""
        assert MetricsRecord(10, "val", 1.5, 0.25).row() == ["10", "val", "1.500000", "0.250000", "0"]

    def test_accuracy_range(self):
        """Test that accuracies outside [0, 1] are rejected."""
        with pytest.raises(ValueError, match="top1"):
            MetricsRecord(1, "train", 0.1, 1.5)


class TestEvaluation:
    """Tests for score ensembling and video classification."""

    def test_ensemble_average(self):
        """Test the elementwise mean of two distributions."""
        out = ensemble_scores([0.2, 0.8], [0.6, 0.4])
        np.testing.assert_allclose(out, [0.4, 0.6])

    def test_ensemble_shape_mismatch(self):
        """Test that vectors of different length are rejected."""
        with pytest.raises(ValueError, match="shapes differ"):
            ensemble_scores([0.5, 0.5], [1.0, 0.0, 0.0])

    def test_ensemble_not_distribution(self):
        """Test that inputs not summing to 1 are rejected."""
        with pytest.raises(ValueError, match="sum to 1"):
            ensemble_scores([0.5, 0.6], [0.5, 0.5])

    def test_ensemble_literal_examples(self):
        """Test e0 + e1 averaging to (0.5, 0.5, 0, 0) and identical vectors returning themselves."""
        np.testing.assert_array_equal(ensemble_scores([1, 0, 0, 0], [0, 1, 0, 0]), [0.5, 0.5, 0.0, 0.0])
        scores = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_allclose(ensemble_scores(scores, scores), scores, rtol=0, atol=1e-15)
        assert ensemble_scores(scores, scores[::-1]).sum() == pytest.approx(1.0, abs=1e-6)

    @pytest.fixture
    def action(self, rng):
        network = ActionNetwork(TINY, num_classes=4)
        params = network.build(rng)
        _, _, stats = network.forward(params, rng.standard_normal((2, 3, 4, 28, 28)).astype(np.float32), TRAIN)
        return network, apply_stats(params, stats)

    def test_single_window_matches_direct_forward(self, action, clips, desk_geometry):
        """Test that a clip holding exactly one window scores like one forward pass of that window."""
        network, params = action
        short = VideoClip(clips[0].frames[:desk_geometry.finetune_frames], "short")
        windows = sliding_window_clips(short, desk_geometry)
        assert len(windows) == 1
        logits, _, _ = network.forward(params, windows[0][None], EVAL)
        _, scores = evaluate_video(network, params, short, desk_geometry)
        np.testing.assert_allclose(scores, softmax(logits)[0], rtol=1e-6)

    def test_duplicated_windows_keep_average(self, action, clips, desk_geometry):
        """Test that repeating the clip in time, so every window appears twice, leaves the scores unchanged."""
        network, params = action
        doubled = VideoClip(np.concatenate([clips[0].frames, clips[0].frames]), "doubled")
        windows = sliding_window_clips(clips[0], desk_geometry)
        assert len(sliding_window_clips(doubled, desk_geometry)) == 2 * len(windows)
        _, once = evaluate_video(network, params, clips[0], desk_geometry)
        _, twice = evaluate_video(network, params, doubled, desk_geometry)
        np.testing.assert_allclose(twice, once, rtol=1e-5)

    def test_evaluate_video(self, clips, desk_geometry, rng):
        """Test that the averaged window scores form a distribution and give the argmax."""
        network = ActionNetwork(TINY, num_classes=4)
        params = network.build(rng)
        _, _, stats = network.forward(params, rng.standard_normal((2, 3, 4, 28, 28)).astype(np.float32), TRAIN)
        params = apply_stats(params, stats)
        prediction, scores = evaluate_video(network, params, clips[0], desk_geometry)
        assert scores.shape == (4,)
        assert scores.sum() == pytest.approx(1.0, abs=1e-5)
        assert prediction == int(np.argmax(scores))


class TestPretraining:
    """Tests for the puzzle pretraining loop."""

    def test_zero_lr_keeps_weights(self, clips, desk_geometry, quick):
        """Test that lr 0 leaves parameters unchanged with an initial loss near ln 48."""
        network = PuzzleNetwork(TINY)
        params = network.build(np.random.default_rng(0))
        batch = puzzle_batch(clips, desk_geometry, replace(quick, batch_size=8), 0)
        updated, loss, top1 = pretrain_step(network, params, batch, quick, lr=0.0)
        assert updated.equal(params)
        assert loss == pytest.approx(math.log(48), abs=0.1)
        assert 0.0 <= top1 <= 1.0

    def test_loss_decreases_over_100_steps(self, clips, desk_geometry, quick):
        """Test that the mean loss of the last 10 of 100 steps is below that of the first 10."""
        config = replace(quick, batch_size=16, lr=0.05)
        batch = puzzle_batch(clips, desk_geometry, config, 0)
        network = PuzzleNetwork(TINY)
        params = network.build(np.random.default_rng(0))
        losses = []
        for _ in range(100):
            params, loss, _ = pretrain_step(network, params, batch, config)
            losses.append(loss)
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_records_and_checkpoint(self, clips, desk_geometry, quick, tmp_path):
        """Test train and val records per eval point and a puzzle checkpoint."""
        result = pretrain_run(clips, desk_geometry, TINY, quick, out_dir=tmp_path, eval_clips=clips)
        assert [(r.step, r.split) for r in result.records] == [(1, "train"), (1, "val"), (2, "train"), (2, "val")]
        saved = read_metrics(tmp_path / METRICS_NAME)
        assert [(r.step, r.split, r.wall_ms) for r in saved] == [(r.step, r.split, 0) for r in result.records]
        assert [r.loss for r in saved] == pytest.approx([r.loss for r in result.records], abs=1e-6)
        header, _ = load_checkpoint(tmp_path / CHECKPOINT_NAME)
        assert header["kind"] == "puzzle" and header["step"] == 2 and header["task"] == "st"

    def test_deterministic_runs_are_identical(self, clips, desk_geometry, quick, tmp_path):
        """Test byte-identical metrics and checkpoints for two runs with one seed."""
        for name in ("a", "b"):
            pretrain_run(clips, desk_geometry, TINY, quick, out_dir=tmp_path / name)
        for name in (METRICS_NAME, CHECKPOINT_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume_matches_uninterrupted(self, clips, desk_geometry, quick, tmp_path):
        """Test that 2 steps plus 2 resumed steps equal 4 straight steps."""
        config = replace(quick, steps=4, eval_every=2)
        straight = pretrain_run(clips, desk_geometry, TINY, config, out_dir=tmp_path / "straight")
        pretrain_run(clips, desk_geometry, TINY, replace(config, steps=2), out_dir=tmp_path / "resumed")
        resumed = pretrain_run(clips, desk_geometry, TINY, config, out_dir=tmp_path / "resumed", resume=True)
        assert resumed.params.equal(straight.params)
        for name in (METRICS_NAME, CHECKPOINT_NAME):
            assert (tmp_path / "straight" / name).read_bytes() == (tmp_path / "resumed" / name).read_bytes()

    def test_rwc_off_trains_24_classes(self, clips, desk_geometry, quick):
        """Test that disabling rwc shrinks the head to 24 classes."""
        result = pretrain_run(clips, desk_geometry, TINY, replace(quick, rwc=False, steps=1))
        assert result.network.num_classes == 24
        assert result.params["puzzle_head.fc2.weight"].shape[1] == 24


class TestFinetuning:
    """Tests for the action fine-tuning loop."""

    def test_linear_probe_freezes_backbone(self, clips, desk_geometry, quick):
        """Test that a linear probe only moves the classifier."""
        pretrained = pretrain_run(clips, desk_geometry, TINY, quick).params
        start = finetune_run(clips, desk_geometry, TINY, replace(quick, finetune_steps=0), num_classes=4,
                             pretrained=pretrained)
        result = finetune_run(clips, desk_geometry, TINY, quick, num_classes=4, pretrained=pretrained)
        assert result.params.equal(pretrained, result.params.names("backbone."))
        assert not result.params.equal(start.params, result.network.head_names)

    def test_full_finetune_moves_backbone(self, clips, desk_geometry, quick):
        """Test that full fine-tuning updates backbone weights too."""
        pretrained = pretrain_run(clips, desk_geometry, TINY, quick).params
        config = replace(quick, linear_probe=False)
        result = finetune_run(clips, desk_geometry, TINY, config, num_classes=4, pretrained=pretrained)
        assert not result.params.equal(pretrained, ["backbone.conv1.weight"])

    def test_pretrained_and_random_differ_only_in_backbone(self, clips, desk_geometry, quick):
        """Test that both arms start from the same head and differ in the backbone."""
        pretrained = pretrain_run(clips, desk_geometry, TINY, quick).params
        config = replace(quick, finetune_steps=0)
        warm = finetune_run(clips, desk_geometry, TINY, config, num_classes=4, pretrained=pretrained)
        cold = finetune_run(clips, desk_geometry, TINY, config, num_classes=4)
        head = warm.network.head_names
        assert warm.params.equal(cold.params, head)
        assert not warm.params.equal(cold.params, warm.params.names("backbone."))

    def test_test_records_and_accuracy(self, clips, desk_geometry, quick, tmp_path):
        """Test train and test records and an action checkpoint."""
        result = finetune_run(clips, desk_geometry, TINY, quick, num_classes=4, test_clips=clips[:2],
                              out_dir=tmp_path)
        assert {r.split for r in result.records} == {"train", "test"}
        assert 0.0 <= result.accuracy <= 1.0
        header, _ = load_checkpoint(result.checkpoint)
        assert header["kind"] == "action" and header["num_classes"] == 4

    def test_geometry_from_header(self, desk_geometry):
        """Test that a checkpoint header restores its geometry and that a missing one needs a fallback."""
        geometry = GeometryConfig(finetune_frames=8)
        assert geometry_from_header({"geometry": geometry.to_dict()}) == geometry
        assert geometry_from_header({}, fallback=desk_geometry) == desk_geometry
        with pytest.raises(CheckpointError, match="no geometry"):
            geometry_from_header({})

    def test_input_below_backbone_minimum(self, clips, desk_geometry, quick):
        """Test that resnet18 refuses desk-sized fine-tune inputs."""
        with pytest.raises(ValueError, match="backbone minimum"):
            finetune_run(clips, desk_geometry, BackboneConfig.for_variant("resnet18"), quick, num_classes=4)


class TestExperimentReports:
    """Tests for experiment tables and expectation checks."""

    ROWS = [
        ExperimentRow("pretrained", 0, 0.6), ExperimentRow("random_init", 0, 0.4),
        ExperimentRow("pretrained", 1, 0.5), ExperimentRow("random_init", 1, 0.45),
    ]

    def test_mean_accuracy(self):
        """Test the per-configuration seed mean."""
        assert mean_accuracy(self.ROWS) == {"pretrained": pytest.approx(0.55),
                                            "random_init": pytest.approx(0.425)}

    def test_format_table(self):
        """Test one row per configuration with a column per seed."""
        lines = format_table(self.ROWS).splitlines()
        assert "seed   0" in lines[0] and "mean" in lines[0]
        assert lines[2].startswith("pretrained")

    def test_check_transfer(self):
        """Test the +10 point transfer expectation."""
        assert check_experiment("transfer", self.ROWS) == []
        worse = [replace(r, accuracy=0.5) for r in self.ROWS]
        assert len(check_experiment("transfer", worse)) == 1

    def test_unknown_experiment(self):
        """Test that unknown experiment kinds are rejected."""
        with pytest.raises(ValueError, match="unknown experiment"):
            check_experiment("other", self.ROWS)


@pytest.fixture(scope="module")
def benchmark():
    geometry = GeometryConfig.desk()
    spec = SyntheticSpec(num_classes=8, seed=0)
    return Benchmark(generate_clips(spec, geometry, "train"), generate_clips(spec, geometry, "test"),
                     spec.num_classes, geometry, TINY)


@pytest.mark.slow
class TestAcceptanceRuns:
    """Long seed-fixed training runs."""

    def test_watermark_positive_control(self, desk_geometry):
        """Test that watermarked cells make the puzzle solvable to 99% within 1000 steps."""
        spec = SyntheticSpec(num_classes=2, clips_per_class=8, test_clips_per_class=0, watermark=True)
        clips = generate_clips(spec, desk_geometry, "train")
        config = TrainConfig(batch_size=32, lr=0.05, steps=1000, eval_every=1000, jitter=False,
                             channel_replication=False, workers=1, deterministic=True)
        result = pretrain_run(clips, desk_geometry, TINY, config)
        batch = collate_puzzles(puzzle_samples(clips, desk_geometry, config, 0, 256, stream="check"))
        assert evaluate_pretext(result.network, result.params, batch).top1 >= 0.99

    def test_overfit_fixed_samples(self, benchmark, desk_geometry):
        """Test 90% train accuracy on 64 fixed puzzle samples within 2000 steps."""
        config = TrainConfig(lr=0.05, workers=1, deterministic=True)
        batch = collate_puzzles(puzzle_samples(benchmark.train, desk_geometry, config, 0, 64))
        network = PuzzleNetwork(TINY)
        params = network.build(np.random.default_rng(0))
        top1 = 0.0
        for _ in range(2000):
            params, _, top1 = pretrain_step(network, params, batch, config)
            if top1 >= 0.9:
                break
        assert top1 >= 0.9

    def test_transfer_beats_random_init(self, benchmark):
        """Test that puzzle pretraining lifts the linear probe by 10 points over random init."""
        rows = transfer_comparison(benchmark, TrainConfig(workers=1), seeds=[0, 1, 2])
        assert check_experiment("transfer", rows) == []

    def test_strategy_ordering(self, benchmark):
        """Test ST >= best single mode - 1 point and the S+T ensemble >= the weaker mode."""
        rows = strategy_comparison(benchmark, TrainConfig(workers=1), seeds=[0, 1, 2])
        assert check_experiment("strategies", rows) == []

    def test_ablation_ladder(self, benchmark):
        """Test that the full method beats no regularization by 3 points."""
        rows = ablation_ladder(benchmark, TrainConfig(workers=1), seeds=[0, 1, 2])
        assert [r.name for r in rows[:4]] == ["no_regularization", "+channel_replication", "+jitter", "+rwc"]
        assert check_experiment("ablation", rows) == []
