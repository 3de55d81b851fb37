import pytest
import torch

from src.analysis.similarity import SimilarityTracker, embedding_snapshot, track_similarity
from src.experiments.bench import bench_attention, config_id, config_matrix, run_matrix, stats_rows, time_attention
from src.experiments.data import PosProbeDataset, SmoothFieldDataset, marker_pattern, region_of
from src.experiments.trainer import evaluate, train
from src.models.config import AttentionLayerConfig, OptimizerConfig
from src.models.report import SimilarityReport
from src.network.hiera_lite import build_model
from src.utils.errors import InvalidArgumentError
from tests.conftest import tiny_spec


class TestPosProbeDataset:
    def test_regions(self):
        assert region_of(0, 0, 8, 2) == 0
        assert region_of(0, 7, 8, 2) == 1
        assert region_of(4, 3, 8, 2) == 2
        assert region_of(7, 7, 8, 2) == 3

    def test_marker_sits_in_the_labelled_region(self):
        data = PosProbeDataset(40, 8, 3, regions=2, noise_std=0.0, seed=1)
        marker = marker_pattern(3)
        for image, label in zip(data.images, data.labels.tolist()):
            hits = (image == marker).all(dim=-1).nonzero().tolist()
            assert len(hits) == 1
            row, col = hits[0]
            assert region_of(row, col, 8, 2) == label

    def test_classes_are_balanced(self):
        data = PosProbeDataset(20, 8, 2, regions=2, seed=0)
        assert torch.bincount(data.labels, minlength=4).tolist() == [5, 5, 5, 5]

    def test_split_and_determinism(self):
        a = PosProbeDataset(10, 4, 2, seed=3)
        b = PosProbeDataset(10, 4, 2, seed=3)
        assert torch.equal(a.images, b.images) and torch.equal(a.labels, b.labels)
        train_idx, eval_idx = a.split()
        assert train_idx.tolist() == list(range(8)) and eval_idx.tolist() == [8, 9]

    def test_patches(self):
        data = PosProbeDataset(4, 4, 2, patch_size=2, noise_std=0.0)
        assert data.images.shape == (4, 8, 8, 2)

    def test_too_many_regions(self):
        with pytest.raises(InvalidArgumentError):
            PosProbeDataset(4, 2, 1, regions=3)


class TestSmoothFieldDataset:
    def test_shape_and_determinism(self):
        a = SmoothFieldDataset(3, 8, 2, seed=4)
        assert a.images.shape == (3, 8, 8, 2)
        assert torch.equal(a.images, SmoothFieldDataset(3, 8, 2, seed=4).images)


class TestTrain:
    def test_zero_steps_evaluates_the_initial_model(self, generator):
        spec = tiny_spec()
        model = build_model(spec)
        data = PosProbeDataset(20, 8, 3)
        before = {name: p.detach().clone() for name, p in model.named_parameters()}
        result = train(spec, model, data, 0, OptimizerConfig(), 4, generator)
        assert result.steps == 0 and result.losses == []
        assert result.eval_accuracy == evaluate(spec, model, data, data.split()[1])
        for name, p in model.named_parameters():
            assert torch.equal(p, before[name])

    def test_hook_schedule(self, generator):
        spec = tiny_spec()
        calls = []
        train(
            spec, build_model(spec), PosProbeDataset(20, 8, 3), 3, OptimizerConfig(), 4, generator,
            hook=lambda step, model, final: calls.append((step, final)),
        )
        assert calls == [(0, False), (1, False), (2, False), (3, True)]

    def test_identical_seeds_give_identical_runs(self):
        results = []
        for _ in range(2):
            spec = tiny_spec()
            model = build_model(spec, seed=9)
            result = train(
                spec, model, PosProbeDataset(20, 8, 3, seed=9), 4, OptimizerConfig(lr=1e-2), 4,
                torch.Generator().manual_seed(9),
            )
            results.append((result.losses, [p.detach().clone() for p in model.parameters()]))
        assert results[0][0] == results[1][0]
        for a, b in zip(results[0][1], results[1][1]):
            assert torch.equal(a, b)

    def test_mae_training_records_losses(self, generator):
        spec = tiny_spec(head="mae", mask_ratio=0.5)
        result = train(spec, build_model(spec), SmoothFieldDataset(10, 8, 3), 2, OptimizerConfig(), 2, generator)
        assert len(result.losses) == 2
        assert result.eval_accuracy is None


class TestSimilarityTracking:
    def test_frozen_embedding_gives_a_constant_series(self, generator):
        spec = tiny_spec(input_grid=16, embed_mode="naive")
        model = build_model(spec)
        model.pos_embed.grid.requires_grad_(False)
        tracker = track_similarity(model, 2, "run", "supervised", component="full")
        train(spec, model, PosProbeDataset(20, 16, 3), 5, OptimizerConfig(lr=1e-2), 4, generator, hook=tracker)
        steps = [step for step, _ in tracker.report.series]
        values = {value for _, value in tracker.report.series}
        assert steps == [0, 2, 4, 5]
        assert len(values) == 1

    def test_window_component_of_abswin_is_perfectly_aligned(self):
        spec = tiny_spec(input_grid=16)
        model = build_model(spec)
        tracker = track_similarity(model, 1, "run", "mae", component="window")
        tracker(0, model)
        assert tracker.report.initial == 1.0
        assert tracker.report.scope != track_similarity(model, 1, "run", "mae").report.scope

    def test_window_component_needs_abswin(self):
        model = build_model(tiny_spec(embed_mode="naive"))
        with pytest.raises(ValueError):
            embedding_snapshot(model, 8, "window")

    def test_duplicate_final_step_is_skipped(self):
        model = build_model(tiny_spec())
        report = SimilarityReport(run_id="r", embed_mode="abswin", task="mae")
        tracker = SimilarityTracker(report, 2, 8, 4)
        tracker(2, model)
        tracker(2, model, final=True)
        tracker(3, model)
        assert [step for step, _ in report.series] == [2]


class TestBench:
    def test_config_ids(self):
        windowed = AttentionLayerConfig(dim=8, heads=1, window_size=8)
        glob = AttentionLayerConfig(dim=8, heads=1, use_relpos=True, relpos_side=64)
        assert config_id(windowed, 64) == "win8_norel_64"
        assert config_id(glob, 64) == "global_relpos_64"

    def test_matrix_and_rows(self):
        matrix = config_matrix([8, 12], 4, 8, 2)
        assert len(matrix) == 8
        stats = run_matrix(matrix, iters=4, batch=2)
        rows = stats_rows(stats)
        assert len(rows) == 8
        assert [row[0] for row in rows[:4]] == ["win4_norel_8", "win4_relpos_8", "global_norel_8", "global_relpos_8"]
        assert all(s.samples == 3 for s in stats)

    def test_parallel_run_keeps_order(self):
        matrix = config_matrix([8], 4, 8, 1)
        stats = run_matrix(matrix, iters=4, batch=1, parallel=True, workers=2)
        assert [s.config_id for s in stats] == [config_id(cfg, side) for cfg, side in matrix]

    def test_comparison_requires_matching_layers(self):
        with pytest.raises(InvalidArgumentError):
            bench_attention(AttentionLayerConfig(dim=8, heads=1), AttentionLayerConfig(dim=4, heads=1), 8, 4)

    def test_minimum_iterations(self):
        with pytest.raises(InvalidArgumentError):
            time_attention(AttentionLayerConfig(dim=4, heads=1), 4, 3)

    @pytest.mark.slow
    def test_identical_configs_have_similar_latency(self):
        cfg = AttentionLayerConfig(dim=32, heads=1, window_size=8)
        assert 0.8 <= bench_attention(cfg, cfg, 32, 40).ratio <= 1.25
