import logging

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from src.main import cli
from src.network.hiera_lite import build_model
from src.utils.config_loader import build_config
from src.utils.exporters import read_csv, read_pgm
from src.utils.serialization import load_checkpoint, load_embedding, save_embedding
from src.posembed.constructions import random_abswin


def invoke(*args):
    result = CliRunner().invoke(cli, [str(a) for a in args])
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "_abswin", False)]:
        root.removeHandler(handler)
    return result


def _metrics(path):
    _, _, rows = read_csv(path)
    return {name: float(value) for name, value in rows}


@pytest.fixture
def pretrained(tmp_path, tiny_config_file):
    out = tmp_path / "pre"
    result = invoke("pretrain", "--config", tiny_config_file, "--set", "steps=2", "--output-dir", out)
    assert result.exit_code == 0, result.output
    return out


class TestPretrain:
    def test_zero_steps_writes_the_initial_model(self, tmp_path, tiny_config_file):
        out = tmp_path / "run"
        result = invoke("pretrain", "--config", tiny_config_file, "--set", "steps=0", "--output-dir", out)
        assert result.exit_code == 0, result.output
        assert "pretrain seed=0" in result.output
        for name in ("checkpoint.bin", "similarity.csv", "losses.csv", "metrics.csv", "config.txt", "manifest.csv"):
            assert (out / name).is_file(), name

        cfg = build_config(tiny_config_file, use_dotenv=False, environ={})
        _, loaded = load_checkpoint(out / "checkpoint.bin")
        reference = build_model(cfg.model_spec(), seed=0)
        for (name, a), (_, b) in zip(reference.state_dict().items(), loaded.state_dict().items()):
            assert torch.equal(a, b), name

        metadata, _, rows = read_csv(out / "similarity.csv")
        assert metadata["seed"] == "0" and len(metadata["config_hash"]) == 12
        assert [row[0] for row in rows] == ["0"]
        manifest_meta, _, _ = read_csv(out / "manifest.csv")
        assert manifest_meta["config_hash"] == metadata["config_hash"] and manifest_meta["seed"] == "0"

    def test_reruns_are_byte_identical(self, tmp_path, tiny_config_file):
        for name in ("a", "b"):
            result = invoke("pretrain", "--config", tiny_config_file, "--set", "steps=3", "--output-dir", tmp_path / name)
            assert result.exit_code == 0, result.output
        for artifact in ("checkpoint.bin", "similarity.csv", "losses.csv", "metrics.csv"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes(), artifact

    def test_mae_task(self, tmp_path, tiny_config_file):
        out = tmp_path / "mae"
        result = invoke("pretrain", "--config", tiny_config_file, "--set", "task=mae", "--set", "steps=2", "--output-dir", out)
        assert result.exit_code == 0, result.output
        manifest, _ = load_checkpoint(out / "checkpoint.bin")
        assert manifest.task == "mae" and manifest.spec.head == "mae"
        metadata, _, _ = read_csv(out / "similarity.csv")
        assert metadata["task"] == "mae"

    def test_seed_fan_out(self, tmp_path, tiny_config_file):
        out = tmp_path / "fan"
        result = invoke(
            "pretrain", "--config", tiny_config_file, "--set", "steps=1", "--seeds", 2, "--workers", 2, "--output-dir", out
        )
        assert result.exit_code == 0, result.output
        assert (out / "seed_0" / "checkpoint.bin").is_file()
        assert (out / "seed_1" / "checkpoint.bin").is_file()
        assert result.output.index("seed=0") < result.output.index("seed=1")

    def test_parallel_fan_out_matches_serial_run(self, tmp_path, tiny_config_file):
        for workers in (1, 4):
            result = invoke(
                "pretrain", "--config", tiny_config_file, "--set", "steps=1", "--seeds", 4, "--workers", workers,
                "--output-dir", tmp_path / f"w{workers}",
            )
            assert result.exit_code == 0, result.output
        for seed in range(4):
            for artifact in ("checkpoint.bin", "similarity.csv", "losses.csv", "metrics.csv"):
                serial = (tmp_path / "w1" / f"seed_{seed}" / artifact).read_bytes()
                parallel = (tmp_path / "w4" / f"seed_{seed}" / artifact).read_bytes()
                assert serial == parallel, (seed, artifact)

    def test_unknown_key_is_a_usage_error(self, tmp_path):
        result = invoke("pretrain", "--set", "colour=blue", "--output-dir", tmp_path)
        assert result.exit_code == 2

    def test_invalid_value_is_a_usage_error(self, tmp_path):
        result = invoke("pretrain", "--set", "embed_mode=fancy", "--output-dir", tmp_path)
        assert result.exit_code == 2


class TestFinetune:
    def test_same_grid_without_steps_keeps_accuracy(self, tmp_path, tiny_config_file, pretrained):
        out = tmp_path / "ft"
        result = invoke(
            "finetune", "--config", tiny_config_file, "--checkpoint", pretrained / "checkpoint.bin",
            "--set", "finetune_steps=0", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        before = _metrics(pretrained / "metrics.csv")
        after = _metrics(out / "metrics.csv")
        assert after["eval_accuracy"] == before["eval_accuracy"]
        manifest, _ = load_checkpoint(out / "finetune.bin")
        assert manifest.parent is not None and len(manifest.parent) == 64

    def test_larger_grid(self, tmp_path, tiny_config_file, pretrained):
        out = tmp_path / "ft10"
        result = invoke(
            "finetune", "--config", tiny_config_file, "--checkpoint", pretrained / "checkpoint.bin",
            "--set", "finetune_grid=10", "--set", "finetune_steps=2", "--set", "layer_decay=0.8",
            "--set", "relpos_scope=global", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        manifest, _ = load_checkpoint(out / "finetune.bin")
        assert manifest.spec.input_grid == 10 and manifest.spec.pretrain_grid == 8
        assert manifest.spec.relpos_scope == "global"
        assert _metrics(out / "metrics.csv")["finetune_grid"] == 10.0

    def test_embed_mode_mismatch_is_a_usage_error(self, tmp_path, tiny_config_file, pretrained):
        result = invoke(
            "finetune", "--config", tiny_config_file, "--checkpoint", pretrained / "checkpoint.bin",
            "--set", "embed_mode=naive", "--output-dir", tmp_path / "ft",
        )
        assert result.exit_code == 2

    def test_missing_checkpoint_option(self, tmp_path, tiny_config_file):
        result = invoke("finetune", "--config", tiny_config_file, "--output-dir", tmp_path / "ft")
        assert result.exit_code == 2


class TestAnalyze:
    def test_abswin_exports(self, tmp_path, tiny_config_file, pretrained):
        out = tmp_path / "an"
        result = invoke(
            "analyze", "--config", tiny_config_file, "--checkpoint", pretrained / "checkpoint.bin", "--output-dir", out
        )
        assert result.exit_code == 0, result.output
        full, comment = read_pgm(out / "analyze-abswin-s0_ch0.pgm")
        assert full.shape == (8, 8) and "config_hash=" in comment
        window, _ = read_pgm(out / "analyze-abswin-s0_window_ch1.pgm")
        assert np.array_equal(window[:4, :4], window[4:, 4:])
        assert (out / "analyze-abswin-s0_window_tokens.csv").is_file()
        assert (out / "analyze-abswin-s0_global_tokens.csv").is_file()
        assert load_embedding(out / "embedding.bin").kind.value == "abswin"
        assert _metrics(out / "analysis.csv")["window_part_similarity"] == 1.0

    def test_missing_checkpoint_file_is_a_runtime_error(self, tmp_path, tiny_config_file):
        result = invoke(
            "analyze", "--config", tiny_config_file, "--checkpoint", tmp_path / "absent.bin", "--output-dir", tmp_path
        )
        assert result.exit_code == 1

    def test_corrupted_checkpoint_is_a_runtime_error(self, tmp_path, tiny_config_file):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"garbage-bytes")
        result = invoke("analyze", "--config", tiny_config_file, "--checkpoint", path, "--output-dir", tmp_path / "an")
        assert result.exit_code == 1


class TestBenchCommand:
    def test_small_matrix(self, tmp_path, tiny_config_file):
        out = tmp_path / "bench"
        result = invoke(
            "bench", "--config", tiny_config_file, "--set", "bench_sides=8,12", "--set", "bench_window=4",
            "--set", "bench_dim=8", "--set", "bench_iters=4", "--set", "bench_batch=2", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        _, header, rows = read_csv(out / "bench.csv")
        assert header[0] == "config_id" and len(rows) == 8
        assert "relpos_ratio_8" in result.output and "window_ratio_12" in result.output


class TestDetectionDemo:
    def test_tiling_keeps_blocks_interpolation_does_not(self, tmp_path, tiny_config_file):
        out = tmp_path / "demo"
        result = invoke(
            "demo-detection-embed", "--config", tiny_config_file, "--set", "demo_pretrain_side=4",
            "--set", "demo_out_side=10", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        _, header, rows = read_csv(out / "alignment.csv")
        assert header == ["block_row", "block_col", "tiled_cos", "naive_cos"]
        assert len(rows) == 4
        assert all(float(row[2]) == 1.0 for row in rows)
        assert np.mean([float(row[3]) for row in rows]) < 1.0
        assert load_embedding(out / "detection_tiled.bin").grid.shape == (10, 10, 8)

    def test_same_side_is_identity(self, tmp_path, tiny_config_file):
        out = tmp_path / "demo"
        result = invoke(
            "demo-detection-embed", "--config", tiny_config_file, "--set", "demo_pretrain_side=4",
            "--set", "demo_out_side=4", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        _, _, rows = read_csv(out / "alignment.csv")
        assert [(float(r[2]), float(r[3])) for r in rows] == [(1.0, 1.0)]

    def test_abswin_file_adds_recursive_embedding(self, tmp_path, tiny_config_file, generator):
        source = save_embedding(random_abswin(4, 2, 8, generator), tmp_path / "source.bin")
        out = tmp_path / "demo"
        result = invoke(
            "demo-detection-embed", "--config", tiny_config_file, "--embedding", source,
            "--set", "demo_out_side=20", "--output-dir", out,
        )
        assert result.exit_code == 0, result.output
        recursive = load_embedding(out / "detection_recursive.bin").grid
        assert recursive.shape == (20, 20, 8)
        assert torch.equal(recursive.data, load_embedding(out / "detection_tiled.bin").grid.data)
