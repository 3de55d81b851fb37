"""
Fixtures communes: générateurs, architectures miniatures, configuration CLI.
"""
import logging
from pathlib import Path

import pytest
import torch

from src.models.config import ModelSpec

TINY_OPTIONS = {
    "in_channels": "3",
    "stage_depths": "1,1",
    "stage_dims": "8,16",
    "stage_heads": "1,2",
    "stage_window_sizes": "2,global",
    "pretrain_grid": "8",
    "finetune_grid": "8",
    "window_size": "4",
    "global_size": "2",
    "decoder_dim": "8",
    "decoder_depth": "1",
    "num_samples": "20",
    "batch_size": "4",
    "regions": "2",
    "similarity_every": "2",
    "weight_decay": "0.0",
}


@pytest.fixture(autouse=True)
def _quiet_progress(monkeypatch):
    monkeypatch.setenv("ABSWIN_NO_PROGRESS", "1")


@pytest.fixture(autouse=True)
def _drop_cli_handlers():
    """Le handler installé par la CLI pointe vers le flux capturé de CliRunner."""
    yield
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "_abswin", False)]:
        root.removeHandler(handler)


@pytest.fixture
def generator():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


def tiny_spec(**overrides) -> ModelSpec:
    """Hiera-lite de quelques milliers de paramètres."""
    values = dict(
        input_grid=8,
        patch_size=1,
        in_channels=3,
        stage_depths=[1, 1],
        stage_dims=[8, 16],
        stage_heads=[1, 2],
        stage_window_sizes=[2, None],
        window_size=4,
        global_size=2,
        decoder_dim=8,
        decoder_depth=1,
        decoder_heads=1,
        num_classes=4,
    )
    values.update(overrides)
    return ModelSpec(**values)


@pytest.fixture
def spec():
    return tiny_spec()


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    path = tmp_path / "tiny.cfg"
    lines = ["# configuration miniature pour les tests"]
    lines += [f"{key}={value}" for key, value in TINY_OPTIONS.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
