"""
Configuration d'une expérience (pré-entraînement, finetune, analyse, benchmark).
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.models.config import (
    EmbedMode,
    ModelSpec,
    OptimizerConfig,
    RelposScope,
    parse_int_list,
    parse_window_list,
)

TaskKind = Literal["posprobe", "mae"]

_OPTIONAL_FIELDS = ("layer_decay", "checkpoint", "demo_embedding")


class ExperimentConfig(BaseModel):
    """Tous les paramètres d'une commande; chaque artefact en enregistre l'empreinte et la graine."""

    model_config = {"extra": "forbid"}

    seed: int = Field(0, ge=0, description="Graine de l'expérience")
    task: TaskKind = Field("posprobe", description="Tâche d'entraînement")
    output_dir: str = Field("outputs", description="Dossier des artefacts")
    checkpoint: Optional[str] = Field(None, description="Checkpoint d'entrée (finetune, analyze)")

    # Résolutions
    pretrain_grid: int = Field(16, ge=1, description="Tokens par côté au pré-entraînement")
    finetune_grid: int = Field(20, ge=1, description="Tokens par côté au finetune")

    # Architecture
    embed_mode: EmbedMode = Field("abswin")
    embed_init: Literal["trunc_normal", "sinusoidal"] = Field("trunc_normal")
    patch_size: int = Field(1, ge=1)
    in_channels: int = Field(8, ge=1)
    stage_depths: List[int] = Field(default_factory=lambda: [2, 2])
    stage_dims: List[int] = Field(default_factory=lambda: [32, 64])
    stage_heads: List[int] = Field(default_factory=lambda: [1, 2])
    stage_window_sizes: List[Optional[int]] = Field(default_factory=lambda: [4, None])
    global_layer_indices: List[int] = Field(default_factory=list)
    window_size: int = Field(4, ge=1)
    global_size: int = Field(4, ge=1)
    relpos_scope: RelposScope = Field("none")
    mlp_ratio: int = Field(2, ge=1)
    mask_ratio: float = Field(0.6, ge=0.0, lt=1.0)
    decoder_dim: int = Field(32, ge=1)
    decoder_depth: int = Field(2, ge=1)
    decoder_heads: int = Field(1, ge=1)

    # Entraînement
    steps: int = Field(500, ge=0, description="Pas de pré-entraînement")
    lr: float = Field(1e-3, gt=0.0)
    optimizer: Literal["sgd", "adamw"] = Field("adamw")
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.05, ge=0.0)
    batch_size: int = Field(32, ge=1)
    finetune_steps: int = Field(300, ge=0)
    finetune_lr: float = Field(1e-3, gt=0.0)
    layer_decay: Optional[float] = Field(None, gt=0.0, le=1.0)
    reset_embedding: bool = Field(False, description="Réinitialise l'embedding avant le finetune")

    # Données synthétiques
    num_samples: int = Field(512, ge=2)
    regions: int = Field(2, ge=1, description="Régions par côté (K = regions²)")
    noise_std: float = Field(0.1, ge=0.0)

    # Analyse
    similarity_every: int = Field(50, ge=1, description="Période d'échantillonnage de la similarité")
    analyze_channels: List[int] = Field(default_factory=lambda: [0, 1, 2, 3])

    # Benchmark
    bench_sides: List[int] = Field(default_factory=lambda: [16, 32, 64])
    bench_window: int = Field(8, ge=1)
    bench_dim: int = Field(32, ge=1)
    bench_heads: int = Field(1, ge=1)
    bench_batch: int = Field(8, ge=1)
    bench_iters: int = Field(20, ge=4)
    bench_fused: bool = Field(False)
    bench_parallel: bool = Field(False)

    # Démo détection
    demo_embedding: Optional[str] = Field(None, description="Embedding pré-entraîné (conteneur binaire)")
    demo_pretrain_side: int = Field(14, ge=1, description="Côté p de l'embedding généré en l'absence de fichier")
    demo_out_side: int = Field(64, ge=1)
    demo_channels: int = Field(8, ge=1)

    # Éventail de graines
    seeds: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _none_strings(cls, values):
        if isinstance(values, dict):
            values = dict(values)
            for key in _OPTIONAL_FIELDS:
                if isinstance(values.get(key), str) and values[key].strip().lower() in ("", "none"):
                    values[key] = None
        return values

    @field_validator(
        "stage_depths", "stage_dims", "stage_heads", "global_layer_indices", "analyze_channels", "bench_sides",
        mode="before",
    )
    @classmethod
    def _parse_lists(cls, value):
        return parse_int_list(value)

    @field_validator("stage_window_sizes", mode="before")
    @classmethod
    def _parse_windows(cls, value):
        return parse_window_list(value)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if self.finetune_grid < self.pretrain_grid:
            raise ValueError(
                f"finetune_grid={self.finetune_grid} inférieur à pretrain_grid={self.pretrain_grid}"
            )
        self.model_spec()
        return self

    @property
    def num_classes(self) -> int:
        return self.regions * self.regions

    @property
    def report_task(self) -> str:
        return "mae" if self.task == "mae" else "supervised"

    def model_spec(self, grid: Optional[int] = None) -> ModelSpec:
        """Architecture à la grille de pré-entraînement (ou à `grid`)."""
        return ModelSpec(
            input_grid=self.pretrain_grid if grid is None else grid,
            pretrain_grid=self.pretrain_grid,
            patch_size=self.patch_size,
            in_channels=self.in_channels,
            stage_depths=self.stage_depths,
            stage_dims=self.stage_dims,
            stage_heads=self.stage_heads,
            stage_window_sizes=self.stage_window_sizes,
            global_layer_indices=self.global_layer_indices,
            embed_mode=self.embed_mode,
            embed_init=self.embed_init,
            window_size=self.window_size,
            global_size=self.global_size,
            relpos_scope=self.relpos_scope,
            mlp_ratio=self.mlp_ratio,
            head="mae" if self.task == "mae" else "classify",
            num_classes=self.num_classes,
            mask_ratio=self.mask_ratio,
            decoder_dim=self.decoder_dim,
            decoder_depth=self.decoder_depth,
            decoder_heads=self.decoder_heads,
        )

    def optimizer_config(self, finetune: bool = False) -> OptimizerConfig:
        return OptimizerConfig(
            kind=self.optimizer,
            lr=self.finetune_lr if finetune else self.lr,
            momentum=self.momentum if self.optimizer == "sgd" else 0.0,
            weight_decay=self.weight_decay,
            layer_decay=self.layer_decay if finetune else None,
        )
