"""
Commandes d'expérience: pré-entraînement, finetune à une autre résolution, analyse,
benchmark de latence et démonstration de l'embedding de détection.

Chaque commande écrit ses artefacts dans output_dir, avec empreinte de config et
graine en en-tête, puis un manifest.csv.
"""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import torch

from src.analysis.exports import export_channel_images, export_similarity_report, export_token_maps
from src.analysis.similarity import track_similarity
from src.experiments.bench import BENCH_COLUMNS, config_matrix, run_matrix, stats_rows
from src.experiments.data import PosProbeDataset, SmoothFieldDataset
from src.experiments.trainer import TrainResult, train
from src.models.embedding import AbsWinEmbed, NaiveEmbed
from src.models.experiment import ExperimentConfig
from src.models.grid import Grid
from src.models.report import CommandResult, SimilarityReport
from src.network.hiera_lite import (
    adapt_resolution,
    build_model,
    replace_head,
    reset_position_embedding,
    set_relpos_scope,
)
from src.posembed.constructions import detection_tile, materialize_abswin, random_naive, recursive_abswin, resize_naive
from src.posembed.metrics import block_alignment, window_similarity
from src.utils.config_loader import canonical_dump, config_hash
from src.utils.errors import ConfigError
from src.utils.exporters import write_csv, write_manifest
from src.utils.grid_ops import crop
from src.utils.seeding import seed_everything
from src.utils.serialization import file_digest, load_checkpoint, load_embedding, save_checkpoint, save_embedding

logger = logging.getLogger(__name__)

PRETRAIN_CHECKPOINT = "checkpoint.bin"
FINETUNE_CHECKPOINT = "finetune.bin"

Command = Callable[[ExperimentConfig], CommandResult]


def artifact_metadata(cfg: ExperimentConfig) -> Dict[str, object]:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed}


def prepare_output_dir(cfg: ExperimentConfig) -> Path:
    """Crée le dossier de sortie et y écrit config.txt."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = f"# config_hash={config_hash(cfg)} seed={cfg.seed}\n"
    (out / "config.txt").write_text(header + canonical_dump(cfg), encoding="utf-8")
    return out


def make_dataset(cfg: ExperimentConfig, grid: int, task: str) -> Union[PosProbeDataset, SmoothFieldDataset]:
    if task == "mae":
        return SmoothFieldDataset(
            cfg.num_samples, grid, cfg.in_channels, cfg.patch_size, cfg.noise_std, seed=cfg.seed
        )
    return PosProbeDataset(
        cfg.num_samples, grid, cfg.in_channels, cfg.patch_size, cfg.regions, cfg.noise_std, seed=cfg.seed
    )


def _checkpoint_path(cfg: ExperimentConfig) -> Path:
    if not cfg.checkpoint:
        raise ConfigError("Un checkpoint est requis (--checkpoint ou checkpoint=...)")
    return Path(cfg.checkpoint.format(seed=cfg.seed))


def _train_metrics(result: TrainResult, report: SimilarityReport) -> Dict[str, float]:
    metrics: Dict[str, float] = {"steps": float(result.steps)}
    if result.final_loss is not None:
        metrics["final_loss"] = result.final_loss
    if result.train_accuracy is not None:
        metrics["train_accuracy"] = result.train_accuracy
        metrics["eval_accuracy"] = result.eval_accuracy
    if report.series:
        metrics["similarity_initial"] = report.initial
        metrics["similarity_final"] = report.final
    return metrics


def _write_training_outputs(
    out: Path, cfg: ExperimentConfig, result: TrainResult, report: SimilarityReport, metrics: Dict[str, float]
) -> None:
    meta = artifact_metadata(cfg)
    export_similarity_report(report, out / "similarity.csv", meta)
    write_csv(out / "losses.csv", ["step", "loss"], [(i + 1, loss) for i, loss in enumerate(result.losses)], meta)
    write_csv(out / "metrics.csv", ["metric", "value"], sorted(metrics.items()), meta)


def cmd_pretrain(cfg: ExperimentConfig) -> CommandResult:
    """Entraîne la tâche à pretrain_grid et écrit checkpoint, courbe de similarité et métriques."""
    out = prepare_output_dir(cfg)
    generator = seed_everything(cfg.seed)
    spec = cfg.model_spec()
    model = build_model(spec, cfg.seed)
    dataset = make_dataset(cfg, cfg.pretrain_grid, cfg.task)
    tracker = track_similarity(
        model, cfg.similarity_every, f"pretrain-{cfg.embed_mode}-s{cfg.seed}", cfg.report_task, cfg.seed
    )
    result = train(
        spec, model, dataset, cfg.steps, cfg.optimizer_config(), cfg.batch_size, generator,
        hook=tracker, desc=f"pretrain[{cfg.seed}]",
    )
    metrics = _train_metrics(result, tracker.report)
    save_checkpoint(
        out / PRETRAIN_CHECKPOINT, model, cfg.seed, config_hash(cfg), cfg.task, cfg.steps, metrics
    )
    _write_training_outputs(out, cfg, result, tracker.report, metrics)
    write_manifest(out, artifact_metadata(cfg))
    return CommandResult(command="pretrain", seed=cfg.seed, output_dir=str(out), metrics=metrics)


def cmd_finetune(cfg: ExperimentConfig) -> CommandResult:
    """
    Adapte un checkpoint à finetune_grid selon son mode d'embedding puis entraîne la
    classification de position à cette résolution.
    """
    path = _checkpoint_path(cfg)
    manifest, model = load_checkpoint(path)
    spec = manifest.spec
    if spec.embed_mode != cfg.embed_mode:
        raise ConfigError(
            f"embed_mode={cfg.embed_mode} différent de celui du checkpoint ({spec.embed_mode})"
        )
    if cfg.finetune_grid < spec.input_grid:
        raise ConfigError(f"finetune_grid={cfg.finetune_grid} inférieur à la grille du checkpoint ({spec.input_grid})")

    out = prepare_output_dir(cfg)
    generator = seed_everything(cfg.seed)
    spec = replace_head(spec, model, cfg.num_classes, cfg.seed)
    if cfg.reset_embedding:
        reset_position_embedding(model, generator)
    spec, model = set_relpos_scope(spec, model, cfg.relpos_scope)
    spec, model = adapt_resolution(spec, model, cfg.finetune_grid)

    dataset = make_dataset(cfg, cfg.finetune_grid, "posprobe")
    tracker = track_similarity(
        model, cfg.similarity_every, f"finetune-{cfg.embed_mode}-s{cfg.seed}", "supervised", cfg.seed
    )
    result = train(
        spec, model, dataset, cfg.finetune_steps, cfg.optimizer_config(finetune=True), cfg.batch_size,
        generator, hook=tracker, desc=f"finetune[{cfg.seed}]",
    )
    metrics = _train_metrics(result, tracker.report)
    metrics["finetune_grid"] = float(cfg.finetune_grid)
    save_checkpoint(
        out / FINETUNE_CHECKPOINT, model, cfg.seed, config_hash(cfg), "posprobe", cfg.finetune_steps, metrics,
        parent=file_digest(path),
    )
    _write_training_outputs(out, cfg, result, tracker.report, metrics)
    write_manifest(out, artifact_metadata(cfg))
    return CommandResult(command="finetune", seed=cfg.seed, output_dir=str(out), metrics=metrics)


def cmd_analyze(cfg: ExperimentConfig) -> CommandResult:
    """Exporte canaux (PGM), cartes de similarité de tokens (CSV) et conteneur d'embedding."""
    path = _checkpoint_path(cfg)
    manifest, model = load_checkpoint(path)
    spec = manifest.spec
    out = prepare_output_dir(cfg)
    meta = artifact_metadata(cfg)
    grid = spec.input_grid
    w = spec.window_size
    run_id = f"analyze-{spec.embed_mode}-s{manifest.seed}"

    with torch.no_grad():
        embed = Grid(model.pos_embed(grid, grid).detach().clone())
    exported = model.pos_embed.export()
    save_embedding(exported, out / "embedding.bin")
    export_channel_images(embed, cfg.analyze_channels, out, run_id, meta)

    rows = [("window_similarity", window_similarity(embed, w))]
    if isinstance(exported, AbsWinEmbed):
        tiled = detection_tile(exported.window_part, grid, grid)
        export_channel_images(tiled, cfg.analyze_channels, out, f"{run_id}_window", meta)
        export_token_maps(exported.window_part, out / f"{run_id}_window_tokens.csv", meta)
        export_token_maps(exported.global_part, out / f"{run_id}_global_tokens.csv", meta)
        rows.append(("window_part_similarity", window_similarity(tiled, w)))
    else:
        export_token_maps(crop(embed, 0, 0, w, w), out / f"{run_id}_block_tokens.csv", meta)
    write_csv(out / "analysis.csv", ["metric", "value"], rows, meta)
    write_manifest(out, artifact_metadata(cfg))
    return CommandResult(command="analyze", seed=cfg.seed, output_dir=str(out), metrics=dict(rows))


def cmd_bench(cfg: ExperimentConfig) -> CommandResult:
    """Matrice fenêtre/globale × relpos × côtés de grille, une ligne CSV par configuration."""
    out = prepare_output_dir(cfg)
    seed_everything(cfg.seed)
    matrix = config_matrix(cfg.bench_sides, cfg.bench_window, cfg.bench_dim, cfg.bench_heads, cfg.bench_fused)
    stats = run_matrix(matrix, cfg.bench_iters, cfg.bench_batch, cfg.bench_parallel, cfg.workers)
    write_csv(out / "bench.csv", BENCH_COLUMNS, stats_rows(stats), artifact_metadata(cfg))

    by_id = {s.config_id: s for s in stats}
    metrics = {}
    for side in cfg.bench_sides:
        norel = by_id[f"global_norel_{side}"]
        metrics[f"relpos_ratio_{side}"] = by_id[f"global_relpos_{side}"].median_ms / norel.median_ms
        metrics[f"window_ratio_{side}"] = by_id[f"win{cfg.bench_window}_norel_{side}"].median_ms / norel.median_ms
    write_manifest(out, artifact_metadata(cfg))
    return CommandResult(command="bench", seed=cfg.seed, output_dir=str(out), metrics=metrics)


def cmd_demo_detection_embed(cfg: ExperimentConfig) -> CommandResult:
    """
    Construit l'embedding de détection par mosaïque et par interpolation naïve et
    compare chaque bloc complet à l'embedding pré-entraîné.

    Sans fichier d'embedding, un embedding p×p aléatoire (p = demo_pretrain_side) est tiré.
    """
    out = prepare_output_dir(cfg)
    generator = seed_everything(cfg.seed)
    side = cfg.demo_out_side
    recursive: Optional[Grid] = None
    if cfg.demo_embedding:
        source = load_embedding(cfg.demo_embedding)
        if isinstance(source, NaiveEmbed):
            pretrained = source.grid
        else:
            pretrained = materialize_abswin(source, cfg.pretrain_grid, cfg.pretrain_grid)
            recursive = recursive_abswin(source, cfg.pretrain_grid, side, side)
    else:
        p = cfg.demo_pretrain_side
        pretrained = random_naive(p, p, cfg.demo_channels, generator).grid

    tiled = detection_tile(pretrained, side, side)
    naive = resize_naive(pretrained, side, side)
    save_embedding(NaiveEmbed(tiled), out / "detection_tiled.bin")
    save_embedding(NaiveEmbed(naive), out / "detection_naive.bin")
    if recursive is not None:
        save_embedding(NaiveEmbed(recursive), out / "detection_recursive.bin")
        logger.info(
            "Source absolute-win: detection_recursive.bin (construction récursive) %s detection_tiled.bin",
            "identique à" if torch.equal(recursive.data, tiled.data) else "différent de",
        )

    tiled_rows = block_alignment(tiled, pretrained)
    naive_rows = block_alignment(naive, pretrained)
    rows = [(r, c, t, n) for (r, c, t), (_, _, n) in zip(tiled_rows, naive_rows)]
    write_csv(out / "alignment.csv", ["block_row", "block_col", "tiled_cos", "naive_cos"], rows, artifact_metadata(cfg))
    metrics = {
        "tiled_mean": sum(row[2] for row in rows) / len(rows),
        "naive_mean": sum(row[3] for row in rows) / len(rows),
        "blocks": float(len(rows)),
    }
    write_manifest(out, artifact_metadata(cfg))
    return CommandResult(command="demo-detection-embed", seed=cfg.seed, output_dir=str(out), metrics=metrics)


def seed_configs(cfg: ExperimentConfig) -> List[ExperimentConfig]:
    """Une configuration par graine, chacune avec son propre sous-dossier."""
    if cfg.seeds == 1:
        return [cfg]
    return [
        cfg.model_copy(
            update={
                "seed": cfg.seed + offset,
                "seeds": 1,
                "output_dir": str(Path(cfg.output_dir) / f"seed_{cfg.seed + offset}"),
            }
        )
        for offset in range(cfg.seeds)
    ]


def run_seeds(command: Command, cfg: ExperimentConfig) -> List[CommandResult]:
    """
    Exécute la commande pour chaque graine, en parallèle si workers > 1.

    Returns:
        Résultats triés par graine.
    """
    configs = seed_configs(cfg)
    if len(configs) == 1 or cfg.workers == 1:
        return [command(c) for c in configs]

    results: List[CommandResult] = []
    failures = []
    with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        future_to_seed = {executor.submit(command, c): c.seed for c in configs}
        for future in as_completed(future_to_seed):
            seed = future_to_seed[future]
            try:
                results.append(future.result())
            except Exception as exc:
                logger.error("Graine %d en échec: %s", seed, exc)
                failures.append(exc)
    if failures:
        raise failures[0]
    return sorted(results, key=lambda r: r.seed)
