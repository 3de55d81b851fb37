"""
Point d'entrée en ligne de commande du laboratoire absolute-win.

Codes de sortie: 0 succès, 2 erreur d'usage (configuration), 1 erreur d'exécution.
"""
import functools
import logging
from typing import Callable, List, Optional, Tuple

import click

from src.experiments.runner import (
    Command,
    cmd_analyze,
    cmd_bench,
    cmd_demo_detection_embed,
    cmd_finetune,
    cmd_pretrain,
    run_seeds,
)
from src.utils.config_loader import build_config
from src.utils.errors import AbsWinError, ConfigError
from src.utils.logging_setup import setup_logging

logger = logging.getLogger(__name__)


def _run(
    command: Command,
    config_path: Optional[str],
    overrides: Tuple[str, ...],
    extra: List[str],
) -> None:
    try:
        cfg = build_config(config_path, list(overrides) + extra)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    except OSError as exc:
        raise click.ClickException(f"Lecture de la configuration impossible: {exc}")

    try:
        results = run_seeds(command, cfg)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    except (AbsWinError, OSError) as exc:
        logger.debug("Échec de la commande", exc_info=True)
        raise click.ClickException(str(exc))
    for result in results:
        click.echo(result.summary_line())


def experiment_options(func: Callable) -> Callable:
    """Options communes: fichier de config, surcharges, graines, dossier de sortie."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="Fichier de configuration key=value")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Surcharge d'un champ (répétable)")
    @click.option("--seed", type=int, default=None, help="Graine de la première exécution")
    @click.option("--seeds", type=int, default=None, help="Nombre de graines consécutives")
    @click.option("--workers", type=int, default=None, help="Exécutions simultanées")
    @click.option("--output-dir", type=click.Path(file_okay=False), default=None, help="Dossier des artefacts")
    @functools.wraps(func)
    def wrapper(config_path, overrides, seed, seeds, workers, output_dir, **kwargs):
        extra = []
        for key, value in (("seed", seed), ("seeds", seeds), ("workers", workers), ("output_dir", output_dir)):
            if value is not None:
                extra.append(f"{key}={value}")
        return func(config_path=config_path, overrides=overrides, extra=extra, **kwargs)

    return wrapper


def checkpoint_option(func: Callable) -> Callable:
    @click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
                  help="Checkpoint d'entrée ('{seed}' est remplacé par la graine)")
    @functools.wraps(func)
    def wrapper(checkpoint, extra, **kwargs):
        if checkpoint is not None:
            extra = extra + [f"checkpoint={checkpoint}"]
        return func(extra=extra, **kwargs)

    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Niveau de log (défaut: ABSWIN_LOG_LEVEL ou INFO)")
def cli(log_level: Optional[str]):
    """Laboratoire des embeddings de position absolute-win."""
    setup_logging(log_level)


@cli.command()
@experiment_options
def pretrain(config_path, overrides, extra):
    """Pré-entraîne (posprobe ou mae) à pretrain_grid."""
    _run(cmd_pretrain, config_path, overrides, extra)


@cli.command()
@experiment_options
@checkpoint_option
def finetune(config_path, overrides, extra):
    """Adapte un checkpoint à finetune_grid puis l'entraîne en classification."""
    _run(cmd_finetune, config_path, overrides, extra)


@cli.command()
@experiment_options
@checkpoint_option
def analyze(config_path, overrides, extra):
    """Exporte canaux, cartes de similarité et métriques d'un checkpoint."""
    _run(cmd_analyze, config_path, overrides, extra)


@cli.command()
@experiment_options
def bench(config_path, overrides, extra):
    """Mesure la latence de l'attention (fenêtre/globale, relpos ou non)."""
    _run(cmd_bench, config_path, overrides, extra)


@cli.command("demo-detection-embed")
@experiment_options
@click.option("--embedding", type=click.Path(dir_okay=False), default=None,
              help="Embedding pré-entraîné (conteneur binaire)")
def demo_detection_embed(config_path, overrides, extra, embedding):
    """Compare mosaïque et interpolation naïve d'un embedding pré-entraîné à la résolution de détection."""
    if embedding is not None:
        extra = extra + [f"demo_embedding={embedding}"]
    _run(cmd_demo_detection_embed, config_path, overrides, extra)


if __name__ == "__main__":
    cli()
