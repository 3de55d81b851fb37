"""
Suivi de la similarité de fenêtres de l'embedding de position pendant l'entraînement.
"""
import logging
from typing import Literal, Optional

import torch

from src.models.grid import Grid
from src.models.report import DEFAULT_SCOPE, SimilarityReport
from src.posembed.metrics import window_similarity
from src.utils.grid_ops import tile_to_tensor

logger = logging.getLogger(__name__)

Component = Literal["full", "window"]


def embedding_snapshot(model, grid: int, component: Component = "full") -> Grid:
    """
    Copie détachée de l'embedding matérialisé à la grille d'entraînement.

    Args:
        model: Modèle Hiera-lite.
        grid: Côté de la grille de tokens.
        component: 'full' pour l'embedding complet, 'window' pour la seule partie
            fenêtre répétée (modes absolute-win).
    """
    with torch.no_grad():
        if component == "window":
            window_part = getattr(model.pos_embed, "window_part", None)
            if window_part is None:
                raise ValueError("La composante 'window' n'existe qu'en mode absolute-win")
            data = tile_to_tensor(window_part, grid, grid)
        else:
            data = model.pos_embed(grid, grid)
        return Grid(data.detach().clone())


class SimilarityTracker:
    """Crochet d'entraînement: mesure la similarité au pas 0, tous les N pas et au dernier pas."""

    def __init__(
        self,
        report: SimilarityReport,
        every_n_steps: int,
        grid: int,
        window_size: int,
        component: Component = "full",
    ):
        if every_n_steps < 1:
            raise ValueError(f"every_n_steps={every_n_steps} doit être >= 1")
        self.report = report
        self.every_n_steps = every_n_steps
        self.grid = grid
        self.window_size = window_size
        self.component = component

    def __call__(self, step: int, model, final: bool = False) -> None:
        if step % self.every_n_steps and not final:
            return
        if self.report.series and self.report.series[-1][0] == step:
            return
        value = window_similarity(embedding_snapshot(model, self.grid, self.component), self.window_size)
        self.report.record(step, value)
        logger.debug("pas %d: similarité de fenêtres %.4f", step, value)


def track_similarity(
    model,
    every_n_steps: int,
    run_id: str,
    task: str,
    seed: int = 0,
    component: Component = "full",
    grid: Optional[int] = None,
) -> SimilarityTracker:
    """
    Prépare le suivi de similarité d'un entraînement.

    Le rapport se remplit à mesure que la boucle appelle le crochet renvoyé.
    """
    spec = model.spec
    scope = DEFAULT_SCOPE if component == "full" else "window-part@stage1-grid"
    report = SimilarityReport(run_id=run_id, embed_mode=spec.embed_mode, task=task, seed=seed, scope=scope)
    return SimilarityTracker(report, every_n_steps, grid or spec.input_grid, spec.window_size, component)
