"""
Mesure de latence des couches d'attention (fenêtre/globale, avec ou sans relpos).

Protocole: lot de 8 en float32, premier quart des itérations écarté, moyenne,
médiane et 95e centile en millisecondes.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import List, Optional, Tuple

import numpy as np
import torch

from src.models.config import AttentionLayerConfig
from src.models.report import LatencyComparison, LatencyStats
from src.network.attention import MultiHeadAttention
from src.utils.errors import InvalidArgumentError
from src.utils.seeding import make_generator, seeded_init

logger = logging.getLogger(__name__)

WARMUP_FRACTION = 0.25
BENCH_COLUMNS = ["config_id", "grid_side", "window_size", "relpos", "mean_ms", "median_ms", "p95_ms"]


def config_id(cfg: AttentionLayerConfig, grid_side: int) -> str:
    regime = f"win{cfg.window_size}" if cfg.window_size is not None else "global"
    relpos = "relpos" if cfg.use_relpos else "norel"
    return f"{regime}_{relpos}_{grid_side}"


def _sized(cfg: AttentionLayerConfig, grid_side: int) -> AttentionLayerConfig:
    """Dimensionne les tables relpos d'une couche globale à la grille mesurée."""
    if cfg.window_size is None and cfg.use_relpos:
        return cfg.model_copy(update={"relpos_side": grid_side})
    return cfg


def time_attention(
    cfg: AttentionLayerConfig, grid_side: int, iters: int, batch: int = 8, seed: int = 0
) -> LatencyStats:
    """Chronomètre `iters` passages avant d'une couche sur un lot (batch, S, S, dim)."""
    if iters < 4:
        raise InvalidArgumentError(f"iters={iters}: au moins 4 itérations sont nécessaires")
    cfg = _sized(cfg, grid_side)
    generator = make_generator(seed)
    with seeded_init(seed):
        layer = MultiHeadAttention(cfg).eval()
    if layer.relpos is not None:
        with torch.no_grad():
            layer.relpos.row_table.normal_(generator=generator)
            layer.relpos.col_table.normal_(generator=generator)
    x = torch.randn(batch, grid_side, grid_side, cfg.dim, generator=generator)

    timings = []
    with torch.no_grad():
        for _ in range(iters):
            start = time.perf_counter()
            layer(x)
            timings.append((time.perf_counter() - start) * 1000.0)
    kept = np.array(timings[int(iters * WARMUP_FRACTION):])
    return LatencyStats(
        config_id=config_id(cfg, grid_side),
        grid_side=grid_side,
        window_size=cfg.window_size,
        relpos=cfg.use_relpos,
        mean_ms=float(kept.mean()),
        median_ms=float(np.median(kept)),
        p95_ms=float(np.percentile(kept, 95)),
        samples=len(kept),
    )


def bench_attention(
    cfg_a: AttentionLayerConfig,
    cfg_b: AttentionLayerConfig,
    grid_side: int,
    iters: int,
    batch: int = 8,
    seed: int = 0,
) -> LatencyComparison:
    """
    Compare deux configurations de même dimension sur la même entrée.

    Returns:
        Statistiques des deux couches; `ratio` = médiane(a) / médiane(b).
    """
    if cfg_a.dim != cfg_b.dim or cfg_a.heads != cfg_b.heads:
        raise InvalidArgumentError("Les deux configurations doivent avoir les mêmes dim et heads")
    stats_a = time_attention(cfg_a, grid_side, iters, batch, seed)
    stats_b = time_attention(cfg_b, grid_side, iters, batch, seed)
    comparison = LatencyComparison(a=stats_a, b=stats_b)
    logger.info("%s / %s: %.2fx", stats_a.config_id, stats_b.config_id, comparison.ratio)
    return comparison


def config_matrix(
    sides: List[int], window: int, dim: int, heads: int, fused: bool = False
) -> List[Tuple[AttentionLayerConfig, int]]:
    """(fenêtre, globale) × (relpos, sans) × côtés de grille."""
    matrix = []
    for side in sides:
        for window_size in (window, None):
            for use_relpos in (False, True):
                cfg = AttentionLayerConfig(
                    dim=dim,
                    heads=heads,
                    window_size=window_size,
                    use_relpos=use_relpos,
                    relpos_side=side if window_size is None else None,
                    fused=fused,
                )
                matrix.append((cfg, side))
    return matrix


def run_matrix(
    matrix: List[Tuple[AttentionLayerConfig, int]],
    iters: int,
    batch: int = 8,
    parallel: bool = False,
    workers: Optional[int] = None,
) -> List[LatencyStats]:
    """
    Mesure chaque configuration; l'ordre de sortie suit celui de la matrice.

    Le mode parallèle fausse les latences absolues mais garde les comparaisons utilisables.
    """
    if not parallel:
        return [time_attention(cfg, side, iters, batch) for cfg, side in matrix]

    results: List[Optional[LatencyStats]] = [None] * len(matrix)
    with ThreadPoolExecutor(max_workers=workers or len(matrix)) as executor:
        future_to_index = {
            executor.submit(time_attention, cfg, side, iters, batch): index
            for index, (cfg, side) in enumerate(matrix)
        }
        for future in as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    return results


def stats_rows(stats: List[LatencyStats]) -> List[list]:
    return [
        [s.config_id, s.grid_side, "global" if s.window_size is None else s.window_size, int(s.relpos),
         round(s.mean_ms, 4), round(s.median_ms, 4), round(s.p95_ms, 4)]
        for s in stats
    ]
