"""
Exports d'analyse: canaux d'embedding en PGM, cartes de similarité de tokens et
rapports de similarité en CSV.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from src.models.grid import Grid
from src.models.report import SimilarityReport
from src.posembed.metrics import token_similarity_maps
from src.utils.errors import FormatError, InvalidArgumentError
from src.utils.exporters import normalize_to_bytes, read_csv, write_csv, write_pgm

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["step", "window_similarity", "embed_mode", "task", "seed"]

PathLike = Union[str, Path]


def channel_bytes(embed: Grid, channel: int) -> np.ndarray:
    """Canal normalisé min-max en octets (H, W)."""
    if not 0 <= channel < embed.channels:
        raise InvalidArgumentError(f"Canal {channel} hors de [0, {embed.channels})")
    return normalize_to_bytes(embed.to_numpy()[:, :, channel])


def export_channel_image(
    embed: Grid, channel: int, path: PathLike, metadata: Optional[Dict[str, object]] = None
) -> Path:
    """Écrit un canal de l'embedding en PGM P5, un octet par token."""
    comment = " ".join(f"{k}={metadata[k]}" for k in sorted(metadata)) if metadata else None
    return write_pgm(path, channel_bytes(embed, channel), comment)


def export_channel_images(
    embed: Grid,
    channels: Iterable[int],
    out_dir: PathLike,
    run_id: str,
    metadata: Optional[Dict[str, object]] = None,
) -> List[Path]:
    """Un fichier {run_id}_ch{c}.pgm par canal demandé."""
    out_dir = Path(out_dir)
    return [export_channel_image(embed, c, out_dir / f"{run_id}_ch{c}.pgm", metadata) for c in channels]


def export_token_maps(part: Grid, path: PathLike, metadata: Optional[Dict[str, object]] = None) -> Path:
    """CSV de la matrice s²×s²: la ligne i contient les similarités du token i."""
    sims = token_similarity_maps(part)
    size = sims.shape[0]
    header = [f"t{j}" for j in range(size)]
    rows = [[float(v) for v in sims[i].tolist()] for i in range(size)]
    return write_csv(path, header, rows, metadata)


def read_token_maps(path: PathLike) -> np.ndarray:
    _, _, rows = read_csv(path)
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def export_similarity_report(
    report: SimilarityReport, path: PathLike, metadata: Optional[Dict[str, object]] = None
) -> Path:
    """Colonnes step, window_similarity, embed_mode, task, seed; l'en-tête porte run_id et portée."""
    meta = {
        "run_id": report.run_id,
        "scope": report.scope,
        "embed_mode": report.embed_mode,
        "task": report.task,
        "seed": report.seed,
    }
    meta.update(metadata or {})
    rows = [(step, float(value), report.embed_mode, report.task, report.seed) for step, value in report.series]
    return write_csv(path, REPORT_COLUMNS, rows, meta)


def read_similarity_report(path: PathLike) -> SimilarityReport:
    metadata, header, rows = read_csv(path)
    if header != REPORT_COLUMNS:
        raise FormatError(f"{path}: colonnes {header}, attendu {REPORT_COLUMNS}")
    missing = {"run_id", "embed_mode", "task", "seed"} - set(metadata)
    if missing:
        raise FormatError(f"{path}: métadonnées absentes: {sorted(missing)}")
    return SimilarityReport(
        run_id=metadata["run_id"],
        embed_mode=metadata["embed_mode"],
        task=metadata["task"],
        seed=int(metadata["seed"]),
        scope=metadata.get("scope", ""),
        series=[(int(row[0]), float(row[1])) for row in rows],
    )
