"""
Écriture et relecture des artefacts texte et image: CSV avec ligne de métadonnées,
images PGM binaires (P5) et manifeste des artefacts d'un dossier de sortie.
"""
import csv
import hashlib
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import FormatError, InvalidArgumentError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    """Représentation décimale qui se relit sans perte."""
    return format(float(value), ".17g")


def format_metadata(metadata: Dict[str, object]) -> str:
    return " ".join(f"{key}={metadata[key]}" for key in sorted(metadata))


def parse_metadata(line: str) -> Dict[str, str]:
    items = {}
    for token in line.split():
        if "=" not in token:
            raise FormatError(f"Métadonnée mal formée: {token!r}")
        key, value = token.split("=", 1)
        items[key] = value
    return items


def write_csv(
    path: PathLike,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    metadata: Optional[Dict[str, object]] = None,
) -> Path:
    """
    Écrit un CSV précédé d'une ligne '# clé=valeur ...' (empreinte de config, graine).

    Les flottants sont écrits avec 17 chiffres significatifs.
    """
    buffer = io.StringIO()
    if metadata:
        buffer.write(f"# {format_metadata(metadata)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    path = Path(path)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


def read_csv(path: PathLike) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """
    Relit un CSV écrit par write_csv.

    Returns:
        (métadonnées, en-tête, lignes de valeurs brutes)
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    metadata: Dict[str, str] = {}
    if lines and lines[0].startswith("#"):
        metadata = parse_metadata(lines[0][1:].strip())
        lines = lines[1:]
    if not lines:
        raise FormatError(f"{path}: en-tête CSV absent")
    reader = csv.reader(lines)
    header = next(reader)
    rows = []
    for row in reader:
        if len(row) != len(header):
            raise FormatError(f"{path}: ligne de {len(row)} colonnes, {len(header)} attendues")
        rows.append(row)
    return metadata, header, rows


def normalize_to_bytes(values: np.ndarray) -> np.ndarray:
    """
    Normalisation min-max vers [0, 255], arrondie au plus proche.

    Un canal constant donne un gris moyen (127).
    """
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high == low:
        return np.full(values.shape, 127, dtype=np.uint8)
    return np.rint((values - low) / (high - low) * 255.0).astype(np.uint8)


def write_pgm(path: PathLike, pixels: np.ndarray, comment: Optional[str] = None) -> Path:
    """Écrit une image en niveaux de gris au format PGM binaire (P5), un octet par pixel."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise InvalidArgumentError(f"Image attendue 2D uint8, reçu {pixels.shape} {pixels.dtype}")
    height, width = pixels.shape
    header = "P5\n"
    if comment:
        header += f"# {comment}\n"
    header += f"{width} {height}\n255\n"
    path = Path(path)
    path.write_bytes(header.encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path: PathLike) -> Tuple[np.ndarray, Optional[str]]:
    """
    Relit un PGM P5 écrit par write_pgm.

    Returns:
        (pixels (H, W) uint8, commentaire éventuel)
    """
    data = Path(path).read_bytes()
    fields: List[bytes] = []
    comment = None
    cursor = 0
    while len(fields) < 4:
        end = data.find(b"\n", cursor)
        if end < 0:
            raise FormatError(f"{path}: en-tête PGM tronqué")
        line = data[cursor:end]
        cursor = end + 1
        if line.startswith(b"#"):
            comment = line[1:].strip().decode("ascii")
            continue
        fields.extend(line.split())
    if fields[0] != b"P5":
        raise FormatError(f"{path}: magic PGM invalide {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: profondeur {maxval} non supportée")
    if len(data) - cursor != width * height:
        raise FormatError(f"{path}: {len(data) - cursor} octets de pixels, {width * height} attendus")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=cursor).reshape(height, width)
    return pixels.copy(), comment


def write_manifest(output_dir: PathLike, metadata: Dict[str, object]) -> Path:
    """Liste les artefacts du dossier (nom, sha256, taille) dans manifest.csv, sous la ligne de métadonnées."""
    output_dir = Path(output_dir)
    rows = []
    for path in sorted(p for p in output_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME):
        data = path.read_bytes()
        rows.append((path.relative_to(output_dir).as_posix(), hashlib.sha256(data).hexdigest(), len(data)))
    manifest = write_csv(output_dir / MANIFEST_NAME, ["artifact", "sha256", "bytes"], rows, metadata)
    logger.debug("Manifeste: %d artefacts dans %s", len(rows), output_dir)
    return manifest
