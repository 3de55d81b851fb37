"""
Formats binaires: conteneur d'embedding de position et checkpoint de modèle.

Conteneur d'embedding (petit-boutiste):
    magic b"AWPE" | version u16 | kind u8 (0 naïf, 1 absolute-win) | réservé u8 |
    height u32 | width u32 | channels u32 | window_size u32 | global_size u32 |
    float32[] (partie fenêtre avant partie globale)

Checkpoint:
    magic b"AWCK" | version u16 | taille du manifeste u32 | manifeste JSON |
    taille du conteneur u32 | conteneur d'embedding | section plate des tenseurs float32
"""
import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import ValidationError

from src.models.checkpoint import CHECKPOINT_VERSION, CheckpointManifest, TensorEntry
from src.models.embedding import AbsWinEmbed, EmbedKind, NaiveEmbed
from src.models.grid import Grid
from src.network.hiera_lite import HieraLite
from src.utils.errors import FormatError, InvalidArgumentError
from src.utils.seeding import seeded_init

logger = logging.getLogger(__name__)

EMBED_MAGIC = b"AWPE"
EMBED_VERSION = 1
CHECKPOINT_MAGIC = b"AWCK"

_EMBED_HEADER = struct.Struct("<4sHBBIIIII")
_CHECKPOINT_HEADER = struct.Struct("<4sHI")
_LENGTH = struct.Struct("<I")

_KIND_CODES = {EmbedKind.NAIVE: 0, EmbedKind.ABSWIN: 1}

Embed = Union[NaiveEmbed, AbsWinEmbed]


def _float_bytes(grid: Grid) -> bytes:
    return np.ascontiguousarray(grid.to_numpy(), dtype="<f4").tobytes()


def encode_embedding(embed: Embed) -> bytes:
    """Sérialise un embedding dans le conteneur binaire."""
    if isinstance(embed, NaiveEmbed):
        grid = embed.grid
        header = _EMBED_HEADER.pack(
            EMBED_MAGIC, EMBED_VERSION, 0, 0, grid.height, grid.width, grid.channels, 0, 0
        )
        return header + _float_bytes(grid)
    if isinstance(embed, AbsWinEmbed):
        header = _EMBED_HEADER.pack(
            EMBED_MAGIC,
            EMBED_VERSION,
            _KIND_CODES[EmbedKind.ABSWIN],
            0,
            embed.window_size,
            embed.window_size,
            embed.channels,
            embed.window_size,
            embed.global_size,
        )
        return header + _float_bytes(embed.window_part) + _float_bytes(embed.global_part)
    raise InvalidArgumentError(f"Type d'embedding non sérialisable: {type(embed).__name__}")


def _read_grid(data: bytes, offset: int, height: int, width: int, channels: int) -> Tuple[Grid, int]:
    count = height * width * channels
    end = offset + 4 * count
    if end > len(data):
        raise FormatError(f"Charge utile tronquée: {len(data)} octets, {end} attendus")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(height, width, channels)
    try:
        return Grid(values.astype(np.float32)), end
    except InvalidArgumentError as exc:
        raise FormatError(f"Charge utile invalide: {exc}") from exc


def decode_embedding(data: bytes, offset: int = 0) -> Tuple[Embed, int]:
    """
    Lit un conteneur d'embedding.

    Returns:
        L'embedding et la position qui suit le conteneur.
    """
    if len(data) - offset < _EMBED_HEADER.size:
        raise FormatError("En-tête d'embedding tronqué")
    magic, version, kind, _, height, width, channels, window, glob = _EMBED_HEADER.unpack_from(data, offset)
    if magic != EMBED_MAGIC:
        raise FormatError(f"Magic invalide: {magic!r}")
    if version != EMBED_VERSION:
        raise FormatError(f"Version de conteneur non supportée: {version}")
    if channels == 0:
        raise FormatError("Nombre de canaux nul")
    cursor = offset + _EMBED_HEADER.size
    if kind == _KIND_CODES[EmbedKind.NAIVE]:
        if height == 0 or width == 0:
            raise FormatError("Dimensions nulles")
        grid, cursor = _read_grid(data, cursor, height, width, channels)
        return NaiveEmbed(grid), cursor
    if kind == _KIND_CODES[EmbedKind.ABSWIN]:
        if window == 0 or glob == 0:
            raise FormatError("Tailles de fenêtre ou de partie globale nulles")
        window_part, cursor = _read_grid(data, cursor, window, window, channels)
        global_part, cursor = _read_grid(data, cursor, glob, glob, channels)
        return AbsWinEmbed(window_part, global_part), cursor
    raise FormatError(f"Type d'embedding inconnu: {kind}")


def save_embedding(embed: Embed, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(encode_embedding(embed))
    return path


def load_embedding(path: Union[str, Path]) -> Embed:
    data = Path(path).read_bytes()
    embed, end = decode_embedding(data)
    if end != len(data):
        raise FormatError(f"{len(data) - end} octets inattendus après le conteneur")
    return embed


def file_digest(path: Union[str, Path]) -> str:
    """Empreinte SHA-256 d'un fichier."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _is_embedding_tensor(name: str) -> bool:
    return name.startswith("pos_embed.")


def save_checkpoint(
    path: Union[str, Path],
    model: HieraLite,
    seed: int,
    config_hash: str = "",
    task: str = "posprobe",
    step: int = 0,
    metrics: Optional[Dict[str, float]] = None,
    parent: Optional[str] = None,
) -> CheckpointManifest:
    """
    Écrit le modèle: embedding de position dans son conteneur, autres tenseurs en section plate.
    """
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        if _is_embedding_tensor(name):
            continue
        raw = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4").tobytes()
        entries.append(TensorEntry(name=name, shape=list(tensor.shape), offset=offset))
        chunks.append(raw)
        offset += len(raw)

    manifest = CheckpointManifest(
        format_version=CHECKPOINT_VERSION,
        spec=model.spec,
        seed=seed,
        config_hash=config_hash,
        task=task,
        step=step,
        tensors=entries,
        metrics=metrics or {},
        parent=parent,
    )
    manifest_bytes = json.dumps(manifest.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    embed_bytes = encode_embedding(model.pos_embed.export())

    path = Path(path)
    with open(path, "wb") as handle:
        handle.write(_CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(manifest_bytes)))
        handle.write(manifest_bytes)
        handle.write(_LENGTH.pack(len(embed_bytes)))
        handle.write(embed_bytes)
        for chunk in chunks:
            handle.write(chunk)
    logger.info("Checkpoint écrit: %s (%d tenseurs)", path, len(entries))
    return manifest


def load_checkpoint(path: Union[str, Path]) -> Tuple[CheckpointManifest, HieraLite]:
    """
    Relit un checkpoint et reconstruit le modèle.

    Raises:
        FileNotFoundError: Fichier absent.
        FormatError: Contenu mal formé.
    """
    data = Path(path).read_bytes()
    if len(data) < _CHECKPOINT_HEADER.size:
        raise FormatError("En-tête de checkpoint tronqué")
    magic, version, manifest_len = _CHECKPOINT_HEADER.unpack_from(data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"Magic invalide: {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"Version de checkpoint non supportée: {version}")
    cursor = _CHECKPOINT_HEADER.size
    if cursor + manifest_len + _LENGTH.size > len(data):
        raise FormatError("Manifeste tronqué")
    try:
        manifest = CheckpointManifest.model_validate_json(data[cursor : cursor + manifest_len])
    except ValidationError as exc:
        raise FormatError(f"Manifeste invalide: {exc}") from exc
    cursor += manifest_len

    (embed_len,) = _LENGTH.unpack_from(data, cursor)
    cursor += _LENGTH.size
    embed, end = decode_embedding(data[: cursor + embed_len], cursor)
    if end != cursor + embed_len:
        raise FormatError("Taille du conteneur d'embedding incohérente")
    section = data[end:]

    with seeded_init(manifest.seed):
        model = HieraLite(manifest.spec)
    state = {}
    for entry in manifest.tensors:
        count = int(np.prod(entry.shape)) if entry.shape else 1
        if entry.offset + 4 * count > len(section):
            raise FormatError(f"Tenseur {entry.name} tronqué")
        values = np.frombuffer(section, dtype="<f4", count=count, offset=entry.offset).reshape(entry.shape)
        state[entry.name] = torch.from_numpy(values.copy())
    missing, unexpected = model.load_state_dict(state, strict=False)
    missing = [name for name in missing if not _is_embedding_tensor(name)]
    if missing or unexpected:
        raise FormatError(f"Tenseurs manquants {missing} ou inattendus {unexpected}")

    expected_kind = EmbedKind.NAIVE if manifest.spec.embed_mode == "naive" else EmbedKind.ABSWIN
    if embed.kind != expected_kind:
        raise FormatError(f"Embedding {embed.kind.value} incompatible avec le mode {manifest.spec.embed_mode}")
    try:
        model.pos_embed.load(embed)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc)) from exc
    return manifest, model
