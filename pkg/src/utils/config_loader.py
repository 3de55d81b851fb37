"""
Chargement de la configuration d'expérience.

Priorité croissante: valeurs par défaut < fichier key=value < variables d'environnement
ABSWIN_* (chargées depuis .env par python-dotenv) < surcharges --set de la ligne de commande.
"""
import hashlib
import logging
import os
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from src.models.experiment import ExperimentConfig
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "ABSWIN_"
# variables d'environnement qui ne sont pas des champs de configuration
_AMBIENT_ENV = {"LOG_LEVEL", "NO_PROGRESS"}
_HASH_EXCLUDED = ("output_dir", "workers")


def parse_config_text(text: str, source: str = "<texte>") -> Dict[str, str]:
    """Lit des lignes 'clé=valeur'; '#' commence un commentaire, les lignes vides sont ignorées."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: ligne sans '=': {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: clé vide")
        values[key] = value
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Champs définis par les variables ABSWIN_<CHAMP> (insensible à la casse)."""
    environ = os.environ if environ is None else environ
    values = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):]
        if key in _AMBIENT_ENV:
            continue
        values[key.lower()] = value
    return values


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    values = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"Surcharge mal formée (clé=valeur attendu): {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Iterable[str] = (),
    environ: Optional[Mapping[str, str]] = None,
    use_dotenv: bool = True,
) -> ExperimentConfig:
    """
    Assemble la configuration finale.

    Args:
        path: Fichier key=value optionnel.
        overrides: Surcharges 'clé=valeur'.
        environ: Environnement à lire (défaut: os.environ après load_dotenv).
        use_dotenv: Charge .env avant de lire l'environnement.

    Raises:
        ConfigError: Clé inconnue, valeur invalide ou fichier mal formé.
    """
    if use_dotenv and environ is None:
        load_dotenv()
    merged: Dict[str, str] = {}
    if path is not None:
        merged.update(load_config_file(path))
    merged.update(env_overrides(environ))
    merged.update(parse_overrides(overrides))

    unknown = sorted(set(merged) - set(ExperimentConfig.model_fields))
    if unknown:
        raise ConfigError(f"Clés de configuration inconnues: {', '.join(unknown)}")
    try:
        config = ExperimentConfig(**merged)
    except ValidationError as exc:
        raise ConfigError(f"Configuration invalide: {exc}") from exc
    logger.debug("Configuration chargée (%s): %s", config_hash(config), merged)
    return config


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join("global" if v is None else str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def canonical_dump(config: ExperimentConfig, exclude: Iterable[str] = ()) -> str:
    """Représentation key=value triée, relisible par parse_config_text."""
    data = config.model_dump(exclude=set(exclude))
    return "".join(f"{key}={_format_value(data[key])}\n" for key in sorted(data))


def config_hash(config: ExperimentConfig) -> str:
    """
    12 premiers caractères hexadécimaux du SHA-256 du dump canonique.

    Le dossier de sortie et le nombre de workers ne changent pas les résultats et sont exclus.
    """
    return hashlib.sha256(canonical_dump(config, _HASH_EXCLUDED).encode("utf-8")).hexdigest()[:12]
