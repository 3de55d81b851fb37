"""
Configuration de la journalisation.
"""
import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure un unique handler console pour le logger racine.

    Args:
        level: Niveau de log, par défaut la variable d'environnement ABSWIN_LOG_LEVEL (INFO sinon).
    """
    level_name = (level or os.getenv("ABSWIN_LOG_LEVEL", "INFO")).upper()
    root = logging.getLogger()
    if not any(getattr(h, "_abswin", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._abswin = True
        root.addHandler(handler)
    root.setLevel(getattr(logging, level_name, logging.INFO))


def progress_disabled() -> bool:
    """Indique si les barres de progression tqdm doivent être masquées."""
    return os.getenv("ABSWIN_NO_PROGRESS", "0") == "1"
