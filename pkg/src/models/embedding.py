"""
Modèles de données pour les embeddings de position (naïf et absolute-win).
"""
from enum import Enum

from src.models.grid import Grid
from src.utils.errors import InvalidArgumentError


class EmbedKind(str, Enum):
    """Familles d'embeddings sérialisables."""
    NAIVE = "naive"
    ABSWIN = "abswin"


class NaiveEmbed:
    """Embedding absolu complet H×W×C, redimensionné par interpolation bicubique."""

    kind = EmbedKind.NAIVE

    def __init__(self, grid: Grid):
        self.grid = grid

    def __repr__(self) -> str:
        return f"NaiveEmbed({self.grid.height}x{self.grid.width}x{self.grid.channels})"


class AbsWinEmbed:
    """
    Embedding en deux parties: une partie fenêtre w×w×C répétée en mosaïque
    et une partie globale g×g×C interpolée, sommées à la matérialisation.
    """

    kind = EmbedKind.ABSWIN

    def __init__(self, window_part: Grid, global_part: Grid):
        """
        Initialise l'embedding.

        Args:
            window_part: Grille carrée w×w×C.
            global_part: Grille carrée g×g×C.
        """
        if window_part.height != window_part.width:
            raise InvalidArgumentError(f"La partie fenêtre doit être carrée: {window_part.shape}")
        if global_part.height != global_part.width:
            raise InvalidArgumentError(f"La partie globale doit être carrée: {global_part.shape}")
        if window_part.channels != global_part.channels:
            raise InvalidArgumentError(
                f"Canaux incompatibles: fenêtre {window_part.channels}, globale {global_part.channels}"
            )
        self.window_part = window_part
        self.global_part = global_part

    @property
    def window_size(self) -> int:
        return self.window_part.height

    @property
    def global_size(self) -> int:
        return self.global_part.height

    @property
    def channels(self) -> int:
        return self.window_part.channels

    def __repr__(self) -> str:
        return f"AbsWinEmbed(w={self.window_size}, g={self.global_size}, C={self.channels})"
