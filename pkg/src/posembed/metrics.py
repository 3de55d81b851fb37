"""
Mesures de similarité sur les embeddings de position.
"""
from typing import List, Tuple

import torch

from src.models.grid import Grid, WindowLayout
from src.utils.errors import InvalidArgumentError
from src.utils.grid_ops import cosine_similarity, crop, pairwise_cosine, window_partition


def complete_windows(embed: Grid, window_size: int) -> List[Grid]:
    """Fenêtres complètes d'une grille (les fenêtres tronquées du bord sont exclues)."""
    if window_size < 1 or window_size > embed.height or window_size > embed.width:
        raise InvalidArgumentError(
            f"Fenêtre {window_size} plus grande que la grille {embed.height}x{embed.width}"
        )
    rows, cols = embed.height // window_size, embed.width // window_size
    trimmed = crop(embed, 0, 0, rows * window_size, cols * window_size)
    layout = WindowLayout.for_grid(trimmed.height, trimmed.width, window_size)
    return window_partition(trimmed, layout)


def window_similarity(embed: Grid, window_size: int) -> float:
    """
    Similarité cosinus moyenne entre toutes les paires de fenêtres complètes.

    Vaut exactement 1.0 pour une seule fenêtre ou une mosaïque parfaite.
    """
    windows = complete_windows(embed, window_size)
    if len(windows) == 1:
        return 1.0
    vectors = torch.stack([w.flat() for w in windows])
    sims = pairwise_cosine(vectors)
    # fenêtres identiques bit à bit et non nulles: cosinus exactement 1
    _, ids = torch.unique(vectors, dim=0, return_inverse=True)
    nonzero = torch.linalg.vector_norm(vectors.to(torch.float64), dim=1) > 0
    identical = (ids[:, None] == ids[None, :]) & nonzero[:, None] & nonzero[None, :]
    sims = torch.where(identical, torch.ones_like(sims), sims)
    rows, cols = torch.triu_indices(len(windows), len(windows), offset=1)
    return float(sims[rows, cols].mean())


def token_similarity_maps(part: Grid) -> torch.Tensor:
    """
    Matrice s²×s² des cosinus entre les vecteurs de canaux des tokens d'une partie carrée.

    L'entrée (i, j) compare les tokens i et j, numérotés ligne par ligne.
    """
    if part.height != part.width:
        raise InvalidArgumentError(f"La partie doit être carrée: {part.shape}")
    tokens = part.data.reshape(part.height * part.width, part.channels)
    sims = pairwise_cosine(tokens)
    index = torch.nonzero(torch.linalg.vector_norm(tokens.to(torch.float64), dim=1) > 0).squeeze(1)
    sims[index, index] = 1.0
    return sims


def block_alignment(embed: Grid, reference: Grid) -> List[Tuple[int, int, float]]:
    """
    Cosinus entre chaque bloc complet de la taille de la référence et la référence.

    Returns:
        Liste de (ligne de bloc, colonne de bloc, cosinus), ordre ligne par ligne.
    """
    if reference.height > embed.height or reference.width > embed.width:
        raise InvalidArgumentError("La référence dépasse la grille")
    if reference.channels != embed.channels:
        raise InvalidArgumentError("Nombres de canaux différents")
    rows = embed.height // reference.height
    cols = embed.width // reference.width
    results = []
    for r in range(rows):
        for c in range(cols):
            block = crop(embed, r * reference.height, c * reference.width, reference.height, reference.width)
            value = 1.0 if block.equal(reference) and bool(reference.data.any()) else cosine_similarity(block, reference)
            results.append((r, c, value))
    return results
