"""
Constructions et redimensionnements des embeddings de position.

- naïf: interpolation bicubique de l'embedding complet (désaligne les fenêtres);
- absolute-win: mosaïque de la partie fenêtre + interpolation de la partie globale;
- détection: mosaïque de l'embedding pré-entraîné complet;
- récursif: embedding absolute-win matérialisé, réutilisé comme partie fenêtre.
"""
import math
from typing import Optional, Union

import torch

from src.models.embedding import AbsWinEmbed, NaiveEmbed
from src.models.grid import Grid
from src.utils.errors import InvalidArgumentError
from src.utils.grid_ops import bicubic_resize, crop, resize_tensor, tile, tile_to_tensor

INIT_STD = 0.02


def materialize_abswin_tensor(
    window_part: torch.Tensor, global_part: torch.Tensor, out_height: int, out_width: int
) -> torch.Tensor:
    """
    Version tenseur (différentiable) de la matérialisation absolute-win.

    Args:
        window_part: Tenseur (w, w, C).
        global_part: Tenseur (g, g, C).
        out_height: Hauteur cible en tokens.
        out_width: Largeur cible en tokens.

    Returns:
        Tenseur (out_height, out_width, C).
    """
    if window_part.shape[-1] != global_part.shape[-1]:
        raise InvalidArgumentError(
            f"Canaux incompatibles: fenêtre {window_part.shape[-1]}, globale {global_part.shape[-1]}"
        )
    tiled = tile_to_tensor(window_part, out_height, out_width)
    return tiled + resize_tensor(global_part, out_height, out_width)


def materialize_abswin(embed: AbsWinEmbed, out_height: int, out_width: int) -> Grid:
    """
    Construit l'embedding complet: mosaïque de la fenêtre (recadrée en haut à gauche)
    plus la partie globale interpolée à la taille de la grille.
    """
    if out_height < 1 or out_width < 1:
        raise InvalidArgumentError(f"Taille cible invalide: {out_height}x{out_width}")
    if embed.window_part.channels != embed.global_part.channels:
        raise InvalidArgumentError("Les deux parties doivent avoir le même nombre de canaux")
    w = embed.window_size
    tiled = crop(
        tile(embed.window_part, math.ceil(out_height / w), math.ceil(out_width / w)), 0, 0, out_height, out_width
    )
    return tiled + bicubic_resize(embed.global_part, out_height, out_width)


def resize_naive(embed: Union[NaiveEmbed, Grid], out_height: int, out_width: int) -> Grid:
    """Redimensionnement naïf: interpolation bicubique de tout l'embedding."""
    grid = embed.grid if isinstance(embed, NaiveEmbed) else embed
    return bicubic_resize(grid, out_height, out_width)


def resize_abswin(embed: AbsWinEmbed, out_height: int, out_width: int) -> Grid:
    """Redimensionnement absolute-win: la partie fenêtre n'est jamais rééchantillonnée."""
    return materialize_abswin(embed, out_height, out_width)


def detection_tile(pretrained: Grid, out_height: int, out_width: int) -> Grid:
    """
    Répète l'embedding pré-entraîné p×p sur la grille de détection puis recadre.

    Chaque bloc p×p complet de la sortie est une copie exacte de l'embedding pré-entraîné.
    """
    if pretrained.height != pretrained.width:
        raise InvalidArgumentError(f"L'embedding pré-entraîné doit être carré: {pretrained.shape}")
    p = pretrained.height
    reps_h, reps_w = math.ceil(out_height / p), math.ceil(out_width / p)
    return crop(tile(pretrained, reps_h, reps_w), 0, 0, out_height, out_width)


def recursive_abswin(base: AbsWinEmbed, base_res: int, out_height: int, out_width: int) -> Grid:
    """
    Absolute-win récursif: l'embedding matérialisé à base_res sert de fenêtre
    pour une grille plus grande.
    """
    if base_res < 1 or base_res % base.window_size:
        raise InvalidArgumentError(f"base_res={base_res} doit être un multiple de w={base.window_size}")
    inner = materialize_abswin(base, base_res, base_res)
    return detection_tile(inner, out_height, out_width)


def trunc_normal(shape, generator: Optional[torch.Generator] = None, std: float = INIT_STD) -> torch.Tensor:
    """Tirage normal tronqué à ±2σ."""
    tensor = torch.empty(*shape)
    torch.nn.init.trunc_normal_(tensor, mean=0.0, std=std, a=-2 * std, b=2 * std, generator=generator)
    return tensor


def sinusoidal_embedding(height: int, width: int, channels: int, temperature: float = 10000.0) -> Grid:
    """
    Embedding sinus/cosinus 2D fixe: la moitié des canaux code la ligne, l'autre la colonne.

    Args:
        height: Hauteur en tokens.
        width: Largeur en tokens.
        channels: Nombre de canaux (multiple de 4).
        temperature: Base des fréquences.
    """
    if channels % 4:
        raise InvalidArgumentError(f"channels={channels} doit être un multiple de 4")
    quarter = channels // 4
    omega = 1.0 / temperature ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=torch.float64), torch.arange(width, dtype=torch.float64), indexing="ij"
    )
    out_y = ys[..., None] * omega
    out_x = xs[..., None] * omega
    data = torch.cat([out_y.sin(), out_y.cos(), out_x.sin(), out_x.cos()], dim=-1)
    return Grid(data.to(torch.float32))


def random_naive(
    height: int, width: int, channels: int, generator: Optional[torch.Generator] = None
) -> NaiveEmbed:
    return NaiveEmbed(Grid(trunc_normal((height, width, channels), generator)))


def random_abswin(
    window_size: int, global_size: int, channels: int, generator: Optional[torch.Generator] = None
) -> AbsWinEmbed:
    return AbsWinEmbed(
        Grid(trunc_normal((window_size, window_size, channels), generator)),
        Grid(trunc_normal((global_size, global_size, channels), generator)),
    )
