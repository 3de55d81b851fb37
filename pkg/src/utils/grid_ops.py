"""
Opérations sur grilles denses: rééchantillonnage bicubique, mosaïque, recadrage,
découpage en fenêtres et similarité cosinus.

Les fonctions suffixées `_tensor` travaillent directement sur des tenseurs torch
(différentiables, dtype conservé) et servent au modèle; les autres manipulent des
objets Grid immuables.
"""
import math
from typing import List, Sequence, Tuple, Union

import torch
import torch.nn.functional as F

from src.models.grid import Grid, WindowLayout
from src.utils.errors import InvalidArgumentError


def resize_tensor(x: torch.Tensor, out_height: int, out_width: int) -> torch.Tensor:
    """
    Interpolation bicubique d'un tenseur (H, W, C).

    Noyau de convolution cubique (a = -0.75), centres de pixels décalés d'un demi-pixel
    et bords répliqués: c'est le comportement de F.interpolate en mode bicubic avec
    align_corners=False.

    Args:
        x: Tenseur (H, W, C).
        out_height: Hauteur cible.
        out_width: Largeur cible.

    Returns:
        Tenseur (out_height, out_width, C) du même dtype que x.
    """
    if x.dim() != 3 or x.shape[0] == 0 or x.shape[1] == 0 or x.shape[2] == 0:
        raise InvalidArgumentError(f"Source vide ou mal formée: {tuple(x.shape)}")
    if out_height < 1 or out_width < 1:
        raise InvalidArgumentError(f"Taille cible invalide: {out_height}x{out_width}")
    if (x.shape[0], x.shape[1]) == (out_height, out_width):
        return x.clone()
    images = x.permute(2, 0, 1).unsqueeze(0)
    resized = F.interpolate(images, size=(out_height, out_width), mode="bicubic", align_corners=False)
    return resized.squeeze(0).permute(1, 2, 0).contiguous()


def bicubic_resize(src: Grid, out_height: int, out_width: int) -> Grid:
    """
    Redimensionne une grille par interpolation bicubique.

    Le calcul est fait en 64 bits puis stocké en 32 bits. Redimensionner à la taille
    d'origine renvoie une copie exacte.
    """
    if out_height < 1 or out_width < 1:
        raise InvalidArgumentError(f"Taille cible invalide: {out_height}x{out_width}")
    if (src.height, src.width) == (out_height, out_width):
        return Grid(src.data.clone())
    resized = resize_tensor(src.data.to(torch.float64), out_height, out_width)
    return Grid(resized.to(torch.float32))


def tile_tensor(x: torch.Tensor, reps_h: int, reps_w: int) -> torch.Tensor:
    """Répète un tenseur (H, W, C) reps_h fois verticalement et reps_w fois horizontalement."""
    if reps_h < 1 or reps_w < 1:
        raise InvalidArgumentError(f"Nombre de répétitions invalide: {reps_h}x{reps_w}")
    return x.repeat(reps_h, reps_w, 1)


def tile_to_tensor(x: torch.Tensor, out_height: int, out_width: int) -> torch.Tensor:
    """Mosaïque jusqu'au multiple supérieur puis recadrage en haut à gauche."""
    if out_height < 1 or out_width < 1:
        raise InvalidArgumentError(f"Taille cible invalide: {out_height}x{out_width}")
    reps_h = math.ceil(out_height / x.shape[0])
    reps_w = math.ceil(out_width / x.shape[1])
    return tile_tensor(x, reps_h, reps_w)[:out_height, :out_width]


def tile(src: Grid, reps_h: int, reps_w: int) -> Grid:
    """Grille (reps_h·H)×(reps_w·W)×C dont chaque bloc H×W est une copie de src."""
    return Grid(tile_tensor(src.data, reps_h, reps_w))


def crop(src: Grid, row0: int, col0: int, height: int, width: int) -> Grid:
    """
    Extrait un sous-rectangle de la grille.

    Args:
        src: Grille source.
        row0: Première ligne.
        col0: Première colonne.
        height: Hauteur du rectangle.
        width: Largeur du rectangle.

    Returns:
        La sous-grille, copie exacte des valeurs source.
    """
    if row0 < 0 or col0 < 0 or height < 1 or width < 1:
        raise InvalidArgumentError(f"Rectangle invalide: ({row0}, {col0}, {height}, {width})")
    if row0 + height > src.height or col0 + width > src.width:
        raise InvalidArgumentError(
            f"Rectangle ({row0}, {col0}, {height}, {width}) hors de la grille {src.height}x{src.width}"
        )
    return Grid(src.data[row0:row0 + height, col0:col0 + width].clone())


def partition_windows(x: torch.Tensor, window_size: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """
    Découpe un lot (B, H, W, C) en fenêtres (B·nW, w, w, C), avec remplissage par zéros
    en bas et à droite si nécessaire.

    Returns:
        Les fenêtres dans l'ordre ligne par ligne, et la taille remplie (Hp, Wp).
    """
    batch, height, width, channels = x.shape
    pad_height = (window_size - height % window_size) % window_size
    pad_width = (window_size - width % window_size) % window_size
    if pad_height or pad_width:
        x = F.pad(x, (0, 0, 0, pad_width, 0, pad_height))
    padded_height, padded_width = height + pad_height, width + pad_width

    x = x.view(
        batch,
        padded_height // window_size,
        window_size,
        padded_width // window_size,
        window_size,
        channels,
    )
    windows = x.permute(0, 1, 3, 2, 4, 5).contiguous().view(-1, window_size, window_size, channels)
    return windows, (padded_height, padded_width)


def unpartition_windows(
    windows: torch.Tensor,
    window_size: int,
    padded_hw: Tuple[int, int],
    hw: Tuple[int, int],
) -> torch.Tensor:
    """Recompose un lot (B, H, W, C) à partir de ses fenêtres et retire le remplissage."""
    padded_height, padded_width = padded_hw
    height, width = hw
    batch = windows.shape[0] // (padded_height * padded_width // window_size // window_size)
    x = windows.view(
        batch,
        padded_height // window_size,
        padded_width // window_size,
        window_size,
        window_size,
        -1,
    )
    x = x.permute(0, 1, 3, 2, 4, 5).contiguous().view(batch, padded_height, padded_width, -1)
    return x[:, :height, :width, :].contiguous()


def window_partition(src: Grid, layout: WindowLayout) -> List[Grid]:
    """Découpe une grille en fenêtres w×w×C, ordre ligne par ligne."""
    if (layout.grid_height, layout.grid_width) != (src.height, src.width):
        raise InvalidArgumentError(
            f"Découpage {layout.grid_height}x{layout.grid_width} incompatible avec la grille {src.height}x{src.width}"
        )
    windows, _ = partition_windows(src.data.unsqueeze(0), layout.window_size)
    return [Grid(window) for window in windows]


def window_unpartition(windows: Sequence[Grid], layout: WindowLayout) -> Grid:
    """Réassemble des fenêtres en une grille recadrée à la taille d'origine du découpage."""
    if len(windows) != layout.num_windows:
        raise InvalidArgumentError(f"{len(windows)} fenêtres reçues, {layout.num_windows} attendues")
    w = layout.window_size
    channels = windows[0].channels if windows else 0
    for window in windows:
        if window.shape != (w, w, channels):
            raise InvalidArgumentError(f"Fenêtre de forme {window.shape}, attendu {(w, w, channels)}")
    stacked = torch.stack([window.data for window in windows])
    grid = unpartition_windows(
        stacked, w, (layout.padded_height, layout.padded_width), (layout.grid_height, layout.grid_width)
    )
    return Grid(grid[0])


def _as_vector(value: Union[Grid, torch.Tensor]) -> torch.Tensor:
    data = value.data if isinstance(value, Grid) else value
    return data.reshape(-1).to(torch.float64)


def cosine_similarity(a: Union[Grid, torch.Tensor], b: Union[Grid, torch.Tensor]) -> float:
    """
    Cosinus entre deux vecteurs aplatis, calculé en 64 bits.

    Vaut 0 si l'un des vecteurs est de norme nulle.
    """
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape != vb.shape:
        raise InvalidArgumentError(f"Longueurs différentes: {va.numel()} vs {vb.numel()}")
    norm = float(torch.linalg.vector_norm(va) * torch.linalg.vector_norm(vb))
    if norm == 0.0:
        return 0.0
    value = float(torch.dot(va, vb)) / norm
    return max(-1.0, min(1.0, value))


def pairwise_cosine(vectors: torch.Tensor) -> torch.Tensor:
    """
    Matrice N×N des cosinus entre les lignes d'une matrice (N, D), en 64 bits.

    Les lignes de norme nulle ont une similarité nulle avec tout, elles-mêmes comprises.
    """
    vectors = vectors.to(torch.float64)
    norms = torch.linalg.vector_norm(vectors, dim=1)
    safe = torch.where(norms > 0, norms, torch.ones_like(norms))
    unit = vectors / safe[:, None]
    unit[norms == 0] = 0.0
    return (unit @ unit.T).clamp(-1.0, 1.0)
