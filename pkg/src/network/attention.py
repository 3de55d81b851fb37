"""
Attention multi-têtes à trois régimes spatiaux: fenêtres, globale, et biais de
position relative décomposé par axe.
"""
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.models.config import AttentionLayerConfig
from src.models.grid import Grid
from src.utils.errors import InvalidArgumentError
from src.utils.grid_ops import partition_windows, unpartition_windows


class RelPosTables(nn.Module):
    """Tables de position relative par axe, (2·S−1)×head_dim, initialisées à zéro."""

    def __init__(self, side_h: int, side_w: int, head_dim: int):
        super().__init__()
        self.side_h = side_h
        self.side_w = side_w
        self.row_table = nn.Parameter(torch.zeros(2 * side_h - 1, head_dim))
        self.col_table = nn.Parameter(torch.zeros(2 * side_w - 1, head_dim))


def get_rel_pos(q_size: int, k_size: int, table: torch.Tensor) -> torch.Tensor:
    """
    Sélectionne les lignes de la table pour chaque couple (requête, clé) le long d'un axe.

    Returns:
        Tenseur (q_size, k_size, head_dim).
    """
    expected = 2 * max(q_size, k_size) - 1
    if table.shape[0] != expected:
        raise InvalidArgumentError(
            f"Table relpos de longueur {table.shape[0]}, attendu {expected} pour {q_size}x{k_size}"
        )
    q_coords = torch.arange(q_size)[:, None] * max(k_size / q_size, 1.0)
    k_coords = torch.arange(k_size)[None, :] * max(q_size / k_size, 1.0)
    relative = (q_coords - k_coords) + (k_size - 1) * max(q_size / k_size, 1.0)
    return table[relative.long()]


def relpos_bias(
    q: torch.Tensor,
    q_hw: Tuple[int, int],
    k_hw: Tuple[int, int],
    tables: RelPosTables,
) -> torch.Tensor:
    """
    Biais additif sur les logits: <q, row[qy−ky+S−1]> + <q, col[qx−kx+S−1]>.

    Args:
        q: Requêtes (B·têtes, qh·qw, head_dim), avant mise à l'échelle.
        q_hw: Grille des requêtes.
        k_hw: Grille des clés.
        tables: Tables relpos.

    Returns:
        Biais (B·têtes, qh·qw, kh·kw).
    """
    q_h, q_w = q_hw
    k_h, k_w = k_hw
    rel_h = get_rel_pos(q_h, k_h, tables.row_table)
    rel_w = get_rel_pos(q_w, k_w, tables.col_table)

    batch, _, dim = q.shape
    r_q = q.reshape(batch, q_h, q_w, dim)
    bias_h = torch.einsum("bhwc,hkc->bhwk", r_q, rel_h)
    bias_w = torch.einsum("bhwc,wkc->bhwk", r_q, rel_w)
    bias = bias_h[:, :, :, :, None] + bias_w[:, :, :, None, :]
    return bias.reshape(batch, q_h * q_w, k_h * k_w)


def scaled_dot_product(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, bias: Optional[torch.Tensor] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Attention explicite; renvoie la sortie et la matrice de probabilités (softmax sur les clés)."""
    scale = q.shape[-1] ** -0.5
    logits = (q * scale) @ k.transpose(-2, -1)
    if bias is not None:
        logits = logits + bias
    probs = logits.softmax(dim=-1)
    return probs @ v, probs


class MultiHeadAttention(nn.Module):
    """Auto-attention multi-têtes sur un lot de grilles (B, H, W, C)."""

    def __init__(self, cfg: AttentionLayerConfig):
        """
        Initialise la couche.

        Args:
            cfg: Configuration (dimension, têtes, fenêtre, relpos).
        """
        super().__init__()
        self.cfg = cfg
        self.qkv = nn.Linear(cfg.dim, cfg.dim * 3)
        self.proj = nn.Linear(cfg.dim, cfg.dim)
        self.relpos: Optional[RelPosTables] = None
        if cfg.use_relpos:
            side = cfg.attended_side
            self.relpos = RelPosTables(side, side, cfg.head_dim)

    def _attend(self, x: torch.Tensor) -> torch.Tensor:
        batch, height, width, channels = x.shape
        heads = self.cfg.heads
        qkv = self.qkv(x).reshape(batch, height * width, 3, heads, -1).permute(2, 0, 3, 1, 4)
        q, k, v = qkv.reshape(3, batch * heads, height * width, -1).unbind(0)

        bias = None
        if self.relpos is not None:
            bias = relpos_bias(q, (height, width), (height, width), self.relpos)
        if self.cfg.fused and bias is None:
            out = F.scaled_dot_product_attention(q, k, v)
        else:
            out, _ = scaled_dot_product(q, k, v, bias)

        out = out.view(batch, heads, height, width, -1).permute(0, 2, 3, 1, 4).reshape(batch, height, width, channels)
        return self.proj(out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.dim:
            raise InvalidArgumentError(f"Entrée à {x.shape[-1]} canaux, la couche attend {self.cfg.dim}")
        window = self.cfg.window_size
        if window is None:
            return self._attend(x)
        height, width = x.shape[1], x.shape[2]
        windows, padded_hw = partition_windows(x, window)
        out = self._attend(windows)
        return unpartition_windows(out, window, padded_hw, (height, width))


def mhsa_forward(x: Grid, params: MultiHeadAttention, cfg: Optional[AttentionLayerConfig] = None) -> Grid:
    """
    Applique une couche d'attention à une grille isolée.

    Args:
        x: Grille H×W×C avec C = cfg.dim.
        params: Couche portant les poids.
        cfg: Configuration; par défaut celle de la couche.
    """
    cfg = cfg or params.cfg
    if cfg.dim % cfg.heads:
        raise InvalidArgumentError(f"dim={cfg.dim} n'est pas divisible par heads={cfg.heads}")
    if x.channels != cfg.dim:
        raise InvalidArgumentError(f"La grille a {x.channels} canaux, attendu {cfg.dim}")
    if cfg != params.cfg:
        raise InvalidArgumentError("La configuration ne correspond pas aux poids fournis")
    with torch.no_grad():
        out = params(x.data.unsqueeze(0))
    return Grid(out[0])


def pool2x2_tensor(x: torch.Tensor) -> torch.Tensor:
    """
    Max-pooling 2x2 par canal d'un lot (B, H, W, C); les dimensions impaires sont
    complétées en bas/à droite par la plus petite valeur finie.
    """
    height, width = x.shape[1], x.shape[2]
    pad_h, pad_w = height % 2, width % 2
    if pad_h or pad_w:
        x = F.pad(x, (0, 0, 0, pad_w, 0, pad_h), value=torch.finfo(x.dtype).min)
    pooled = F.max_pool2d(x.permute(0, 3, 1, 2), kernel_size=2, stride=2)
    return pooled.permute(0, 2, 3, 1).contiguous()


def pool2x2(x: Grid) -> Grid:
    """Max-pooling 2x2 d'une grille; divise les dimensions spatiales par deux."""
    return Grid(pool2x2_tensor(x.data.unsqueeze(0))[0])
