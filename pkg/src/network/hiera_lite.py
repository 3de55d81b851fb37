"""
Hiera-lite: transformeur hiérarchique miniature à fenêtres.

patchify -> embedding de position -> étages (attention fenêtre/globale, max-pooling 2x2
entre étages) -> moyenne -> tête linéaire; plus un décodeur MAE léger qui reconstruit
les unités de masque supprimées.
"""
import copy
import logging
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn

from src.models.config import AttentionLayerConfig, ModelSpec, RelposScope
from src.models.embedding import AbsWinEmbed, NaiveEmbed
from src.models.grid import Grid
from src.network.attention import MultiHeadAttention, RelPosTables, pool2x2_tensor
from src.network.autodiff import Tape
from src.posembed.constructions import (
    materialize_abswin,
    materialize_abswin_tensor,
    resize_naive,
    sinusoidal_embedding,
    trunc_normal,
)
from src.utils.errors import InvalidArgumentError
from src.utils.grid_ops import partition_windows
from src.utils.seeding import seeded_init

logger = logging.getLogger(__name__)

EmbedInput = Union[Grid, NaiveEmbed, AbsWinEmbed, torch.Tensor]


class PatchEmbed(nn.Module):
    """Découpe l'image en patchs p×p et les projette linéairement."""

    def __init__(self, patch_size: int, in_channels: int, dim: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * in_channels, dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        batch, height, width, channels = images.shape
        p = self.patch_size
        x = images.reshape(batch, height // p, p, width // p, p, channels)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(batch, height // p, width // p, p * p * channels)
        return self.proj(x)


class NaivePositionEmbedding(nn.Module):
    """Embedding absolu complet, appris à la résolution d'entraînement."""

    def __init__(self, grid: int, channels: int, init: str = "trunc_normal"):
        super().__init__()
        self.init = init
        self.grid = nn.Parameter(torch.zeros(grid, grid, channels))
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        height, width, channels = self.grid.shape
        if self.init == "sinusoidal":
            fresh = sinusoidal_embedding(height, width, channels).data
        else:
            fresh = trunc_normal((height, width, channels), generator)
        with torch.no_grad():
            self.grid.copy_(fresh.to(self.grid.dtype))

    def forward(self, height: int, width: int) -> torch.Tensor:
        if (height, width) != tuple(self.grid.shape[:2]):
            raise InvalidArgumentError(
                f"Embedding {tuple(self.grid.shape[:2])} incompatible avec la grille {height}x{width}"
            )
        return self.grid

    def export(self) -> NaiveEmbed:
        return NaiveEmbed(Grid(self.grid.detach().clone()))

    def load(self, embed: NaiveEmbed) -> None:
        self.grid = nn.Parameter(embed.grid.data.clone().to(self.grid.dtype))

    def resize_to(self, height: int, width: int) -> None:
        """Interpolation naïve de l'embedding appris vers une nouvelle grille."""
        self.load(NaiveEmbed(resize_naive(self.export(), height, width)))


class AbsWinPositionEmbedding(nn.Module):
    """
    Embedding absolute-win: partie fenêtre w×w répétée + partie globale g×g interpolée.

    Une partie désactivée reste un tampon nul, hors des paramètres appris.
    """

    def __init__(
        self,
        window_size: int,
        global_size: int,
        channels: int,
        use_window: bool = True,
        use_global: bool = True,
    ):
        super().__init__()
        self.use_window = use_window
        self.use_global = use_global
        window = torch.zeros(window_size, window_size, channels)
        glob = torch.zeros(global_size, global_size, channels)
        if use_window:
            self.window_part = nn.Parameter(window)
        else:
            self.register_buffer("window_part", window)
        if use_global:
            self.global_part = nn.Parameter(glob)
        else:
            self.register_buffer("global_part", glob)
        self.reset_parameters()

    def reset_parameters(self, generator: Optional[torch.Generator] = None) -> None:
        with torch.no_grad():
            if self.use_window:
                self.window_part.copy_(trunc_normal(self.window_part.shape, generator).to(self.window_part.dtype))
            if self.use_global:
                self.global_part.copy_(trunc_normal(self.global_part.shape, generator).to(self.global_part.dtype))

    def forward(self, height: int, width: int) -> torch.Tensor:
        return materialize_abswin_tensor(self.window_part, self.global_part, height, width)

    def export(self) -> AbsWinEmbed:
        return AbsWinEmbed(Grid(self.window_part.detach().clone()), Grid(self.global_part.detach().clone()))

    def load(self, embed: AbsWinEmbed) -> None:
        if embed.window_part.shape != tuple(self.window_part.shape) or embed.global_part.shape != tuple(
            self.global_part.shape
        ):
            raise InvalidArgumentError(f"{embed} incompatible avec le modèle")
        with torch.no_grad():
            self.window_part.copy_(embed.window_part.data.to(self.window_part.dtype))
            self.global_part.copy_(embed.global_part.data.to(self.global_part.dtype))


def build_position_embedding(spec: ModelSpec) -> nn.Module:
    if spec.embed_mode == "naive":
        return NaivePositionEmbedding(spec.input_grid, spec.embed_dim, spec.embed_init)
    return AbsWinPositionEmbedding(
        spec.window_size,
        spec.global_size,
        spec.embed_dim,
        use_window=spec.embed_mode != "abswin_global",
        use_global=spec.embed_mode != "abswin_window",
    )


class Block(nn.Module):
    """Bloc transformeur pré-normalisé: attention puis MLP, chacun en résiduel."""

    def __init__(self, cfg: AttentionLayerConfig, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.dim, eps=1e-6)
        self.attn = MultiHeadAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.dim, eps=1e-6)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.dim, cfg.dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(cfg.dim * mlp_ratio, cfg.dim),
        )

    @property
    def cfg(self) -> AttentionLayerConfig:
        return self.attn.cfg

    def forward(self, x: torch.Tensor, units: Optional[int] = None) -> torch.Tensor:
        """
        Args:
            x: Grille (B, H, W, C), ou unités conservées (B·K, s, s, C) en mode MAE.
            units: K, nombre d'unités conservées par échantillon (mode MAE uniquement).
        """
        y = self.norm1(x)
        if units is not None and self.cfg.window_size is None:
            if self.attn.relpos is not None:
                raise InvalidArgumentError("Le biais relpos global nécessite la grille complète (pas de masquage)")
            batch_units, side, _, channels = y.shape
            seq = y.reshape(batch_units // units, 1, units * side * side, channels)
            y = self.attn(seq).reshape(batch_units, side, side, channels)
        else:
            y = self.attn(y)
        x = x + y
        return x + self.mlp(self.norm2(x))


class MaeDecoder(nn.Module):
    """Décodeur léger: une entrée par unité de masque, attention globale sur la grille d'unités."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        stages = len(spec.stage_depths)
        final_side = spec.window_size // (2 ** (stages - 1))
        dim = spec.decoder_dim
        self.units_per_side = spec.base_grid // spec.window_size
        self.embed = nn.Linear(final_side * final_side * spec.stage_dims[-1], dim)
        self.mask_token = nn.Parameter(trunc_normal((dim,)))
        self.pos_embed = nn.Parameter(trunc_normal((self.units_per_side, self.units_per_side, dim)))
        cfg = AttentionLayerConfig(dim=dim, heads=spec.decoder_heads)
        self.blocks = nn.ModuleList(Block(cfg, spec.mlp_ratio) for _ in range(spec.decoder_depth))
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        pixels = (spec.window_size * spec.patch_size) ** 2 * spec.in_channels
        self.pred = nn.Linear(dim, pixels)

    def forward(self, encoded: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        batch, units = mask.shape
        dim = self.pos_embed.shape[-1]
        emb = self.embed(encoded.reshape(encoded.shape[0], -1))
        keep_index = torch.nonzero(~mask, as_tuple=True)
        dense = emb.new_zeros(batch, units, dim).index_put(keep_index, emb)
        tokens = torch.where(mask.unsqueeze(-1), self.mask_token.expand(batch, units, dim), dense)
        tokens = tokens + self.pos_embed.reshape(1, units, dim)
        x = tokens.reshape(batch, self.units_per_side, self.units_per_side, dim)
        for block in self.blocks:
            x = block(x)
        return self.pred(self.norm(x)).reshape(batch, units, -1)


class HieraLite(nn.Module):
    """Transformeur hiérarchique à fenêtres, tête de classification et décodeur MAE."""

    def __init__(self, spec: ModelSpec):
        """
        Initialise le modèle.

        Args:
            spec: Description de l'architecture.
        """
        super().__init__()
        self.spec = spec
        self.patch_embed = PatchEmbed(spec.patch_size, spec.in_channels, spec.embed_dim)
        self.pos_embed = build_position_embedding(spec)
        self.blocks = nn.ModuleList(Block(cfg, spec.mlp_ratio) for cfg in spec.layer_configs())
        self.stage_proj = nn.ModuleList(
            nn.Linear(spec.stage_dims[k], spec.stage_dims[k + 1]) for k in range(len(spec.stage_depths) - 1)
        )
        self.norm = nn.LayerNorm(spec.stage_dims[-1], eps=1e-6)
        self.head = nn.Linear(spec.stage_dims[-1], spec.num_classes)
        self.decoder = MaeDecoder(spec)

    def encode(self, x: torch.Tensor, units: Optional[int] = None) -> torch.Tensor:
        index = 0
        for stage, depth in enumerate(self.spec.stage_depths):
            if stage > 0:
                x = pool2x2_tensor(x)
                x = self.stage_proj[stage - 1](x)
            for _ in range(depth):
                x = self.blocks[index](x, units)
                index += 1
        return self.norm(x)

    @property
    def num_layers(self) -> int:
        return self.spec.total_depth + 1

    def layer_id(self, name: str) -> int:
        """Profondeur d'un paramètre pour la décroissance du lr par couche."""
        parts = name.split(".")
        if parts[0] in ("patch_embed", "pos_embed"):
            return 0
        if parts[0] == "blocks":
            return int(parts[1]) + 1
        if parts[0] == "stage_proj":
            stage = int(parts[1]) + 1
            return sum(self.spec.stage_depths[:stage]) + 1
        return self.num_layers


def build_model(spec: ModelSpec, seed: int = 0) -> HieraLite:
    """Construit un modèle initialisé de façon reproductible."""
    with seeded_init(seed):
        return HieraLite(spec)


def replace_head(spec: ModelSpec, model: HieraLite, num_classes: int, seed: int = 0) -> ModelSpec:
    """Remplace la tête linéaire (nouveau nombre de classes) et passe le modèle en classification."""
    new_spec = _rebuild_spec(spec, head="classify", num_classes=num_classes)
    if num_classes != spec.num_classes:
        with seeded_init(seed):
            head = nn.Linear(spec.stage_dims[-1], num_classes)
        model.head = head.to(model.head.weight.dtype)
    model.spec = new_spec
    return new_spec


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def _as_batch(spec: ModelSpec, images: Union[Grid, torch.Tensor], name: str = "image") -> torch.Tensor:
    data = images.data if isinstance(images, Grid) else images
    if data.dim() == 3:
        data = data.unsqueeze(0)
    side = spec.image_side
    if data.dim() != 4 or data.shape[1] != side or data.shape[2] != side or data.shape[3] != spec.in_channels:
        raise InvalidArgumentError(
            f"{name} de forme {tuple(data.shape)}, attendu (B, {side}, {side}, {spec.in_channels})"
        )
    return data.contiguous()


def _embed_tensor(spec: ModelSpec, model: HieraLite, embed: Optional[EmbedInput]) -> torch.Tensor:
    grid = spec.input_grid
    if embed is None:
        return model.pos_embed(grid, grid)
    if isinstance(embed, AbsWinEmbed):
        embed = materialize_abswin(embed, grid, grid)
    if isinstance(embed, NaiveEmbed):
        embed = embed.grid
    data = embed.data if isinstance(embed, Grid) else embed
    if tuple(data.shape) != (grid, grid, spec.embed_dim):
        raise InvalidArgumentError(
            f"Embedding de forme {tuple(data.shape)}, attendu ({grid}, {grid}, {spec.embed_dim})"
        )
    return data


def _tokens(spec: ModelSpec, model: HieraLite, images: torch.Tensor, embed: Optional[EmbedInput]) -> torch.Tensor:
    tokens = model.patch_embed(images.to(model.head.weight.dtype))
    return tokens + _embed_tensor(spec, model, embed).to(tokens.dtype)


def forward_classify(
    spec: ModelSpec,
    model: HieraLite,
    images: Union[Grid, torch.Tensor],
    embed: Optional[EmbedInput] = None,
    tape: Optional[Tape] = None,
) -> torch.Tensor:
    """
    Passage avant de classification.

    Args:
        spec: Architecture (fixe la grille d'entrée).
        model: Poids.
        images: Image (H, W, C) ou lot (B, H, W, C), côté = input_grid · patch_size.
        embed: Embedding matérialisé à input_grid; par défaut celui du modèle.
        tape: Bande sur laquelle enregistrer les logits.

    Returns:
        Logits (B, K).
    """
    batch = _as_batch(spec, images)
    x = model.encode(_tokens(spec, model, batch, embed))
    logits = model.head(x.mean(dim=(1, 2)))
    if tape is not None:
        tape.record(logits)
    return logits


def random_window_mask(
    batch: int, units: int, ratio: float, generator: Optional[torch.Generator] = None
) -> torch.Tensor:
    """Masque (B, U) de floor(U·ratio) unités tirées au hasard par échantillon (True = supprimée)."""
    count = int(units * ratio)
    mask = torch.zeros(batch, units, dtype=torch.bool)
    for b in range(batch):
        mask[b, torch.randperm(units, generator=generator)[:count]] = True
    return mask


def forward_mae(
    spec: ModelSpec,
    model: HieraLite,
    images: Union[Grid, torch.Tensor],
    mask: torch.Tensor,
    embed: Optional[EmbedInput] = None,
    target: Optional[Union[Grid, torch.Tensor]] = None,
    tape: Optional[Tape] = None,
) -> torch.Tensor:
    """
    Perte de reconstruction MAE: les unités masquées sont retirées avant l'encodeur
    et l'erreur quadratique moyenne est calculée sur leurs pixels uniquement.

    Args:
        spec: Architecture.
        model: Poids.
        images: Entrée (B, H, W, C).
        mask: Booléens (B, U) ou (U,), True = unité supprimée.
        embed: Embedding matérialisé (défaut: celui du modèle).
        target: Image cible (défaut: l'entrée, sans gradient).
        tape: Bande sur laquelle enregistrer la perte.
    """
    batch = _as_batch(spec, images)
    w = spec.window_size
    grid = spec.input_grid
    if grid % w:
        raise InvalidArgumentError(f"Le masquage MAE exige w={w} divisant la grille {grid}")
    units = (grid // w) ** 2
    if units != model.decoder.units_per_side ** 2:
        raise InvalidArgumentError("Le décodeur MAE est dimensionné pour la grille de pré-entraînement")
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.dim() == 1:
        mask = mask.unsqueeze(0).expand(batch.shape[0], -1)
    if tuple(mask.shape) != (batch.shape[0], units):
        raise InvalidArgumentError(f"Masque de forme {tuple(mask.shape)}, attendu ({batch.shape[0]}, {units})")
    kept = (~mask).sum(dim=1)
    if bool((kept == 0).any()):
        raise InvalidArgumentError("Toutes les unités sont masquées")
    if bool((kept != kept[0]).any()):
        raise InvalidArgumentError("Chaque échantillon doit conserver le même nombre d'unités")

    x = _tokens(spec, model, batch, embed)
    unit_tokens, _ = partition_windows(x, w)
    unit_tokens = unit_tokens.reshape(batch.shape[0], units, w, w, -1)[~mask]
    encoded = model.encode(unit_tokens, units=int(kept[0]))
    pred = model.decoder(encoded, mask)

    target_images = batch if target is None else _as_batch(spec, target, "cible")
    target_images = target_images.detach().to(pred.dtype)
    pixel_side = w * spec.patch_size
    target_units, _ = partition_windows(target_images, pixel_side)
    target_units = target_units.reshape(batch.shape[0], units, -1)

    per_unit = ((pred - target_units) ** 2).mean(dim=-1)
    masked = mask.to(per_unit.dtype)
    if int(mask.sum()) == 0:
        loss = pred.sum() * 0.0
    else:
        loss = (per_unit * masked).sum() / masked.sum()
    if tape is not None:
        tape.record(loss)
    return loss


def _rebuild_spec(spec: ModelSpec, **update) -> ModelSpec:
    return ModelSpec(**{**spec.model_dump(), **update})


def _sync_attention(model: HieraLite, spec: ModelSpec) -> None:
    """Aligne les couches d'attention sur le ModelSpec; les tables relpos redimensionnées repartent de zéro."""
    for block, cfg in zip(model.blocks, spec.layer_configs()):
        attn = block.attn
        old = attn.relpos
        attn.cfg = cfg
        if not cfg.use_relpos:
            if old is not None:
                logger.info("Tables relpos retirées (couche %s)", cfg)
            attn.relpos = None
            continue
        side = cfg.attended_side
        if old is not None and old.side_h == side:
            continue
        if old is not None and (old.row_table.abs().sum() > 0 or old.col_table.abs().sum() > 0):
            logger.warning("Tables relpos %dx%d abandonnées: elles ne sont jamais rééchantillonnées", old.side_h, old.side_w)
        attn.relpos = RelPosTables(side, side, cfg.head_dim).to(block.norm1.weight.dtype)


def adapt_resolution(spec: ModelSpec, model: HieraLite, new_grid: int) -> Tuple[ModelSpec, HieraLite]:
    """
    Prépare le modèle pour une grille plus grande: seul l'embedding de position change.

    En mode naïf l'embedding est interpolé; en mode absolute-win il est simplement
    rematérialisé (fenêtre en mosaïque, partie globale interpolée).

    Returns:
        Le nouveau ModelSpec et une copie adaptée du modèle.
    """
    if new_grid < spec.input_grid:
        raise InvalidArgumentError(f"Réduction de {spec.input_grid} à {new_grid} non supportée")
    new_spec = _rebuild_spec(spec, input_grid=new_grid, pretrain_grid=spec.base_grid)
    new_model = copy.deepcopy(model)
    new_model.spec = new_spec
    if isinstance(new_model.pos_embed, NaivePositionEmbedding):
        new_model.pos_embed.resize_to(new_grid, new_grid)
    _sync_attention(new_model, new_spec)
    logger.info("Résolution adaptée: %d -> %d (%s)", spec.input_grid, new_grid, spec.embed_mode)
    return new_spec, new_model


def set_relpos_scope(spec: ModelSpec, model: HieraLite, scope: RelposScope) -> Tuple[ModelSpec, HieraLite]:
    """Active ou retire le biais relpos; les nouvelles tables sont nulles, donc sans effet au départ."""
    if scope == spec.relpos_scope:
        return spec, model
    new_spec = _rebuild_spec(spec, relpos_scope=scope)
    new_model = copy.deepcopy(model)
    new_model.spec = new_spec
    _sync_attention(new_model, new_spec)
    return new_spec, new_model


def reset_position_embedding(model: HieraLite, generator: Optional[torch.Generator] = None) -> HieraLite:
    """Réinitialise l'embedding de position; les autres paramètres ne bougent pas."""
    model.pos_embed.reset_parameters(generator)
    return model
