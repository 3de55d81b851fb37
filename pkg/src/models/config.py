"""
Modèles de configuration de l'architecture (couches d'attention, Hiera-lite, optimiseur).
"""
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.utils.errors import InvalidArgumentError

EmbedMode = Literal["naive", "abswin", "abswin_window", "abswin_global"]
HeadKind = Literal["classify", "mae"]
RelposScope = Literal["none", "global", "all"]


def parse_int_list(value):
    """'2,2' -> [2, 2]; les listes passent telles quelles."""
    if isinstance(value, str):
        return [int(v) for v in value.split(",") if v.strip()]
    return value


def parse_window_list(value):
    """'4,global' -> [4, None]."""
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    parsed = []
    for v in value:
        if v is None or (isinstance(v, str) and v.lower() in ("none", "global", "")):
            parsed.append(None)
        else:
            parsed.append(int(v))
    return parsed


def global_layer_placement(last: int, count: int, stride: int) -> List[int]:
    """
    Place `count` couches globales espacées de `stride`, la dernière à l'indice `last`.

    Exemple: (43, 3, 10) -> [23, 33, 43].
    """
    if count < 1 or stride < 1:
        raise InvalidArgumentError(f"count={count} et stride={stride} doivent être >= 1")
    first = last - (count - 1) * stride
    if first < 0:
        raise InvalidArgumentError(f"Placement ({last}, {count}, {stride}) donne un indice négatif ({first})")
    return list(range(first, last + 1, stride))


class AttentionLayerConfig(BaseModel):
    """Configuration d'une couche d'attention multi-têtes."""
    dim: int = Field(..., ge=1, description="Nombre de canaux")
    heads: int = Field(..., ge=1, description="Nombre de têtes")
    window_size: Optional[int] = Field(None, ge=1, description="Côté de fenêtre en tokens (absent = globale)")
    use_relpos: bool = Field(False, description="Biais de position relative décomposé")
    relpos_side: Optional[int] = Field(
        None, ge=1, description="Côté de la grille attendue pour les tables relpos d'une couche globale"
    )
    fused: bool = Field(False, description="Utilise scaled_dot_product_attention quand relpos est absent")

    @model_validator(mode="after")
    def _check(self) -> "AttentionLayerConfig":
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} n'est pas divisible par heads={self.heads}")
        if self.use_relpos and self.window_size is None and self.relpos_side is None:
            raise ValueError("Une couche globale avec relpos doit préciser relpos_side")
        return self

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def attended_side(self) -> Optional[int]:
        """Côté de la zone attendue, qui dimensionne les tables relpos."""
        return self.window_size if self.window_size is not None else self.relpos_side


class ModelSpec(BaseModel):
    """Description de l'architecture Hiera-lite."""
    input_grid: int = Field(16, ge=1, description="Tokens par côté à la résolution courante")
    pretrain_grid: Optional[int] = Field(None, ge=1, description="Résolution de pré-entraînement (défaut: input_grid)")
    patch_size: int = Field(1, ge=1, description="Côté d'un patch en pixels")
    in_channels: int = Field(8, ge=1, description="Canaux de l'image d'entrée")
    stage_depths: List[int] = Field(default_factory=lambda: [2, 2], description="Nombre de blocs par étage")
    stage_dims: List[int] = Field(default_factory=lambda: [32, 64], description="Canaux par étage")
    stage_heads: List[int] = Field(default_factory=lambda: [1, 2], description="Têtes par étage")
    stage_window_sizes: List[Optional[int]] = Field(
        default_factory=lambda: [4, None], description="Fenêtre par étage (None = attention globale)"
    )
    global_layer_indices: List[int] = Field(
        default_factory=list, description="Indices de blocs forcés en attention globale"
    )
    embed_mode: EmbedMode = Field("abswin", description="Construction de l'embedding de position")
    embed_init: Literal["trunc_normal", "sinusoidal"] = Field("trunc_normal", description="Initialisation du mode naïf")
    window_size: int = Field(4, ge=1, description="Côté w de l'unité de masque / embedding fenêtre")
    global_size: int = Field(4, ge=1, description="Côté g de l'embedding global")
    relpos_scope: RelposScope = Field("none", description="Couches recevant un biais relpos")
    mlp_ratio: int = Field(2, ge=1, description="Facteur d'expansion du MLP")
    head: HeadKind = Field("classify", description="Tête utilisée pour l'entraînement")
    num_classes: int = Field(4, ge=1, description="Nombre de classes K")
    mask_ratio: float = Field(0.6, ge=0.0, lt=1.0, description="Proportion d'unités masquées (MAE)")
    decoder_dim: int = Field(32, ge=1, description="Canaux du décodeur MAE")
    decoder_depth: int = Field(2, ge=1, description="Blocs du décodeur MAE")
    decoder_heads: int = Field(1, ge=1, description="Têtes du décodeur MAE")

    @field_validator("stage_depths", "stage_dims", "stage_heads", "global_layer_indices", mode="before")
    @classmethod
    def _parse_lists(cls, value):
        return parse_int_list(value)

    @field_validator("stage_window_sizes", mode="before")
    @classmethod
    def _parse_windows(cls, value):
        return parse_window_list(value)

    @model_validator(mode="after")
    def _check(self) -> "ModelSpec":
        n = len(self.stage_depths)
        if n == 0:
            raise ValueError("Au moins un étage est requis")
        if not (len(self.stage_dims) == len(self.stage_heads) == len(self.stage_window_sizes) == n):
            raise ValueError("stage_depths, stage_dims, stage_heads et stage_window_sizes doivent avoir la même longueur")
        if any(d < 1 for d in self.stage_depths):
            raise ValueError("Chaque étage doit contenir au moins un bloc")
        if any(b < a for a, b in zip(self.stage_dims, self.stage_dims[1:])):
            raise ValueError(f"Les dimensions d'étage doivent être croissantes: {self.stage_dims}")
        for dim, heads in zip(self.stage_dims, self.stage_heads):
            if dim % heads:
                raise ValueError(f"dim={dim} n'est pas divisible par heads={heads}")
        if self.embed_init == "sinusoidal" and self.stage_dims[0] % 4:
            raise ValueError("L'initialisation sinusoïdale exige des canaux multiples de 4")
        if self.decoder_dim % self.decoder_heads:
            raise ValueError("decoder_dim doit être divisible par decoder_heads")
        depth = self.total_depth
        for index in self.global_layer_indices:
            if not 0 <= index < depth:
                raise ValueError(f"Indice de couche globale {index} hors de [0, {depth})")
        if self.base_grid % self.window_size:
            raise ValueError(f"w={self.window_size} doit diviser la grille de pré-entraînement {self.base_grid}")
        if self.input_grid < self.base_grid:
            raise ValueError("input_grid ne peut pas être inférieur à la grille de pré-entraînement")
        if self.window_size % (2 ** (n - 1)):
            raise ValueError("L'unité de masque doit rester entière après chaque réduction 2x2")
        for stage, window in enumerate(self.stage_window_sizes):
            if window is None:
                continue
            unit_side = self.window_size // (2 ** stage)
            if window > unit_side or unit_side % window:
                raise ValueError(
                    f"La fenêtre {window} de l'étage {stage} doit diviser l'unité de masque ({unit_side})"
                )
        return self

    @property
    def base_grid(self) -> int:
        """Grille de pré-entraînement, sur laquelle w doit tomber juste."""
        return self.pretrain_grid if self.pretrain_grid is not None else self.input_grid

    @property
    def total_depth(self) -> int:
        return sum(self.stage_depths)

    @property
    def image_side(self) -> int:
        return self.input_grid * self.patch_size

    @property
    def embed_dim(self) -> int:
        return self.stage_dims[0]

    def stage_grid(self, stage: int, grid: Optional[int] = None) -> int:
        """Côté de la grille de tokens à l'étage donné (réduction 2x2 avec arrondi supérieur)."""
        side = self.input_grid if grid is None else grid
        for _ in range(stage):
            side = (side + 1) // 2
        return side

    def layer_configs(self, grid: Optional[int] = None) -> List[AttentionLayerConfig]:
        """Configurations d'attention de tous les blocs, dans l'ordre du réseau."""
        configs = []
        index = 0
        for stage, depth in enumerate(self.stage_depths):
            side = self.stage_grid(stage, grid)
            for _ in range(depth):
                window = self.stage_window_sizes[stage]
                if index in self.global_layer_indices:
                    window = None
                use_relpos = self.relpos_scope == "all" or (self.relpos_scope == "global" and window is None)
                configs.append(
                    AttentionLayerConfig(
                        dim=self.stage_dims[stage],
                        heads=self.stage_heads[stage],
                        window_size=window,
                        use_relpos=use_relpos,
                        relpos_side=side if window is None else None,
                    )
                )
                index += 1
        return configs


class OptimizerConfig(BaseModel):
    """Paramètres de l'optimiseur."""
    kind: Literal["sgd", "adamw"] = Field("adamw", description="Type d'optimiseur")
    lr: float = Field(1e-3, gt=0.0, description="Taux d'apprentissage")
    momentum: float = Field(0.0, ge=0.0, lt=1.0, description="Moment (SGD)")
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.0, ge=0.0, description="Décroissance découplée (AdamW)")
    layer_decay: Optional[float] = Field(None, gt=0.0, le=1.0, description="Décroissance du lr par profondeur")
