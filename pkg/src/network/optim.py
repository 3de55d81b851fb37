"""
Optimiseurs (SGD, AdamW) et groupes de paramètres avec décroissance du lr par profondeur.
"""
import logging
from typing import Callable, Dict, List, Optional

import torch

from src.models.config import OptimizerConfig
from src.network.autodiff import ParamStore

logger = logging.getLogger(__name__)

NO_DECAY_MARKER = "pos_embed"


def layerwise_lr_groups(
    store: ParamStore,
    base_lr: float,
    weight_decay: float,
    layer_id: Callable[[str], int],
    num_layers: int,
    decay: Optional[float] = None,
) -> List[Dict]:
    """
    Construit les groupes de paramètres.

    Le groupe de profondeur i reçoit base_lr · decay^(num_layers − i); les embeddings
    de position ne subissent jamais de weight decay.

    Args:
        store: Paramètres du modèle.
        base_lr: Taux d'apprentissage de la tête.
        weight_decay: Weight decay des autres paramètres.
        layer_id: Profondeur d'un paramètre à partir de son nom.
        num_layers: Profondeur de la tête.
        decay: Facteur multiplicatif par niveau (None = pas de décroissance).
    """
    groups: Dict[tuple, Dict] = {}
    for name, param in store.named():
        depth = layer_id(name) if decay is not None else num_layers
        no_decay = NO_DECAY_MARKER in name
        key = (depth, no_decay)
        if key not in groups:
            scale = 1.0 if decay is None else decay ** (num_layers - depth)
            groups[key] = {
                "params": [],
                "names": [],
                "lr": base_lr * scale,
                "weight_decay": 0.0 if no_decay else weight_decay,
            }
        groups[key]["params"].append(param)
        groups[key]["names"].append(name)
    return [groups[key] for key in sorted(groups)]


def build_optimizer(
    store: ParamStore,
    cfg: OptimizerConfig,
    layer_id: Optional[Callable[[str], int]] = None,
    num_layers: int = 0,
) -> torch.optim.Optimizer:
    """
    Instancie l'optimiseur demandé sur les paramètres du magasin.

    Args:
        store: Paramètres du modèle.
        cfg: Configuration de l'optimiseur.
        layer_id: Profondeur d'un paramètre (requis si cfg.layer_decay est défini).
        num_layers: Profondeur maximale.
    """
    decay = cfg.layer_decay
    if decay is not None and layer_id is None:
        raise ValueError("layer_decay nécessite une fonction de profondeur")
    groups = layerwise_lr_groups(
        store, cfg.lr, cfg.weight_decay, layer_id or (lambda _: num_layers), num_layers, decay
    )
    for group in groups:
        logger.debug("groupe lr=%.2e wd=%.2e: %s", group["lr"], group["weight_decay"], group["names"])
    if cfg.kind == "sgd":
        return torch.optim.SGD(groups, lr=cfg.lr, momentum=cfg.momentum)
    return torch.optim.AdamW(groups, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)


def optim_step(store: ParamStore, optimizer: torch.optim.Optimizer) -> None:
    """
    Applique un pas d'optimisation.

    Lève StateError si aucun backward n'a eu lieu depuis le pas précédent.
    """
    store.consume()
    optimizer.step()
