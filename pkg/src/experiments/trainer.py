"""
Boucle d'entraînement commune (classification de position et reconstruction MAE).
"""
import logging
from typing import Callable, List, Optional, Union

import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from tqdm import tqdm

from src.models.config import ModelSpec, OptimizerConfig
from src.experiments.data import PosProbeDataset, SmoothFieldDataset
from src.network.autodiff import ParamStore, Tape, backward
from src.network.hiera_lite import HieraLite, forward_classify, forward_mae, random_window_mask
from src.network.optim import build_optimizer, optim_step
from src.utils.logging_setup import progress_disabled

logger = logging.getLogger(__name__)

Dataset = Union[PosProbeDataset, SmoothFieldDataset]
StepHook = Callable[..., None]


class TrainResult(BaseModel):
    """Résumé d'un entraînement."""
    steps: int = Field(0, ge=0)
    losses: List[float] = Field(default_factory=list)
    train_accuracy: Optional[float] = None
    eval_accuracy: Optional[float] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def classification_loss(
    spec: ModelSpec, model: HieraLite, images: torch.Tensor, labels: torch.Tensor, tape: Optional[Tape] = None
) -> torch.Tensor:
    """Entropie croisée softmax."""
    return F.cross_entropy(forward_classify(spec, model, images, tape=tape), labels)


def mae_loss(
    spec: ModelSpec,
    model: HieraLite,
    images: torch.Tensor,
    generator: torch.Generator,
    tape: Optional[Tape] = None,
) -> torch.Tensor:
    units = (spec.input_grid // spec.window_size) ** 2
    mask = random_window_mask(images.shape[0], units, spec.mask_ratio, generator)
    return forward_mae(spec, model, images, mask, tape=tape)


def evaluate(spec: ModelSpec, model: HieraLite, dataset: PosProbeDataset, indices: torch.Tensor, batch_size: int = 64) -> float:
    """Précision de classification sur les indices donnés."""
    if len(indices) == 0:
        return 0.0
    correct = 0
    with torch.no_grad():
        for batch in dataset.iter_batches(indices, batch_size):
            logits = forward_classify(spec, model, dataset.images[batch])
            correct += int((logits.argmax(dim=-1) == dataset.labels[batch]).sum())
    return correct / len(indices)


def train(
    spec: ModelSpec,
    model: HieraLite,
    dataset: Dataset,
    steps: int,
    optimizer_config: OptimizerConfig,
    batch_size: int,
    generator: torch.Generator,
    hook: Optional[StepHook] = None,
    desc: str = "train",
) -> TrainResult:
    """
    Entraîne le modèle sur `steps` pas d'optimisation.

    La tâche suit spec.head: 'classify' (entropie croisée) ou 'mae'.

    Args:
        spec: Architecture à la résolution d'entraînement.
        model: Modèle entraîné sur place.
        dataset: Données (PosProbeDataset pour la classification).
        steps: Nombre de pas.
        optimizer_config: Optimiseur et taux d'apprentissage.
        batch_size: Taille de lot.
        generator: Générateur des lots et des masques.
        hook: Appelé comme hook(step, model, final=...) au pas 0 puis après chaque pas.
        desc: Libellé de la barre de progression.
    """
    store = ParamStore(model)
    optimizer = build_optimizer(store, optimizer_config, model.layer_id, model.num_layers)
    train_idx, eval_idx = dataset.split()
    result = TrainResult()

    if hook is not None:
        hook(0, model, final=steps == 0)
    model.train()
    for step in tqdm(range(1, steps + 1), desc=desc, disable=progress_disabled()):
        batch = dataset.sample_batch(train_idx, batch_size, generator)
        images = dataset.images[batch]
        tape = Tape()
        if spec.head == "mae":
            loss = mae_loss(spec, model, images, generator, tape)
        else:
            loss = classification_loss(spec, model, images, dataset.labels[batch], tape)
        backward(tape, loss, store)
        optim_step(store, optimizer)
        result.losses.append(float(loss.detach()))
        if hook is not None:
            hook(step, model, final=step == steps)
    model.eval()

    result.steps = steps
    if spec.head == "classify":
        result.train_accuracy = evaluate(spec, model, dataset, train_idx)
        result.eval_accuracy = evaluate(spec, model, dataset, eval_idx)
        logger.info(
            "%s: %d pas, précision train %.3f, éval %.3f", desc, steps, result.train_accuracy, result.eval_accuracy
        )
    else:
        logger.info("%s: %d pas, perte finale %s", desc, steps, result.final_loss)
    return result
