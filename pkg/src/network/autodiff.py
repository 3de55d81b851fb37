"""
Dérivation automatique en mode inverse: bande d'enregistrement (Tape) au-dessus
d'autograd, magasin de paramètres nommés et vérification par différences finies.
"""
import logging
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn

from src.utils.errors import StateError

logger = logging.getLogger(__name__)


class ParamStore:
    """Paramètres nommés d'un module, avec tampons de gradient de même forme et compteur de pas."""

    def __init__(self, module: nn.Module):
        """
        Initialise le magasin.

        Args:
            module: Module dont les paramètres sont suivis.
        """
        self.module = module
        self.step_count = 0
        self._fresh = False
        self.zero_grad()

    def named(self) -> Iterator[Tuple[str, nn.Parameter]]:
        return ((name, p) for name, p in self.module.named_parameters() if p.requires_grad)

    def names(self) -> List[str]:
        return [name for name, _ in self.named()]

    def get(self, name: str) -> nn.Parameter:
        return dict(self.module.named_parameters())[name]

    def grad(self, name: str) -> torch.Tensor:
        return self.get(name).grad

    def zero_grad(self) -> None:
        """Remet tous les gradients à zéro (en les créant au besoin)."""
        for _, p in self.named():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
            else:
                p.grad.detach_()
                p.grad.zero_()
        self._fresh = False

    @property
    def has_fresh_gradients(self) -> bool:
        return self._fresh

    def mark_fresh(self) -> None:
        for _, p in self.named():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
        self._fresh = True

    def consume(self) -> None:
        """Valide qu'un backward a eu lieu depuis le dernier pas, puis invalide les gradients."""
        if not self._fresh:
            raise StateError("Gradients périmés: optim_step appelé sans backward préalable")
        self._fresh = False
        self.step_count += 1

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {name: p.detach().clone() for name, p in self.named()}


class Tape:
    """
    Enregistre les sorties d'un passage avant pour un unique passage arrière.

    Le graphe est celui d'autograd, qui visite chaque nœud une seule fois à rebours.
    """

    def __init__(self):
        self._outputs: List[torch.Tensor] = []
        self._consumed = False

    def record(self, tensor: torch.Tensor) -> torch.Tensor:
        self._outputs.append(tensor)
        return tensor

    @property
    def recorded(self) -> bool:
        return bool(self._outputs)

    def produced(self, loss: torch.Tensor) -> bool:
        """Indique si `loss` dérive, dans le graphe d'autograd, d'une des sorties enregistrées."""
        if any(loss is out for out in self._outputs):
            return True
        targets = {out.grad_fn for out in self._outputs if out.grad_fn is not None}
        pending, seen = [loss.grad_fn], set()
        while pending:
            node = pending.pop()
            if node is None or node in seen:
                continue
            if node in targets:
                return True
            seen.add(node)
            pending.extend(child for child, _ in node.next_functions)
        return False

    def consume(self) -> None:
        if self._consumed:
            raise StateError("Cette bande a déjà servi à un passage arrière")
        self._consumed = True


def backward(tape: Tape, loss: torch.Tensor, store: ParamStore) -> None:
    """
    Remplit les gradients de tous les paramètres à partir d'une perte scalaire.

    Args:
        tape: Bande du passage avant.
        loss: Perte scalaire calculée pendant ce passage.
        store: Magasin recevant les gradients.
    """
    if not tape.recorded:
        raise StateError("backward appelé sans passage avant enregistré")
    if loss.dim() != 0:
        raise StateError(f"La perte doit être scalaire, forme {tuple(loss.shape)}")
    if not loss.requires_grad or not tape.produced(loss):
        raise StateError("La perte ne provient pas du passage avant enregistré")
    tape.consume()
    store.zero_grad()
    loss.backward()
    store.mark_fresh()


def parameter_group(name: str) -> str:
    """Groupe d'un paramètre: 'stages.0.attn.qkv.weight' -> 'stages.0'."""
    parts = name.split(".")
    if len(parts) > 1 and parts[1].isdigit():
        return ".".join(parts[:2])
    return parts[0]


def finite_difference_check(
    store: ParamStore,
    loss_fn: Callable[[], torch.Tensor],
    eps: float = 1e-4,
    max_entries: Optional[int] = 16,
    generator: Optional[torch.Generator] = None,
) -> Dict[str, float]:
    """
    Compare les gradients analytiques aux différences finies centrées.

    À utiliser sur un modèle converti en float64.

    Args:
        store: Paramètres du modèle.
        loss_fn: Fonction recalculant la perte scalaire.
        eps: Pas des différences finies.
        max_entries: Nombre maximal de coordonnées testées par paramètre (None = toutes).
        generator: Générateur pour le tirage des coordonnées.

    Returns:
        Erreur relative par groupe de paramètres.
    """
    tape = Tape()
    loss = tape.record(loss_fn())
    backward(tape, loss, store)

    analytic: Dict[str, List[float]] = {}
    numeric: Dict[str, List[float]] = {}
    with torch.no_grad():
        for name, param in store.named():
            flat = param.view(-1)
            grad = param.grad.view(-1)
            count = flat.numel()
            if max_entries is not None and count > max_entries:
                entries = torch.randperm(count, generator=generator)[:max_entries].tolist()
            else:
                entries = range(count)
            group = parameter_group(name)
            for i in entries:
                original = flat[i].item()
                flat[i] = original + eps
                plus = loss_fn().item()
                flat[i] = original - eps
                minus = loss_fn().item()
                flat[i] = original
                numeric.setdefault(group, []).append((plus - minus) / (2 * eps))
                analytic.setdefault(group, []).append(grad[i].item())

    errors = {}
    for group in analytic:
        a = torch.tensor(analytic[group], dtype=torch.float64)
        n = torch.tensor(numeric[group], dtype=torch.float64)
        scale = max(float(a.norm()), float(n.norm()))
        errors[group] = 0.0 if scale < 1e-10 else float((a - n).norm()) / scale
        logger.debug("groupe %s: erreur relative %.3e", group, errors[group])
    return errors
