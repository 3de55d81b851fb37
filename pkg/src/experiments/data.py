"""
Jeux de données synthétiques.

- PosProbeDataset: un marqueur identique placé à une position aléatoire; l'étiquette est
  la région r×r qui le contient, donc la tâche n'est soluble qu'avec l'information de position.
- SmoothFieldDataset: champs basse fréquence bruités, pour la reconstruction MAE.
"""
import math
from typing import Iterator, List, Tuple

import torch

from src.utils.errors import InvalidArgumentError
from src.utils.seeding import make_generator

TRAIN_FRACTION = 0.8


def region_of(row: int, col: int, grid: int, regions: int) -> int:
    """Indice ligne par ligne de la région r×r contenant le token (row, col)."""
    return (row * regions // grid) * regions + (col * regions // grid)


def marker_pattern(channels: int) -> torch.Tensor:
    """Motif fixe du marqueur: +1/−1 alternés sur les canaux."""
    return torch.tensor([1.0 if c % 2 == 0 else -1.0 for c in range(channels)])


class _SplitMixin:
    images: torch.Tensor

    def __len__(self) -> int:
        return self.images.shape[0]

    def split(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Découpage 80/20 déterministe par indice d'échantillon."""
        cut = int(len(self) * TRAIN_FRACTION)
        indices = torch.arange(len(self))
        return indices[:cut], indices[cut:]

    def sample_batch(self, indices: torch.Tensor, batch_size: int, generator: torch.Generator) -> torch.Tensor:
        return indices[torch.randint(len(indices), (batch_size,), generator=generator)]

    def iter_batches(self, indices: torch.Tensor, batch_size: int) -> Iterator[torch.Tensor]:
        for start in range(0, len(indices), batch_size):
            yield indices[start : start + batch_size]


class PosProbeDataset(_SplitMixin):
    """Classification de la région du marqueur."""

    def __init__(
        self,
        num_samples: int,
        grid: int,
        channels: int,
        patch_size: int = 1,
        regions: int = 2,
        noise_std: float = 0.1,
        seed: int = 0,
    ):
        """
        Génère les échantillons.

        Args:
            num_samples: Nombre d'images.
            grid: Tokens par côté.
            channels: Canaux d'entrée.
            patch_size: Pixels par côté de patch (le marqueur couvre un patch).
            regions: Régions par côté; K = regions² classes.
            noise_std: Écart-type du bruit de fond.
            seed: Graine du générateur.
        """
        if regions < 1 or regions > grid:
            raise InvalidArgumentError(f"regions={regions} doit être dans [1, {grid}]")
        self.grid = grid
        self.regions = regions
        self.num_classes = regions * regions
        generator = make_generator(seed)

        positions: List[List[Tuple[int, int]]] = [[] for _ in range(self.num_classes)]
        for row in range(grid):
            for col in range(grid):
                positions[region_of(row, col, grid, regions)].append((row, col))

        labels = torch.arange(num_samples) % self.num_classes
        labels = labels[torch.randperm(num_samples, generator=generator)]
        side = grid * patch_size
        images = torch.randn(num_samples, side, side, channels, generator=generator) * noise_std
        marker = marker_pattern(channels)
        for i, label in enumerate(labels.tolist()):
            choices = positions[label]
            row, col = choices[int(torch.randint(len(choices), (1,), generator=generator))]
            images[i, row * patch_size : (row + 1) * patch_size, col * patch_size : (col + 1) * patch_size] = marker
        self.images = images
        self.labels = labels


class SmoothFieldDataset(_SplitMixin):
    """Somme de quelques sinusoïdes 2D basse fréquence par canal, plus un bruit faible."""

    def __init__(
        self,
        num_samples: int,
        grid: int,
        channels: int,
        patch_size: int = 1,
        noise_std: float = 0.1,
        components: int = 3,
        max_frequency: float = 2.0,
        seed: int = 0,
    ):
        generator = make_generator(seed)
        side = grid * patch_size
        coords = torch.arange(side, dtype=torch.float32) / side
        ys, xs = torch.meshgrid(coords, coords, indexing="ij")
        shape = (num_samples, 1, 1, channels, components)
        fy = torch.rand(shape, generator=generator) * max_frequency
        fx = torch.rand(shape, generator=generator) * max_frequency
        phase = torch.rand(shape, generator=generator) * 2 * math.pi
        angle = 2 * math.pi * (fy * ys[None, :, :, None, None] + fx * xs[None, :, :, None, None]) + phase
        fields = torch.sin(angle).mean(dim=-1)
        noise = torch.randn(num_samples, side, side, channels, generator=generator) * noise_std
        self.grid = grid
        self.images = fields + noise
