"""
Modèles de données pour les grilles denses H×W×C et le découpage en fenêtres.
"""
from typing import Union

import numpy as np
import torch
from pydantic import BaseModel, Field, model_validator

from src.utils.errors import InvalidArgumentError


class Grid:
    """Grille dense H×W×C de flottants 32 bits, stockée ligne par ligne."""

    def __init__(self, data: Union[torch.Tensor, np.ndarray]):
        """
        Initialise la grille.

        Args:
            data: Tenseur (ou tableau numpy) de forme (hauteur, largeur, canaux).
        """
        if isinstance(data, np.ndarray):
            data = torch.from_numpy(np.ascontiguousarray(data))
        if data.dim() != 3:
            raise InvalidArgumentError(f"Une grille doit avoir 3 dimensions, reçu {tuple(data.shape)}")
        if data.numel() == 0:
            raise InvalidArgumentError(f"Grille vide: {tuple(data.shape)}")
        data = data.detach().to(torch.float32).contiguous()
        if not bool(torch.isfinite(data).all()):
            raise InvalidArgumentError("La grille contient des valeurs non finies (NaN/Inf)")
        self.data = data

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "Grid":
        return cls(torch.zeros(height, width, channels))

    @classmethod
    def full(cls, height: int, width: int, channels: int, value: float) -> "Grid":
        return cls(torch.full((height, width, channels), float(value)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return tuple(self.data.shape)

    def flat(self) -> torch.Tensor:
        """Vue aplatie (longueur hauteur·largeur·canaux)."""
        return self.data.reshape(-1)

    def to_numpy(self) -> np.ndarray:
        return self.data.numpy().copy()

    def equal(self, other: "Grid") -> bool:
        """Égalité bit à bit (mêmes dimensions, mêmes valeurs)."""
        return self.shape == other.shape and bool(torch.equal(self.data, other.data))

    def __add__(self, other: "Grid") -> "Grid":
        if self.shape != other.shape:
            raise InvalidArgumentError(f"Addition impossible: {self.shape} vs {other.shape}")
        return Grid(self.data + other.data)

    def __sub__(self, other: "Grid") -> "Grid":
        if self.shape != other.shape:
            raise InvalidArgumentError(f"Soustraction impossible: {self.shape} vs {other.shape}")
        return Grid(self.data - other.data)

    def __mul__(self, scalar: float) -> "Grid":
        return Grid(self.data * float(scalar))

    def __repr__(self) -> str:
        return f"Grid({self.height}x{self.width}x{self.channels})"


class WindowLayout(BaseModel):
    """Découpage d'une grille en fenêtres carrées, avec remplissage en bas et à droite."""
    window_size: int = Field(..., ge=1, description="Nombre de tokens par côté de fenêtre")
    grid_height: int = Field(..., ge=1, description="Hauteur de la grille complète")
    grid_width: int = Field(..., ge=1, description="Largeur de la grille complète")
    pad_bottom: int = Field(0, ge=0, description="Tokens ajoutés en bas")
    pad_right: int = Field(0, ge=0, description="Tokens ajoutés à droite")

    @model_validator(mode="after")
    def _check_padding(self) -> "WindowLayout":
        w = self.window_size
        if self.pad_bottom >= w or self.pad_right >= w:
            raise ValueError(f"Remplissage ({self.pad_bottom}, {self.pad_right}) hors de [0, {w})")
        if (self.grid_height + self.pad_bottom) % w or (self.grid_width + self.pad_right) % w:
            raise ValueError("La grille remplie doit être un multiple de la taille de fenêtre")
        return self

    @classmethod
    def for_grid(cls, grid_height: int, grid_width: int, window_size: int) -> "WindowLayout":
        """Construit le découpage canonique pour une grille donnée."""
        return cls(
            window_size=window_size,
            grid_height=grid_height,
            grid_width=grid_width,
            pad_bottom=(-grid_height) % window_size,
            pad_right=(-grid_width) % window_size,
        )

    @property
    def padded_height(self) -> int:
        return self.grid_height + self.pad_bottom

    @property
    def padded_width(self) -> int:
        return self.grid_width + self.pad_right

    @property
    def windows_per_column(self) -> int:
        return self.padded_height // self.window_size

    @property
    def windows_per_row(self) -> int:
        return self.padded_width // self.window_size

    @property
    def num_windows(self) -> int:
        return self.windows_per_column * self.windows_per_row
