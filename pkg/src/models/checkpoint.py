"""
Modèles de données du manifeste de checkpoint.
"""
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from src.models.config import ModelSpec

CHECKPOINT_VERSION = 1


class TensorEntry(BaseModel):
    """Position d'un tenseur nommé dans la section plate du checkpoint."""
    name: str = Field(..., description="Nom du paramètre (state_dict)")
    shape: List[int] = Field(..., description="Forme du tenseur")
    offset: int = Field(..., ge=0, description="Décalage en octets dans la section des tenseurs")


class CheckpointManifest(BaseModel):
    """En-tête JSON d'un checkpoint."""
    format_version: int = Field(CHECKPOINT_VERSION, description="Version du format")
    spec: ModelSpec = Field(..., description="Architecture du modèle")
    seed: int = Field(..., description="Graine de l'expérience")
    config_hash: str = Field("", description="Empreinte de la configuration")
    task: str = Field("posprobe", description="Tâche d'entraînement")
    step: int = Field(0, ge=0, description="Nombre de pas effectués")
    tensors: List[TensorEntry] = Field(default_factory=list)
    metrics: Dict[str, float] = Field(default_factory=dict)
    parent: Optional[str] = Field(None, description="Empreinte du checkpoint d'origine (finetune)")
