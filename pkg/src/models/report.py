"""
Rapports produits par l'analyse: courbes de similarité et mesures de latence.
"""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from src.utils.errors import InvalidArgumentError

DEFAULT_SCOPE = "full-embedding@stage1-grid"


class SimilarityReport(BaseModel):
    """Série (pas, similarité de fenêtres) d'un entraînement."""
    run_id: str = Field(..., description="Identifiant de l'exécution")
    embed_mode: str = Field(..., description="Mode d'embedding")
    task: Literal["mae", "supervised"] = Field(..., description="Nature de l'entraînement")
    seed: int = Field(0, description="Graine")
    scope: str = Field(DEFAULT_SCOPE, description="Portion de l'embedding mesurée")
    series: List[Tuple[int, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_series(self) -> "SimilarityReport":
        steps = [step for step, _ in self.series]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("Les pas doivent être strictement croissants")
        if any(not -1.0 <= value <= 1.0 for _, value in self.series):
            raise ValueError("Les similarités doivent être dans [-1, 1]")
        return self

    def record(self, step: int, value: float) -> None:
        if self.series and step <= self.series[-1][0]:
            raise InvalidArgumentError(f"Pas {step} non croissant (dernier: {self.series[-1][0]})")
        if not -1.0 <= value <= 1.0:
            raise InvalidArgumentError(f"Similarité {value} hors de [-1, 1]")
        self.series.append((step, float(value)))

    @property
    def initial(self) -> Optional[float]:
        return self.series[0][1] if self.series else None

    @property
    def final(self) -> Optional[float]:
        return self.series[-1][1] if self.series else None


class CommandResult(BaseModel):
    """Bilan d'une commande: dossier de sortie et métriques finales."""
    command: str
    seed: int
    output_dir: str
    metrics: Dict[str, float] = Field(default_factory=dict)

    def summary_line(self) -> str:
        values = " ".join(f"{key}={self.metrics[key]:.6g}" for key in sorted(self.metrics))
        return f"{self.command} seed={self.seed} {values}".rstrip()


class LatencyStats(BaseModel):
    """Temps d'un passage avant d'attention, après élimination du premier quart des itérations."""
    config_id: str
    grid_side: int
    window_size: Optional[int] = None
    relpos: bool = False
    mean_ms: float
    median_ms: float
    p95_ms: float
    samples: int = Field(..., ge=1)


class LatencyComparison(BaseModel):
    """Comparaison de deux configurations sur la même grille."""
    a: LatencyStats
    b: LatencyStats

    @property
    def ratio(self) -> float:
        """Médiane de a divisée par la médiane de b (> 1: a plus lent)."""
        return self.a.median_ms / self.b.median_ms
