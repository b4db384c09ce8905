import math
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .fixations import TrialKey


class MetricVector(BaseModel):
    """Per-trial network metric suite.

    `degenerate` lists the metrics whose value was defined by convention
    (too few nodes or edges) or that were taken from an unconverged iterate.
    """
    model_config = ConfigDict(frozen=True)

    trial: Optional[TrialKey] = None
    n_nodes: int = Field(..., ge=0)
    n_edges: int = Field(..., ge=0)
    avg_degree: float = Field(..., ge=0.0)
    avg_betweenness: float = Field(..., ge=0.0)
    avg_closeness: float = Field(..., ge=0.0)
    avg_pagerank: float = Field(..., ge=0.0)
    avg_eigenvector: float = Field(..., ge=0.0)
    density: float = Field(..., ge=0.0, le=1.0)
    reciprocity: float = Field(..., ge=0.0, le=1.0)
    node_connectivity: int = Field(..., ge=0)
    stationary_entropy: float = Field(..., ge=0.0)
    transition_entropy: float = Field(..., ge=0.0)
    degenerate: Tuple[str, ...] = ()

    @field_validator(
        "avg_degree", "avg_betweenness", "avg_closeness", "avg_pagerank", "avg_eigenvector",
        "density", "reciprocity", "stationary_entropy", "transition_entropy",
    )
    @classmethod
    def validate_finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError(f"Metric value must be finite, got {value}")
        return value

    def values(self) -> Dict[str, float]:
        """Metric values keyed by name, in catalog order."""
        return {
            "n_nodes": float(self.n_nodes),
            "n_edges": float(self.n_edges),
            "avg_degree": self.avg_degree,
            "avg_betweenness": self.avg_betweenness,
            "avg_closeness": self.avg_closeness,
            "avg_pagerank": self.avg_pagerank,
            "avg_eigenvector": self.avg_eigenvector,
            "density": self.density,
            "reciprocity": self.reciprocity,
            "node_connectivity": float(self.node_connectivity),
            "stationary_entropy": self.stationary_entropy,
            "transition_entropy": self.transition_entropy,
        }


class TrialMetrics(BaseModel):
    """Metric vector joined with the trial's score, one row of metrics.csv."""
    model_config = ConfigDict(frozen=True)

    key: TrialKey
    metrics: MetricVector
    bfd: Optional[float] = None
