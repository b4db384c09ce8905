import math
from typing import Dict, List, Literal, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Scaling = Literal["raw", "zscore", "minmax", "passthrough"]


class MetricSeries(BaseModel):
    """One participant's per-trial values of one metric, in ordered-trial order."""
    model_config = ConfigDict(frozen=True)

    participant_id: str
    metric: str
    values: Tuple[float, ...]
    scaling: Scaling = "raw"

    @field_validator("values")
    @classmethod
    def validate_values(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not math.isfinite(v) for v in value):
            raise ValueError("Series values must be finite")
        return value

    @property
    def eligible(self) -> bool:
        """Series shorter than two trials are not clustered."""
        return len(self.values) >= 2


class NormalizationStats(BaseModel):
    metric: str
    mode: Literal["zscore", "minmax"]
    count: int
    mean: float
    sd: float
    minimum: float
    maximum: float

    @property
    def flat(self) -> bool:
        spread = self.sd if self.mode == "zscore" else self.maximum - self.minimum
        return not spread > 0.0


class Barycenter(BaseModel):
    values: Tuple[float, ...]
    inertia: float = Field(..., ge=0.0, description="Summed squared DTW distance from the members")
    iterations: int = Field(..., ge=0)


class ClusteringResult(BaseModel):
    """Outcome of DTW k-means for one metric."""

    metric: str
    k: int = Field(..., ge=2)
    assignments: Dict[str, int] = Field(..., description="Participant id -> cluster id")
    centroids: List[Tuple[float, ...]]
    inertia: float = Field(..., ge=0.0)
    inertia_history: List[float] = Field(default_factory=list)
    silhouette: float = Field(..., ge=-1.0, le=1.0)
    silhouette_samples: Dict[str, float] = Field(default_factory=dict)
    seed: int
    restarts: int
    iterations: int
    low_confidence: bool = False
    degenerate: bool = Field(False, description="All pairwise DTW distances were zero")
    unclustered: List[str] = Field(default_factory=list, description="Participants with fewer than two trials")

    @model_validator(mode="after")
    def validate_clusters(self):
        if len(self.centroids) != self.k:
            raise ValueError(f"Expected {self.k} centroids for metric {self.metric}, got {len(self.centroids)}")
        used = set(self.assignments.values())
        if not used <= set(range(self.k)):
            raise ValueError(f"Cluster ids {sorted(used)} outside 0..{self.k - 1}")
        if len(used) != self.k:
            empty = sorted(set(range(self.k)) - used)
            raise ValueError(f"Clusters {empty} of metric {self.metric} have no members")
        return self

    def members(self, cluster_id: int) -> List[str]:
        return sorted(pid for pid, label in self.assignments.items() if label == cluster_id)

    def summary_report(self) -> List[str]:
        lines = [
            f"Metric: {self.metric}",
            f"  k={self.k} silhouette={self.silhouette:.4f} inertia={self.inertia:.6g} "
            f"iterations={self.iterations} seed={self.seed} restarts={self.restarts}",
        ]
        for cluster_id in range(self.k):
            lines.append(f"  cluster {cluster_id + 1}: {len(self.members(cluster_id))} participants")
        if self.low_confidence:
            lines.append("  WARNING: low-confidence clustering (silhouette below threshold)")
        if self.degenerate:
            lines.append("  WARNING: all series identical under DTW")
        if self.unclustered:
            lines.append(f"  unclustered (fewer than 2 trials): {', '.join(self.unclustered)}")
        return lines


class ClusteringSkip(BaseModel):
    """Metric that could not be clustered, with the reason."""
    metric: str
    reason: str


class ClusterSummaryEntry(BaseModel):
    metric: str
    k: int
    silhouette: float
    low_confidence: bool
    degenerate: bool
    inertia: float
    iterations: int
    participants: int
    unclustered: List[str]
    normalization: NormalizationStats


class ClusterSummary(BaseModel):
    """Contents of cluster_summary.json."""
    schema_version: int
    seed: int
    restarts: int
    k_candidates: List[int]
    results: List[ClusterSummaryEntry] = Field(default_factory=list)
    skipped: List[ClusteringSkip] = Field(default_factory=list)
