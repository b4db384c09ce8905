from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .fixations import TrialKey

Edge = Tuple[str, str]


class CollapsePolicy(str, Enum):
    MERGE = "merge"
    KEEP = "keep"


class PiSource(str, Enum):
    COUNTS = "counts"
    DURATIONS = "durations"


class NodeWeight(BaseModel):
    model_config = ConfigDict(frozen=True)

    fixation_count: int = Field(..., ge=1, description="Fixations on the AOI in the original sequence")
    duration_ms: int = Field(0, ge=0, description="Summed fixation duration; 0 when durations were not supplied")


class GazeNetwork(BaseModel):
    """Directed multigraph of AOI transitions for one trial."""
    model_config = ConfigDict(frozen=True)

    nodes: Dict[str, NodeWeight]
    edges: Dict[Edge, int] = Field(default_factory=dict, description="Transition multiplicity per ordered AOI pair")
    trial: Optional[TrialKey] = None
    collapse_policy: CollapsePolicy = CollapsePolicy.MERGE

    @model_validator(mode="after")
    def validate_edges(self):
        for (source, target), multiplicity in self.edges.items():
            if source not in self.nodes or target not in self.nodes:
                raise ValueError(f"Edge {source}->{target} references an AOI that is not a node")
            if multiplicity < 1:
                raise ValueError(f"Edge {source}->{target} has multiplicity {multiplicity}, expected >= 1")
            if self.collapse_policy == CollapsePolicy.MERGE and source == target:
                raise ValueError(f"Self-loop on {source} in a network built with merged repeats")
        return self

    @property
    def aois(self) -> List[str]:
        return sorted(self.nodes)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def transition_count(self) -> int:
        return sum(self.edges.values())

    @property
    def distinct_pairs(self) -> List[Edge]:
        """Distinct ordered AOI pairs, self-loops excluded, sorted."""
        return sorted(edge for edge in self.edges if edge[0] != edge[1])


class TransitionModel(BaseModel):
    """Row-stochastic transition matrix and stationary distribution over a network's AOIs."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    aois: Tuple[str, ...]
    transitions: np.ndarray = Field(..., description="Row-stochastic matrix; sink rows are all zero")
    pi: np.ndarray = Field(..., description="Empirical stationary distribution over AOIs")
    sinks: Tuple[bool, ...]

    @model_validator(mode="after")
    def validate_shapes(self):
        n = len(self.aois)
        if self.transitions.shape != (n, n):
            raise ValueError(f"Transition matrix shape {self.transitions.shape} does not match {n} AOIs")
        if self.pi.shape != (n,) or len(self.sinks) != n:
            raise ValueError(f"Stationary distribution or sink flags do not match {n} AOIs")
        row_sums = self.transitions.sum(axis=1)
        for index, (row_sum, sink) in enumerate(zip(row_sums, self.sinks)):
            expected = 0.0 if sink else 1.0
            if abs(row_sum - expected) > 1e-12:
                raise ValueError(f"Row {self.aois[index]} sums to {row_sum}, expected {expected}")
        if n and abs(self.pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"Stationary distribution sums to {self.pi.sum()}, expected 1")
        return self


class NodeLinkNode(BaseModel):
    id: str
    fixation_count: int
    duration_ms: int


class NodeLinkLink(BaseModel):
    source: str
    target: str
    count: int = Field(..., ge=1, description="Transition multiplicity of the ordered pair")


class NodeLinkDocument(BaseModel):
    """Node-link JSON form of a GazeNetwork with lexicographically sorted nodes and links."""
    directed: bool = True
    multigraph: bool = True
    collapse_policy: CollapsePolicy
    trial: Optional[TrialKey] = None
    nodes: List[NodeLinkNode]
    links: List[NodeLinkLink]
