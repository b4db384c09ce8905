from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .fixations import FixationRecord, TrialOutcome

STOCHASTIC_TOLERANCE = 1e-12


class ScanpathGenerator(BaseModel):
    """First-order Markov chain over AOIs used to synthesize scanpaths."""
    model_config = ConfigDict(frozen=True)

    aois: Tuple[str, ...]
    transitions: Tuple[Tuple[float, ...], ...]
    initial: Optional[Tuple[float, ...]] = Field(None, description="Initial distribution; uniform when unset")
    steps: int = Field(..., ge=1)
    seed: int

    @model_validator(mode="after")
    def validate_chain(self):
        n = len(self.aois)
        if n == 0:
            raise ValueError("Generator needs at least one AOI")
        matrix = np.asarray(self.transitions, dtype=float)
        if matrix.shape != (n, n):
            raise ValueError(f"Transition matrix shape {matrix.shape} does not match {n} AOIs")
        if (matrix < 0).any():
            raise ValueError("Transition probabilities must be non-negative")
        sums = matrix.sum(axis=1)
        if np.abs(sums - 1.0).max() > STOCHASTIC_TOLERANCE:
            raise ValueError(f"Transition rows must sum to 1, got {sums.tolist()}")
        if self.initial is not None:
            initial = np.asarray(self.initial, dtype=float)
            if initial.shape != (n,) or (initial < 0).any() or abs(initial.sum() - 1.0) > STOCHASTIC_TOLERANCE:
                raise ValueError("Initial distribution must be a probability vector over the AOIs")
        return self

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.transitions, dtype=float)


class TruthRow(BaseModel):
    """Generating parameters of one synthetic trial."""
    participant_id: str
    semester: int
    session_index: int
    opt_index: int
    ordered_index: int
    group: str
    expertise: float
    aoi_count: int
    analytic_transition_entropy: float
    expected_bfd: float


class SyntheticCohort(BaseModel):
    fixations: List[FixationRecord]
    outcomes: List[TrialOutcome]
    truth: List[TruthRow]
