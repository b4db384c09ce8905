from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

# Tolerance for comparing a provided normalized score against found/total.
SCORE_TOLERANCE = 1e-9

TrialId = Tuple[str, int, int, int]


class FixationRecord(BaseModel):
    """One AOI-labelled fixation within a trial."""
    model_config = ConfigDict(frozen=True)

    participant_id: str = Field(..., min_length=1, description="Opaque participant identifier")
    semester: int = Field(..., ge=1, description="Study semester")
    session_index: int = Field(..., ge=0, description="Session within the semester")
    opt_index: int = Field(..., ge=0, description="Image (OPT) index within the session")
    fixation_index: int = Field(..., ge=0, description="Ordinal of the fixation within the trial")
    aoi_id: str = Field(..., min_length=1, description="Area-of-interest label")
    start_ms: int = Field(..., ge=0)
    duration_ms: int = Field(..., gt=0)

    @property
    def trial_id(self) -> TrialId:
        return (self.participant_id, self.semester, self.session_index, self.opt_index)


class TrialOutcome(BaseModel):
    """Anomaly-detection (BFD) score for one trial.

    Either the raw counts or the normalized score must be present; when both
    are given they have to agree.
    """
    model_config = ConfigDict(frozen=True)

    participant_id: str = Field(..., min_length=1)
    semester: int = Field(..., ge=1)
    session_index: int = Field(..., ge=0)
    opt_index: int = Field(..., ge=0)
    anomalies_found: Optional[int] = Field(None, ge=0)
    anomalies_total: Optional[int] = Field(None, gt=0)
    bfd_normalized: Optional[float] = Field(None, allow_inf_nan=False)

    @property
    def trial_id(self) -> TrialId:
        return (self.participant_id, self.semester, self.session_index, self.opt_index)

    @model_validator(mode="after")
    def validate_score(self):
        has_counts = self.anomalies_found is not None and self.anomalies_total is not None
        if not has_counts and self.bfd_normalized is None:
            raise ValueError(
                f"Outcome for trial {self.trial_id} needs anomalies_found and anomalies_total "
                f"or bfd_normalized"
            )
        if has_counts and self.anomalies_found > self.anomalies_total:
            raise ValueError(
                f"anomalies_found ({self.anomalies_found}) exceeds anomalies_total "
                f"({self.anomalies_total}) for trial {self.trial_id}"
            )
        if has_counts and self.bfd_normalized is not None:
            expected = self.anomalies_found / self.anomalies_total
            if abs(expected - self.bfd_normalized) > SCORE_TOLERANCE:
                raise ValueError(
                    f"bfd_normalized {self.bfd_normalized} disagrees with "
                    f"{self.anomalies_found}/{self.anomalies_total} for trial {self.trial_id}"
                )
        return self


class TrialKey(BaseModel):
    """Identifies a trial and its position in the participant's trial order."""
    model_config = ConfigDict(frozen=True)

    participant_id: str
    semester: int
    session_index: int
    opt_index: int
    ordered_index: int = Field(..., ge=0, description="Rank of the trial within the participant's sorted trials")

    @property
    def trial_id(self) -> TrialId:
        return (self.participant_id, self.semester, self.session_index, self.opt_index)

    @property
    def label(self) -> str:
        return f"{self.participant_id}_{self.semester}_{self.session_index}_{self.opt_index}"


class Trial(BaseModel):
    model_config = ConfigDict(frozen=True)

    key: TrialKey
    aois: Tuple[str, ...] = Field(..., description="AOI sequence in fixation order")
    durations_ms: Tuple[int, ...]
    bfd: Optional[float] = Field(None, description="Normalized BFD score, missing when no outcome matched")

    @model_validator(mode="after")
    def validate_lengths(self):
        if len(self.aois) != len(self.durations_ms):
            raise ValueError(
                f"Trial {self.key.label}: {len(self.aois)} AOIs but {len(self.durations_ms)} durations"
            )
        return self
