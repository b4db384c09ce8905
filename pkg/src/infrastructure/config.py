import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from src.domain.models.network import PiSource
from src.shared.errors import ConfigurationError
from src.shared.utils import default_cluster_metrics, metric_names, predictor_names

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240601
K_RANGE = (2, 10)
MAX_JOBS = 32


def get_log_level() -> str:
    return os.getenv("LOG_LEVEL", "INFO").upper()


def gcloud_logging_enabled() -> bool:
    return os.getenv("ENABLE_GCLOUD_LOGGING", "0") == "1"


def get_default_jobs() -> int:
    """Return worker count from GAZENET_JOBS, defaulting to 1 and clamped to 1..32."""
    try:
        value = int(os.getenv("GAZENET_JOBS", "1"))
    except ValueError:
        value = 1
    return clamp_jobs(value)


def clamp_jobs(value: int) -> int:
    if value < 1:
        return 1
    if value > MAX_JOBS:
        return MAX_JOBS
    return value


class GraphSettings(BaseModel):
    keep_self_loops: bool = Field(False, description="Keep consecutive same-AOI fixations as self-loops")
    pi_source: PiSource = Field(PiSource.COUNTS, description="Node weighting used for the stationary distribution")


class MetricSettings(BaseModel):
    pagerank_damping: float = Field(0.85, gt=0.0, lt=1.0)
    pagerank_tol: float = Field(1e-10, gt=0.0)
    pagerank_max_iter: int = Field(200, ge=1)
    eigenvector_tol: float = Field(1e-10, gt=0.0)
    eigenvector_max_iter: int = Field(1000, ge=1)
    eigenvector_fallback: bool = Field(
        True, description="Report the last eigenvector iterate (flagged) instead of failing on non-convergence"
    )
    connectivity: Literal["undirected", "directed"] = "undirected"


class ClusterSettings(BaseModel):
    k: Union[Literal["auto"], int] = Field("auto", description="Fixed cluster count or 'auto' for silhouette selection")
    k_candidates: List[int] = Field(default_factory=lambda: [2, 3])
    restarts: int = Field(10, ge=1)
    max_iter: int = Field(50, ge=1)
    dba_max_iter: int = Field(30, ge=1)
    dba_tol: float = Field(1e-6, gt=0.0)
    band: Optional[int] = Field(None, ge=0, description="Sakoe-Chiba band half-width; unconstrained when unset")
    normalize: Literal["zscore", "minmax"] = "zscore"
    min_silhouette: float = Field(0.5, ge=-1.0, le=1.0)
    seed: Optional[int] = Field(None, description="Clustering seed; falls back to the pipeline seed")
    metrics: List[str] = Field(default_factory=default_cluster_metrics)

    @field_validator("k")
    @classmethod
    def validate_k(cls, value):
        if isinstance(value, int) and not K_RANGE[0] <= value <= K_RANGE[1]:
            raise ValueError(f"k must lie in {K_RANGE[0]}..{K_RANGE[1]} or be 'auto', got {value}")
        return value

    @field_validator("k_candidates")
    @classmethod
    def validate_candidates(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("k_candidates must not be empty")
        outside = [k for k in value if not K_RANGE[0] <= k <= K_RANGE[1]]
        if outside:
            raise ValueError(f"k_candidates outside {K_RANGE[0]}..{K_RANGE[1]}: {outside}")
        return sorted(set(value))

    @field_validator("metrics")
    @classmethod
    def validate_metrics(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(metric_names()))
        if unknown:
            raise ValueError(f"Unknown metrics: {unknown}. Known: {metric_names()}")
        return value

    def candidates(self) -> List[int]:
        return self.k_candidates if self.k == "auto" else [int(self.k)]


class AnovaSettings(BaseModel):
    unit: Literal["trial", "participant"] = Field(
        "trial", description="Observation unit for BFD: every scored trial, or one mean per participant"
    )
    alpha: float = Field(0.05, gt=0.0, lt=1.0)


class LmmSettings(BaseModel):
    # avg_degree equals 2 * density on distinct-pair graphs, so one of the pair must go.
    drop_predictors: List[str] = Field(default_factory=lambda: ["density"])
    standardize: bool = False
    drop_degenerate: bool = Field(True, description="Exclude trials whose network has fewer than two nodes")
    random_effects: Literal["intercept_slope", "intercept", "none"] = "intercept_slope"
    tol: float = Field(1e-8, gt=0.0)
    max_iter: int = Field(500, ge=1)

    @field_validator("drop_predictors")
    @classmethod
    def validate_drop_predictors(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(predictor_names()))
        if unknown:
            raise ValueError(f"Unknown predictors in drop-list: {unknown}. Known: {predictor_names()}")
        return sorted(set(value), key=predictor_names().index)


class SynthSettings(BaseModel):
    participants: int = Field(20, ge=1)
    semesters: List[int] = Field(default_factory=lambda: [6, 7])
    sessions_per_semester: int = Field(3, ge=1)
    opts_per_session: int = Field(10, ge=1)
    aoi_range: Tuple[int, int] = (4, 8)
    steps_range: Tuple[int, int] = (30, 60)
    fast_fraction: float = Field(0.5, ge=0.0, le=1.0)
    expert_fidelity: float = Field(0.9, gt=0.0, le=1.0)
    score_noise_sd: float = Field(0.05, ge=0.0)
    missing_outcome_rate: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_ranges(self):
        low, high = self.aoi_range
        if low < 2 or high < low:
            raise ValueError(f"aoi_range must satisfy 2 <= low <= high, got {self.aoi_range}")
        low, high = self.steps_range
        if low < 1 or high < low:
            raise ValueError(f"steps_range must satisfy 1 <= low <= high, got {self.steps_range}")
        if not self.semesters or any(s < 1 for s in self.semesters):
            raise ValueError(f"semesters must be positive integers, got {self.semesters}")
        return self


class PipelineConfig(BaseSettings):
    """Complete run configuration.

    Source priority: explicit overrides (CLI flags) > TOML config file >
    GAZENET_* environment variables (nested with '__') > defaults.
    """
    model_config = SettingsConfigDict(env_prefix="GAZENET_", env_nested_delimiter="__", extra="ignore")

    fixations: Optional[Path] = None
    outcomes: Optional[Path] = None
    out_dir: Path = Path("gazenet-out")
    seed: int = DEFAULT_SEED
    jobs: int = Field(default_factory=get_default_jobs)
    delimiter: str = Field(",", min_length=1, max_length=1)
    export_networks: bool = False
    excel_report: bool = False

    graph: GraphSettings = Field(default_factory=GraphSettings)
    metrics: MetricSettings = Field(default_factory=MetricSettings)
    clustering: ClusterSettings = Field(default_factory=ClusterSettings)
    anova: AnovaSettings = Field(default_factory=AnovaSettings)
    lmm: LmmSettings = Field(default_factory=LmmSettings)
    synth: SynthSettings = Field(default_factory=SynthSettings)

    @field_validator("jobs")
    @classmethod
    def validate_jobs(cls, value: int) -> int:
        return clamp_jobs(value)

    @property
    def cluster_seed(self) -> int:
        return self.clustering.seed if self.clustering.seed is not None else self.seed


def _deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged: Dict[str, Any] = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(config_file: Path) -> Dict[str, Any]:
    path = Path(config_file)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        return dict(TomlConfigSettingsSource(PipelineConfig, toml_file=path)())
    except ValueError as exc:
        raise ConfigurationError(f"Cannot read config file {path}: {exc}") from exc


def load_config(config_file: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> PipelineConfig:
    """Build the run configuration, layering overrides on top of the config file and environment."""
    values: Dict[str, Any] = read_config_file(config_file) if config_file is not None else {}
    values = _deep_merge(values, overrides or {})
    try:
        config = PipelineConfig(**values)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid configuration: {exc}") from exc
    logger.debug(f"Loaded configuration: {config.model_dump_json()}")
    return config
