import math
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class GroupSummary(BaseModel):
    cluster_id: int
    size: int = Field(..., ge=0, description="Observations entering the ANOVA")
    participants: int = Field(0, ge=0)
    bfd_mean: Optional[float] = None
    metric_mean: Optional[float] = Field(None, description="Mean of the normalized metric over the cluster's trials")


class AnovaResult(BaseModel):
    metric: Optional[str] = None
    groups: List[GroupSummary] = Field(default_factory=list)
    f_stat: float = Field(..., ge=0.0)
    p_value: float = Field(..., ge=0.0, le=1.0)
    df_between: int = Field(..., ge=1)
    df_within: int = Field(..., ge=1)
    flag: Optional[str] = Field(None, description="'infinite_f' or 'undefined' when within-group variance vanishes")


class CoefficientRow(BaseModel):
    name: str
    coef: float
    std_err: float
    z: float
    p_value: float
    ci_low: float
    ci_high: float


class Design(BaseModel):
    """Response, fixed-effect and random-effect matrices with a grouping per row."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    groups: np.ndarray
    column_names: List[str]
    random_names: List[str]
    deleted: List[str] = Field(default_factory=list, description="Listwise deletion report")

    @model_validator(mode="after")
    def validate_shapes(self):
        n = self.y.shape[0]
        if self.X.shape != (n, len(self.column_names)):
            raise ValueError(f"X shape {self.X.shape} does not match {n} rows and {len(self.column_names)} columns")
        if self.Z.shape != (n, len(self.random_names)):
            raise ValueError(f"Z shape {self.Z.shape} does not match {n} rows and {len(self.random_names)} columns")
        if self.groups.shape != (n,):
            raise ValueError(f"Grouping has {self.groups.shape[0]} entries for {n} rows")
        return self


class MixedModelFit(BaseModel):
    """REML fit of a linear mixed model with per-participant random effects."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    column_names: List[str]
    random_names: List[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    cov_re: np.ndarray = Field(..., description="Random-effects covariance G (absolute units)")
    cov_re_std_errors: Optional[np.ndarray] = Field(None, description="SEs of the lower-triangle entries of G")
    residual_var: float = Field(..., gt=0.0)
    reml_loglik: float
    n_obs: int
    n_groups: int
    group_size_min: int
    group_size_mean: float
    group_size_max: int
    converged: bool
    boundary: bool = False
    iterations: int = 0
    grad_norm: float = 0.0
    fixed_effects: List[CoefficientRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_components(self):
        eigenvalues = np.linalg.eigvalsh(self.cov_re) if self.cov_re.size else np.zeros(0)
        scale = max(1.0, float(np.abs(self.cov_re).max())) if self.cov_re.size else 1.0
        if eigenvalues.size and eigenvalues.min() < -1e-10 * scale:
            raise ValueError(f"Random-effects covariance is not positive semi-definite: eigenvalues {eigenvalues}")
        return self

    @property
    def scale(self) -> float:
        return self.residual_var

    @property
    def participant_var(self) -> float:
        return float(self.cov_re[0, 0]) if self.cov_re.size else 0.0

    @property
    def semester_var(self) -> float:
        return float(self.cov_re[1, 1]) if self.cov_re.shape[0] > 1 else 0.0

    @property
    def participant_semester_cov(self) -> float:
        return float(self.cov_re[1, 0]) if self.cov_re.shape[0] > 1 else 0.0

    def variance_rows(self) -> List[tuple]:
        """(name, estimate, standard error) for each lower-triangle entry of G."""
        names = {(0, 0): "participant_var", (1, 0): "participant_semester_cov", (1, 1): "semester_var"}
        rows = []
        position = 0
        q = self.cov_re.shape[0]
        for i in range(q):
            for j in range(i + 1):
                se = float(self.cov_re_std_errors[position]) if self.cov_re_std_errors is not None else math.nan
                rows.append((names.get((i, j), f"cov_{i}_{j}"), float(self.cov_re[i, j]), se))
                position += 1
        return rows

    def summary_report(self) -> List[str]:
        lines = [
            "Mixed Linear Model Regression Results (REML)",
            f"No. Observations: {self.n_obs}    No. Groups: {self.n_groups}",
            f"Min. group size: {self.group_size_min}    Max. group size: {self.group_size_max}    "
            f"Mean group size: {self.group_size_mean:.1f}",
            f"Log-Likelihood: {self.reml_loglik:.4f}    Scale: {self.residual_var:.4f}",
            f"Converged: {'Yes' if self.converged else 'No'}    Iterations: {self.iterations}    "
            f"Gradient norm: {self.grad_norm:.3g}",
            "",
            f"{'':<34}{'Coef.':>9}{'Std.Err.':>10}{'z':>9}{'P>|z|':>8}{'[0.025':>9}{'0.975]':>9}",
        ]
        for row in self.fixed_effects:
            lines.append(
                f"{row.name:<34}{row.coef:>9.3f}{row.std_err:>10.3f}{row.z:>9.3f}{row.p_value:>8.3f}"
                f"{row.ci_low:>9.3f}{row.ci_high:>9.3f}"
            )
        for name, estimate, se in self.variance_rows():
            lines.append(f"{name:<34}{estimate:>9.3f}{se:>10.3f}")
        if self.boundary:
            lines.append("WARNING: a variance component is on the boundary of the parameter space")
        if not self.converged:
            lines.append("WARNING: optimizer did not converge")
        return lines
