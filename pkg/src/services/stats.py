import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

from src.domain.models.metrics import TrialMetrics
from src.domain.models.stats import AnovaResult, CoefficientRow, Design, MixedModelFit
from src.shared.errors import DataValidationError, InsufficientDataError, NumericalError, RankDeficiencyError
from src.shared.utils import predictor_names

logger = logging.getLogger(__name__)

Z_975 = 1.959964
BOUNDARY_RATIO = 1e-6
LOG_DIAGONAL_LIMIT = 20.0


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail of the F(d1, d2) distribution."""
    if d1 < 1 or d2 < 1:
        raise DataValidationError(f"F distribution needs d1 >= 1 and d2 >= 1, got {d1}, {d2}")
    if x < 0:
        raise DataValidationError(f"F statistic must be non-negative, got {x}")
    if math.isinf(x):
        return 0.0
    return float(np.clip(special.fdtrc(d1, d2, x), 0.0, 1.0))


def oneway_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way ANOVA F test across groups.

    With no within-group variance the statistic is reported as infinite
    (p = 0) when groups differ and as F = 0, p = 1 flagged 'undefined' when
    every value is identical.
    """
    arrays = [np.asarray(group, dtype=float) for group in groups]
    if len(arrays) < 2:
        raise InsufficientDataError(f"ANOVA needs at least 2 groups, got {len(arrays)}")
    if any(array.size == 0 for array in arrays):
        raise InsufficientDataError("ANOVA groups must not be empty")
    values = np.concatenate(arrays)
    k, n = len(arrays), values.size
    if n <= k:
        raise InsufficientDataError(f"ANOVA needs more observations ({n}) than groups ({k})")

    grand_mean = values.mean()
    ss_between = float(sum(array.size * (array.mean() - grand_mean) ** 2 for array in arrays))
    ss_within = float(sum(((array - array.mean()) ** 2).sum() for array in arrays))
    df_between, df_within = k - 1, n - k

    tiny = 1e-14 * max(float(((values - grand_mean) ** 2).sum()), float((values ** 2).sum()), np.finfo(float).tiny)
    if ss_within <= tiny:
        if ss_between <= tiny:
            logger.warning("ANOVA undefined: all values identical")
            return AnovaResult(f_stat=0.0, p_value=1.0, df_between=df_between, df_within=df_within, flag="undefined")
        logger.warning("ANOVA has zero within-group variance; F is infinite")
        return AnovaResult(
            f_stat=math.inf, p_value=0.0, df_between=df_between, df_within=df_within, flag="infinite_f"
        )

    f_stat = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(
        f_stat=f_stat,
        p_value=f_sf(f_stat, df_between, df_within),
        df_between=df_between,
        df_within=df_within,
    )


def _collinear_columns(X: np.ndarray, names: Sequence[str]) -> List[str]:
    """Columns that add no rank when appended left to right."""
    collinear = []
    kept: List[int] = []
    for index in range(X.shape[1]):
        candidate = kept + [index]
        if np.linalg.matrix_rank(X[:, candidate]) == len(candidate):
            kept = candidate
        else:
            collinear.append(names[index])
    return collinear


def build_design(
    rows: Sequence[TrialMetrics],
    drop_predictors: Sequence[str] = (),
    standardize: bool = False,
    random_effects: str = "intercept_slope",
    drop_degenerate: bool = True,
    check_rank: bool = True,
) -> Design:
    """Assemble y, X and Z for the mixed model.

    X holds an intercept and the predictors in reporting order, minus the
    drop-list; Z holds a random intercept and (by default) a random semester
    slope per participant. Rows without a score, with non-finite values or
    (optionally) with degenerate single-node networks are deleted listwise.
    """
    unknown = sorted(set(drop_predictors) - set(predictor_names()))
    if unknown:
        raise DataValidationError(f"Unknown predictors in drop-list: {unknown}")
    predictors = [name for name in predictor_names() if name not in set(drop_predictors)]

    deleted: List[str] = []
    kept: List[Tuple[TrialMetrics, List[float]]] = []
    for row in sorted(rows, key=lambda r: (*r.key.trial_id, r.key.ordered_index)):
        label = row.key.label
        if row.bfd is None:
            deleted.append(f"{label}: missing BFD score")
            continue
        if drop_degenerate and row.metrics.n_nodes < 2:
            deleted.append(f"{label}: degenerate network ({row.metrics.n_nodes} nodes)")
            continue
        values = row.metrics.values()
        features = [float(row.key.ordered_index) if name == "time" else values[name] for name in predictors]
        if not all(math.isfinite(v) for v in features + [row.bfd]):
            deleted.append(f"{label}: non-finite value")
            continue
        kept.append((row, features))
    if deleted:
        logger.info(f"Listwise deletion removed {len(deleted)} of {len(rows)} rows")
    if not kept:
        raise InsufficientDataError("No complete rows left for the mixed model")

    y = np.array([row.bfd for row, _ in kept], dtype=float)
    features = np.array([f for _, f in kept], dtype=float).reshape(len(kept), len(predictors))
    if standardize and features.size:
        sd = features.std(axis=0)
        centered = features - features.mean(axis=0)
        features = np.divide(centered, sd, out=centered, where=sd > 0)
    X = np.column_stack([np.ones(len(kept)), features])
    column_names = ["intercept"] + predictors

    semester = np.array([row.key.semester for row, _ in kept], dtype=float)
    if random_effects == "intercept_slope":
        Z, random_names = np.column_stack([np.ones(len(kept)), semester]), ["participant", "semester"]
    elif random_effects == "intercept":
        Z, random_names = np.ones((len(kept), 1)), ["participant"]
    else:
        Z, random_names = np.zeros((len(kept), 0)), []

    if check_rank:
        collinear = _collinear_columns(X, column_names)
        if collinear:
            raise RankDeficiencyError(collinear)

    return Design(
        y=y,
        X=X,
        Z=Z,
        groups=np.array([row.key.participant_id for row, _ in kept], dtype=object),
        column_names=column_names,
        random_names=random_names,
        deleted=deleted,
    )


class _RemlProblem:
    """Restricted likelihood of y = X b + Z u + e with u ~ N(0, G), e ~ N(0, s2 I), blocked by group.

    The residual variance s2 is profiled out; G = s2 * L L^T where L is
    lower triangular with log-parameterized diagonal.
    """

    def __init__(self, y: np.ndarray, X: np.ndarray, Z: np.ndarray, groups: np.ndarray):
        self.n, self.p = X.shape
        self.q = Z.shape[1]
        self.df = self.n - self.p
        if self.df < 1:
            raise InsufficientDataError(f"{self.n} observations cannot support {self.p} fixed effects")
        order = np.argsort(groups, kind="stable")
        labels = groups[order]
        boundaries = np.flatnonzero(labels[1:] != labels[:-1]) + 1
        self.blocks = [
            (y[index], X[index], Z[index])
            for index in np.split(order, boundaries)
        ]
        self.tril = np.tril_indices(self.q)

    def unpack(self, theta: np.ndarray) -> np.ndarray:
        L = np.zeros((self.q, self.q))
        L[self.tril] = theta
        diagonal = np.clip(np.diag(L), -LOG_DIAGONAL_LIMIT, LOG_DIAGONAL_LIMIT)
        L[np.diag_indices(self.q)] = np.exp(diagonal)
        return L

    def pack(self, L: np.ndarray) -> np.ndarray:
        packed = L.copy()
        packed[np.diag_indices(self.q)] = np.log(np.maximum(np.diag(L), np.exp(-LOG_DIAGONAL_LIMIT)))
        return packed[self.tril]

    def solve(self, psi: np.ndarray) -> Dict[str, object]:
        """GLS quantities at relative covariance psi = G / s2."""
        xtwx = np.zeros((self.p, self.p))
        xtwy = np.zeros(self.p)
        ytwy = 0.0
        logdet_w = 0.0
        cache = []
        for y_i, X_i, Z_i in self.blocks:
            W = np.eye(len(y_i)) + Z_i @ psi @ Z_i.T
            factor = linalg.cho_factor(W, lower=True)
            logdet_w += 2.0 * np.log(np.diag(factor[0])).sum()
            winv_x = linalg.cho_solve(factor, X_i)
            winv_y = linalg.cho_solve(factor, y_i)
            winv_z = linalg.cho_solve(factor, Z_i) if self.q else np.zeros((len(y_i), 0))
            xtwx += X_i.T @ winv_x
            xtwy += X_i.T @ winv_y
            ytwy += float(y_i @ winv_y)
            cache.append((y_i, X_i, Z_i, winv_x, winv_y, winv_z))
        xtwx_factor = linalg.cho_factor(xtwx, lower=True)
        beta = linalg.cho_solve(xtwx_factor, xtwy)
        rwr = max(ytwy - float(beta @ xtwy), np.finfo(float).tiny)
        logdet_xtwx = 2.0 * np.log(np.diag(xtwx_factor[0])).sum()
        return {
            "beta": beta,
            "sigma2": rwr / self.df,
            "rwr": rwr,
            "logdet_w": logdet_w,
            "logdet_xtwx": logdet_xtwx,
            "xtwx_factor": xtwx_factor,
            "cache": cache,
        }

    def profiled_loglik(self, psi: np.ndarray, state: Optional[Dict[str, object]] = None) -> float:
        state = state or self.solve(psi)
        return -0.5 * (
            self.df * math.log(2.0 * math.pi * state["sigma2"])
            + state["logdet_w"]
            + state["logdet_xtwx"]
            + self.df
        )

    def full_loglik(self, cov_re: np.ndarray, sigma2: float) -> float:
        """REML log-likelihood at an explicit (G, s2), not profiled."""
        state = self.solve(cov_re / sigma2)
        return -0.5 * (
            self.df * math.log(2.0 * math.pi)
            + (self.n - self.p) * math.log(sigma2)
            + state["logdet_w"]
            + state["logdet_xtwx"]
            + state["rwr"] / sigma2
        )

    def objective(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        """Negative profiled REML log-likelihood and its gradient in theta."""
        L = self.unpack(theta)
        psi = L @ L.T
        try:
            state = self.solve(psi)
        except np.linalg.LinAlgError:
            return math.inf, np.zeros_like(theta)
        loglik = self.profiled_loglik(psi, state)

        beta, sigma2 = state["beta"], state["sigma2"]
        xtwx_inv = linalg.cho_solve(state["xtwx_factor"], np.eye(self.p))
        D = np.zeros((self.q, self.q))
        for y_i, X_i, Z_i, winv_x, winv_y, winv_z in state["cache"]:
            winv_r = winv_y - winv_x @ beta
            ztwz = Z_i.T @ winv_z
            xtwz = X_i.T @ winv_z
            ztwr = Z_i.T @ winv_r
            D += ztwz - xtwz.T @ xtwx_inv @ xtwz - np.outer(ztwr, ztwr) / sigma2
        D *= -0.5
        grad_L = 2.0 * D @ L
        grad = grad_L[self.tril].copy()
        diagonal_positions = [position for position, (i, j) in enumerate(zip(*self.tril)) if i == j]
        for position in diagonal_positions:
            i = self.tril[0][position]
            grad[position] *= L[i, i]
        return -loglik, -grad


def _variance_standard_errors(problem: _RemlProblem, cov_re: np.ndarray, sigma2: float) -> Optional[np.ndarray]:
    """SEs of the lower-triangle entries of G from a finite-difference Hessian of the full REML likelihood."""
    q = problem.q
    tril = problem.tril
    params = np.concatenate([cov_re[tril], [sigma2]])

    def loglik(values: np.ndarray) -> float:
        G = np.zeros((q, q))
        G[tril] = values[:-1]
        G = G + np.tril(G, -1).T
        if values[-1] <= 0 or np.linalg.eigvalsh(G).min() < -1e-12:
            return math.nan
        return problem.full_loglik(G, values[-1])

    m = params.size
    steps = 1e-4 * np.maximum(np.abs(params), 1e-2)
    hessian = np.zeros((m, m))
    center = loglik(params)
    for i in range(m):
        for j in range(i, m):
            if i == j:
                up, down = params.copy(), params.copy()
                up[i] += steps[i]
                down[i] -= steps[i]
                hessian[i, i] = (loglik(up) - 2.0 * center + loglik(down)) / steps[i] ** 2
            else:
                corners = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    point = params.copy()
                    point[i] += si * steps[i]
                    point[j] += sj * steps[j]
                    corners.append(loglik(point))
                hessian[i, j] = hessian[j, i] = (
                    corners[0] - corners[1] - corners[2] + corners[3]
                ) / (4.0 * steps[i] * steps[j])
    if not np.isfinite(hessian).all():
        return None
    try:
        covariance = np.linalg.inv(-hessian)
    except np.linalg.LinAlgError:
        return None
    variances = np.diag(covariance)[:-1]
    return np.where(variances > 0, np.sqrt(np.abs(variances)), math.nan)


def reml_loglik(y: np.ndarray, X: np.ndarray, Z: np.ndarray, groups: np.ndarray, psi: np.ndarray) -> float:
    """Profiled REML log-likelihood at relative random-effects covariance psi = G / residual variance."""
    problem = _RemlProblem(np.asarray(y, float), np.asarray(X, float), np.asarray(Z, float), np.asarray(groups))
    return problem.profiled_loglik(np.asarray(psi, dtype=float))


def reml_fit(
    y: np.ndarray,
    X: np.ndarray,
    Z: np.ndarray,
    groups: np.ndarray,
    *,
    column_names: Optional[Sequence[str]] = None,
    random_names: Optional[Sequence[str]] = None,
    tol: float = 1e-8,
    max_iter: int = 500,
    fixed_psi: Optional[np.ndarray] = None,
) -> MixedModelFit:
    """Fit a linear mixed model by restricted maximum likelihood.

    The random-effects covariance is optimized with BFGS on the profiled
    REML criterion using its analytic gradient. `fixed_psi` skips the
    optimization and evaluates the model at G = psi * residual variance.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float).reshape(len(y), -1)
    groups = np.asarray(groups)
    column_names = list(column_names) if column_names is not None else [f"x{i}" for i in range(X.shape[1])]
    random_names = list(random_names) if random_names is not None else [f"z{i}" for i in range(Z.shape[1])]
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError(_collinear_columns(X, column_names))

    problem = _RemlProblem(y, X, Z, groups)
    q = problem.q
    iterations, grad_norm, converged = 0, 0.0, True

    if fixed_psi is not None:
        psi = np.asarray(fixed_psi, dtype=float).reshape(q, q)
    elif q == 0:
        psi = np.zeros((0, 0))
    else:
        result = optimize.minimize(
            problem.objective,
            np.zeros(q * (q + 1) // 2),
            jac=True,
            method="BFGS",
            options={"gtol": tol, "maxiter": max_iter},
        )
        L = problem.unpack(result.x)
        psi = L @ L.T
        iterations = int(result.nit)
        grad_norm = float(np.abs(result.jac).max())
        # Precision-loss exits close to the optimum still count as converged.
        converged = bool(result.success) or grad_norm <= max(tol, 1e-6) * max(1.0, abs(result.fun))
        if not converged:
            logger.warning(f"REML optimizer stopped without converging: {result.message}")

    try:
        state = problem.solve(psi)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Mixed-model covariance is not positive definite at the estimate: {exc}") from exc
    sigma2 = float(state["sigma2"])
    cov_re = sigma2 * psi
    cov_beta = sigma2 * linalg.cho_solve(state["xtwx_factor"], np.eye(problem.p))
    boundary = bool(q) and bool((np.diag(psi) < BOUNDARY_RATIO).any())
    if boundary:
        logger.warning("A random-effect variance is on the boundary (near zero)")
    cov_re_se = None
    if q and not boundary and fixed_psi is None:
        cov_re_se = _variance_standard_errors(problem, cov_re, sigma2)

    sizes = np.array([len(block[0]) for block in problem.blocks])
    fit = MixedModelFit(
        column_names=column_names,
        random_names=random_names,
        coefficients=state["beta"],
        std_errors=np.sqrt(np.maximum(np.diag(cov_beta), 0.0)),
        cov_re=cov_re,
        cov_re_std_errors=cov_re_se,
        residual_var=sigma2,
        reml_loglik=problem.profiled_loglik(psi, state),
        n_obs=problem.n,
        n_groups=len(problem.blocks),
        group_size_min=int(sizes.min()),
        group_size_mean=float(sizes.mean()),
        group_size_max=int(sizes.max()),
        converged=converged,
        boundary=boundary,
        iterations=iterations,
        grad_norm=grad_norm,
    )
    return fit.model_copy(update={"fixed_effects": wald_tests(fit)})


def fit_design(design: Design, tol: float = 1e-8, max_iter: int = 500) -> MixedModelFit:
    return reml_fit(
        design.y,
        design.X,
        design.Z,
        design.groups,
        column_names=design.column_names,
        random_names=design.random_names,
        tol=tol,
        max_iter=max_iter,
    )


def wald_tests(fit: MixedModelFit) -> List[CoefficientRow]:
    """Wald z tests and 95% confidence intervals for the fixed effects."""
    if not fit.converged:
        logger.warning("Wald tests on an unconverged fit")
    rows = []
    for name, coef, se in zip(fit.column_names, fit.coefficients, fit.std_errors):
        coef, se = float(coef), float(se)
        z = coef / se if se > 0 else (0.0 if coef == 0 else math.copysign(math.inf, coef))
        p_value = float(2.0 * special.ndtr(-abs(z)))
        rows.append(CoefficientRow(
            name=name,
            coef=coef,
            std_err=se,
            z=z,
            p_value=p_value,
            ci_low=coef - Z_975 * se,
            ci_high=coef + Z_975 * se,
        ))
    return rows
