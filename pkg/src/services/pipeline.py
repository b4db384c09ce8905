import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from src.domain.models.clustering import (
    ClusteringResult,
    ClusteringSkip,
    ClusterSummary,
    ClusterSummaryEntry,
    MetricSeries,
    NormalizationStats,
)
from src.domain.models.fixations import Trial, TrialId, TrialKey
from src.domain.models.metrics import MetricVector, TrialMetrics
from src.domain.models.stats import AnovaResult, GroupSummary, MixedModelFit
from src.infrastructure.config import ClusterSettings, PipelineConfig
from src.infrastructure.exporters.tables import SCHEMA_VERSION, count_comment_lines, read_table
from src.services import ingest, stats, tsc
from src.services.graph import build_trial_network, to_node_link
from src.services.metrics import compute_trial_metrics
from src.shared.errors import DataValidationError, InsufficientDataError, SchemaError
from src.shared.utils import (
    format_number,
    format_p_value,
    metric_names,
    metric_table_labels,
    predictor_labels,
    random_effect_labels,
    read_metric_catalog,
)

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["participant_id", "semester", "session_index", "opt_index", "ordered_index"]
ItemT = TypeVar("ItemT")
ResultT = TypeVar("ResultT")


def _map(worker: Callable[[ItemT], ResultT], items: Sequence[ItemT], jobs: int) -> List[ResultT]:
    """Apply worker in input order, in a process pool when jobs > 1."""
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
            return list(pool.map(worker, items, chunksize=max(1, len(items) // (4 * jobs))))
    return [worker(item) for item in items]


# Metrics


def load_trials(config: PipelineConfig) -> Tuple[List[Trial], List[str]]:
    if config.fixations is None:
        raise DataValidationError("No fixations file given (--fixations)")
    fixations = ingest.parse_fixation_log(config.fixations, config.delimiter)
    outcomes = ingest.parse_outcome_log(config.outcomes, config.delimiter) if config.outcomes else []
    trials, warnings = ingest.build_trials(fixations, outcomes)
    if not trials:
        raise InsufficientDataError(f"No trials in {config.fixations}")
    return list(trials.values()), warnings


def compute_metrics_table(trials: Sequence[Trial], config: PipelineConfig) -> List[TrialMetrics]:
    worker = partial(compute_trial_metrics, graph_settings=config.graph, metric_settings=config.metrics)
    rows = _map(worker, list(trials), config.jobs)
    degenerate = sum(1 for row in rows if row.metrics.degenerate)
    logger.info(f"Computed metrics for {len(rows)} trials ({degenerate} with degenerate flags)")
    return rows


def metrics_frame(rows: Iterable[TrialMetrics]) -> pd.DataFrame:
    records = []
    for row in rows:
        record = {column: getattr(row.key, column) for column in KEY_COLUMNS}
        vector = row.metrics
        record.update({name: getattr(vector, name) for name in metric_names()})
        record["bfd_normalized"] = row.bfd
        record["degenerate"] = ";".join(vector.degenerate)
        records.append(record)
    return pd.DataFrame(records, columns=KEY_COLUMNS + metric_names() + ["bfd_normalized", "degenerate"])


def read_metrics_table(path: Path) -> List[TrialMetrics]:
    frame = read_table(path)
    if frame.empty:
        raise InsufficientDataError(f"No rows in {path}")
    for column in KEY_COLUMNS + metric_names():
        if column not in frame.columns:
            raise SchemaError(str(path), column)
    first_line = count_comment_lines(path) + 2
    rows = []
    for offset, record in enumerate(frame.to_dict(orient="records")):
        try:
            key = TrialKey(**{column: record[column] for column in KEY_COLUMNS})
            flags = tuple(flag for flag in record.get("degenerate", "").split(";") if flag)
            vector = MetricVector(trial=key, degenerate=flags, **{name: record[name] for name in metric_names()})
            score = record.get("bfd_normalized", "")
            rows.append(TrialMetrics(key=key, metrics=vector, bfd=float(score) if score else None))
        except (ValidationError, ValueError) as exc:
            line = first_line + offset
            raise DataValidationError(f"{path}:{line}: invalid metrics row: {exc}", line=line) from exc
    return rows


def apply_outcomes(rows: Sequence[TrialMetrics], outcomes_path: Optional[Path], delimiter: str = ",") -> List[TrialMetrics]:
    """Replace the scores stored with the metrics by those of an outcome file."""
    if outcomes_path is None:
        return list(rows)
    scores: Dict[TrialId, float] = {
        outcome.trial_id: ingest.normalize_bfd(outcome)
        for outcome in ingest.parse_outcome_log(outcomes_path, delimiter)
    }
    return [row.model_copy(update={"bfd": scores.get(row.key.trial_id)}) for row in rows]


def network_exports(trials: Sequence[Trial], config: PipelineConfig) -> Dict[str, str]:
    """Node-link JSON per trial keyed by relative file name."""
    return {
        f"networks/{trial.key.label}.json": to_node_link(
            build_trial_network(trial, keep_self_loops=config.graph.keep_self_loops)
        )
        for trial in trials
    }


# Clustering


class ClusterRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    results: List[ClusteringResult]
    skipped: List[ClusteringSkip]
    normalization: Dict[str, NormalizationStats]
    series: Dict[str, List[MetricSeries]]


def metric_series(rows: Iterable[TrialMetrics], metric: str) -> List[MetricSeries]:
    pairs: Dict[str, List[Tuple[int, float]]] = {}
    for row in rows:
        pairs.setdefault(row.key.participant_id, []).append((row.key.ordered_index, row.metrics.values()[metric]))
    return tsc.series_by_participant(pairs, metric)


def _cluster_metric(
    item: Tuple[str, List[MetricSeries]], settings: ClusterSettings, seed: int
) -> Tuple[str, Optional[ClusteringResult], Optional[str]]:
    metric, series = item
    try:
        result = tsc.select_k(
            series,
            settings.candidates(),
            min_silhouette=settings.min_silhouette,
            restarts=settings.restarts,
            max_iter=settings.max_iter,
            seed=seed,
            band=settings.band,
            dba_max_iter=settings.dba_max_iter,
            dba_tol=settings.dba_tol,
        )
    except InsufficientDataError as exc:
        return metric, None, str(exc)
    return metric, result, None


def cluster_metrics(rows: Sequence[TrialMetrics], config: PipelineConfig) -> ClusterRun:
    settings = config.clustering
    normalized: Dict[str, List[MetricSeries]] = {}
    normalization: Dict[str, NormalizationStats] = {}
    for metric in settings.metrics:
        normalized[metric], normalization[metric] = tsc.normalize_corpus(metric_series(rows, metric), settings.normalize)

    worker = partial(_cluster_metric, settings=settings, seed=config.cluster_seed)
    outcomes = _map(worker, list(normalized.items()), config.jobs)
    results, skipped = [], []
    for metric, result, reason in outcomes:
        if result is None:
            logger.warning(f"Metric {metric} not clustered: {reason}")
            skipped.append(ClusteringSkip(metric=metric, reason=reason))
        else:
            for line in result.summary_report():
                logger.info(line)
            results.append(result)
    return ClusterRun(results=results, skipped=skipped, normalization=normalization, series=normalized)


def clusters_frame(run: ClusterRun) -> pd.DataFrame:
    records = [
        {
            "metric": result.metric,
            "participant_id": participant_id,
            "cluster_id": cluster_id,
            "silhouette_sample": result.silhouette_samples.get(participant_id, 0.0),
        }
        for result in run.results
        for participant_id, cluster_id in sorted(result.assignments.items())
    ]
    return pd.DataFrame(records, columns=["metric", "participant_id", "cluster_id", "silhouette_sample"])


def centroids_frame(run: ClusterRun) -> pd.DataFrame:
    records = [
        {"metric": result.metric, "cluster_id": cluster_id, "position_index": position, "value": value}
        for result in run.results
        for cluster_id, centroid in enumerate(result.centroids)
        for position, value in enumerate(centroid)
    ]
    return pd.DataFrame(records, columns=["metric", "cluster_id", "position_index", "value"])


def trajectories_frame(run: ClusterRun) -> pd.DataFrame:
    """Normalized member series next to their cluster, for plotting."""
    records = []
    for result in run.results:
        for series in run.series[result.metric]:
            cluster_id = result.assignments.get(series.participant_id)
            for position, value in enumerate(series.values):
                records.append({
                    "metric": result.metric,
                    "participant_id": series.participant_id,
                    "cluster_id": "" if cluster_id is None else cluster_id,
                    "position_index": position,
                    "value": value,
                })
    return pd.DataFrame(records, columns=["metric", "participant_id", "cluster_id", "position_index", "value"])


def cluster_summary(run: ClusterRun, config: PipelineConfig) -> ClusterSummary:
    return ClusterSummary(
        schema_version=SCHEMA_VERSION,
        seed=config.cluster_seed,
        restarts=config.clustering.restarts,
        k_candidates=config.clustering.candidates(),
        results=[
            ClusterSummaryEntry(
                metric=result.metric,
                k=result.k,
                silhouette=result.silhouette,
                low_confidence=result.low_confidence,
                degenerate=result.degenerate,
                inertia=result.inertia,
                iterations=result.iterations,
                participants=len(result.assignments),
                unclustered=result.unclustered,
                normalization=run.normalization[result.metric],
            )
            for result in run.results
        ],
        skipped=run.skipped,
    )


def read_clusters_table(path: Path) -> Dict[str, Dict[str, int]]:
    frame = read_table(path)
    if frame.empty:
        raise InsufficientDataError(f"No cluster assignments in {path}")
    for column in ("metric", "participant_id", "cluster_id"):
        if column not in frame.columns:
            raise SchemaError(str(path), column)
    assignments: Dict[str, Dict[str, int]] = {}
    for metric, participant_id, cluster_id in frame[["metric", "participant_id", "cluster_id"]].itertuples(
        index=False, name=None
    ):
        assignments.setdefault(metric, {})[participant_id] = int(cluster_id)
    return assignments


# ANOVA


def _ordered_metrics(metrics: Iterable[str]) -> List[str]:
    order = read_metric_catalog()["table_order"]
    present = set(metrics)
    return [m for m in order if m in present] + sorted(present - set(order))


def anova_for_metric(
    rows: Sequence[TrialMetrics],
    metric: str,
    assignments: Dict[str, int],
    config: PipelineConfig,
) -> Tuple[List[GroupSummary], Optional[AnovaResult]]:
    """Per-cluster summaries and the one-way ANOVA of BFD across clusters (None when not testable)."""
    series = metric_series(rows, metric)
    scaled, _ = tsc.normalize_corpus(series, config.clustering.normalize)
    normalized = {s.participant_id: s.values for s in scaled}
    by_participant: Dict[str, List[TrialMetrics]] = {}
    for row in rows:
        by_participant.setdefault(row.key.participant_id, []).append(row)

    k = max(assignments.values()) + 1
    groups: List[GroupSummary] = []
    observations: List[List[float]] = []
    for cluster_id in range(k):
        members = sorted(pid for pid, label in assignments.items() if label == cluster_id and pid in by_participant)
        metric_values = [v for pid in members for v in normalized.get(pid, ())]
        if config.anova.unit == "trial":
            scores = [row.bfd for pid in members for row in by_participant[pid] if row.bfd is not None]
        else:
            scores = []
            for pid in members:
                participant_scores = [row.bfd for row in by_participant[pid] if row.bfd is not None]
                if participant_scores:
                    scores.append(float(np.mean(participant_scores)))
        groups.append(GroupSummary(
            cluster_id=cluster_id,
            size=len(scores),
            participants=len(members),
            bfd_mean=float(np.mean(scores)) if scores else None,
            metric_mean=float(np.mean(metric_values)) if metric_values else None,
        ))
        if scores:
            observations.append(scores)

    try:
        result = stats.oneway_anova(observations)
    except InsufficientDataError as exc:
        logger.warning(f"ANOVA for {metric} not testable: {exc}")
        return groups, None
    return groups, result.model_copy(update={"metric": metric, "groups": groups})


def run_anova(
    rows: Sequence[TrialMetrics], assignments: Dict[str, Dict[str, int]], config: PipelineConfig
) -> List[Tuple[str, List[GroupSummary], Optional[AnovaResult]]]:
    results = []
    for metric in _ordered_metrics(assignments):
        groups, result = anova_for_metric(rows, metric, assignments[metric], config)
        if result is not None:
            logger.info(
                f"ANOVA {metric}: F({result.df_between}, {result.df_within}) = {result.f_stat:.3f}, "
                f"p = {result.p_value:.3f}"
            )
        results.append((metric, groups, result))
    return results


def anova_frame(results: Sequence[Tuple[str, List[GroupSummary], Optional[AnovaResult]]], alpha: float = 0.05) -> pd.DataFrame:
    width = max([3] + [len(groups) for _, groups, _ in results])
    labels = metric_table_labels()
    columns = (
        ["Metric"]
        + [f"N-Mean-{i}" for i in range(1, width + 1)]
        + [f"BFD-{i}" for i in range(1, width + 1)]
        + ["f-stat", "p-stat"]
    )
    records = []
    for metric, groups, result in results:
        record = {"Metric": labels.get(metric, metric)}
        for i in range(width):
            group = groups[i] if i < len(groups) else None
            record[f"N-Mean-{i + 1}"] = format_number(group.metric_mean if group else None, 4)
            record[f"BFD-{i + 1}"] = format_number(group.bfd_mean if group else None, 3)
        record["f-stat"] = format_number(result.f_stat if result else None, 3)
        record["p-stat"] = format_p_value(result.p_value, alpha) if result else "na"
        records.append(record)
    return pd.DataFrame(records, columns=columns)


# Mixed model


def run_lmm(rows: Sequence[TrialMetrics], config: PipelineConfig) -> Tuple[MixedModelFit, List[str]]:
    settings = config.lmm
    if settings.drop_predictors:
        logger.info(f"Dropping predictors: {', '.join(settings.drop_predictors)}")
    design = stats.build_design(
        rows,
        drop_predictors=settings.drop_predictors,
        standardize=settings.standardize,
        random_effects=settings.random_effects,
        drop_degenerate=settings.drop_degenerate,
    )
    fit = stats.fit_design(design, tol=settings.tol, max_iter=settings.max_iter)
    for line in fit.summary_report():
        logger.info(line)
    return fit, design.deleted


def lmm_frame(fit: MixedModelFit) -> pd.DataFrame:
    labels = predictor_labels()
    columns = ["Predictor", "Coef.", "Std.Err.", "z", "P>|z|", "[0.025", "0.975]"]
    records = [
        {
            "Predictor": labels.get(row.name, row.name),
            "Coef.": format_number(row.coef, 3),
            "Std.Err.": format_number(row.std_err, 3),
            "z": format_number(row.z, 3),
            "P>|z|": format_p_value(row.p_value),
            "[0.025": format_number(row.ci_low, 3),
            "0.975]": format_number(row.ci_high, 3),
        }
        for row in fit.fixed_effects
    ]
    variance_labels = random_effect_labels()
    for name, estimate, se in fit.variance_rows():
        records.append({
            "Predictor": variance_labels.get(name, name),
            "Coef.": format_number(estimate, 3),
            "Std.Err.": format_number(se, 3),
        })
    records.append({"Predictor": "Scale", "Coef.": format_number(fit.residual_var, 4)})
    records.append({"Predictor": "REML Log-Likelihood", "Coef.": format_number(fit.reml_loglik, 4)})
    return pd.DataFrame(records, columns=columns).fillna("")


def lmm_summary_text(fit: MixedModelFit, deleted: Sequence[str], dropped: Sequence[str] = ()) -> str:
    lines = list(fit.summary_report())
    if dropped:
        labels = predictor_labels()
        lines += ["", "Excluded predictors (drop-list): " + ", ".join(labels.get(name, name) for name in dropped)]
    if deleted:
        lines += ["", f"Listwise deletion ({len(deleted)} rows):"] + [f"  {entry}" for entry in deleted]
    return "\n".join(lines) + "\n"
