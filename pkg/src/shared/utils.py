import json
from functools import lru_cache
from importlib import resources
from typing import Any, Dict, List


@lru_cache(maxsize=None)
def read_metric_catalog() -> Dict[str, Any]:
    """Read the packaged metric catalog (names, table labels, predictor order)."""
    with resources.files("src.infrastructure.resources").joinpath("metric_catalog.json").open(
        "r", encoding="utf-8"
    ) as file:
        return json.load(file)


def metric_names() -> List[str]:
    """All per-trial metric names in MetricVector field order."""
    return [entry["name"] for entry in read_metric_catalog()["metrics"]]


def default_cluster_metrics() -> List[str]:
    """Metrics clustered by default (eigenvector centrality is excluded)."""
    return [entry["name"] for entry in read_metric_catalog()["metrics"] if entry["cluster"]]


def metric_table_labels() -> Dict[str, str]:
    return {entry["name"]: entry["table_label"] for entry in read_metric_catalog()["metrics"]}


def predictor_names() -> List[str]:
    """Fixed-effect predictors in reporting order, without the intercept."""
    return [entry["name"] for entry in read_metric_catalog()["predictors"]]


def predictor_labels() -> Dict[str, str]:
    labels = {"intercept": "Intercept"}
    labels.update({entry["name"]: entry["label"] for entry in read_metric_catalog()["predictors"]})
    return labels


def random_effect_labels() -> Dict[str, str]:
    return {entry["name"]: entry["label"] for entry in read_metric_catalog()["random_effects"]}


def format_p_value(p_value: float, alpha: float = 0.05, digits: int = 3) -> str:
    """Format a p-value with a trailing star when it is significant at alpha."""
    if p_value != p_value:
        return "na"
    text = f"{p_value:.{digits}f}"
    return f"{text}*" if p_value < alpha else text


def format_number(value: Any, digits: int) -> str:
    if value is None or value != value:
        return "na"
    return f"{value:.{digits}f}"
