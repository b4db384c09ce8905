import argparse
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import pandas as pd

from src.infrastructure.config import LmmSettings, PipelineConfig, load_config
from src.infrastructure.exporters.excel import export_report_workbook
from src.infrastructure.exporters.tables import read_table, staged_output, write_table, write_text
from src.services import ingest, pipeline
from src.services.synth import synthesize_cohort
from src.shared.errors import InsufficientDataError
from src.shared.utils import predictor_names

logger = logging.getLogger(__name__)

# argparse dest -> location in PipelineConfig
OVERRIDES: Dict[str, Tuple[str, ...]] = {
    "fixations": ("fixations",),
    "outcomes": ("outcomes",),
    "out_dir": ("out_dir",),
    "seed": ("seed",),
    "jobs": ("jobs",),
    "delimiter": ("delimiter",),
    "export_networks": ("export_networks",),
    "excel_report": ("excel_report",),
    "keep_self_loops": ("graph", "keep_self_loops"),
    "pi_source": ("graph", "pi_source"),
    "connectivity": ("metrics", "connectivity"),
    "k": ("clustering", "k"),
    "normalize": ("clustering", "normalize"),
    "band": ("clustering", "band"),
    "restarts": ("clustering", "restarts"),
    "anova_unit": ("anova", "unit"),
    "standardize": ("lmm", "standardize"),
    "random_effects": ("lmm", "random_effects"),
    "participants": ("synth", "participants"),
}


def _k_value(text: str):
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or an integer, got {text!r}")


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for dest, location in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        target = overrides
        for part in location[:-1]:
            target = target.setdefault(part, {})
        target[location[-1]] = value
    return overrides


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    """Flags override the config file, which overrides environment and defaults."""
    config = load_config(args.config, _overrides(args))
    extra_drops = getattr(args, "drop_predictor", None)
    if extra_drops:
        lmm = LmmSettings.model_validate(
            {**config.lmm.model_dump(), "drop_predictors": config.lmm.drop_predictors + extra_drops}
        )
        config = config.model_copy(update={"lmm": lmm})
    return config


# Commands


def cmd_metrics(config: PipelineConfig) -> Path:
    trials, _ = pipeline.load_trials(config)
    rows = pipeline.compute_metrics_table(trials, config)
    with staged_output(config.out_dir, "metrics") as stage:
        write_table(pipeline.metrics_frame(rows), stage / "metrics.csv", kind="metrics", seed=config.seed)
        if config.export_networks:
            for name, text in pipeline.network_exports(trials, config).items():
                write_text(text, stage / name)
    return config.out_dir / "metrics.csv"


def cmd_cluster(config: PipelineConfig, metrics_path: Optional[Path] = None) -> Path:
    rows = pipeline.read_metrics_table(metrics_path or config.out_dir / "metrics.csv")
    run = pipeline.cluster_metrics(rows, config)
    if not run.results:
        reasons = "; ".join(f"{skip.metric}: {skip.reason}" for skip in run.skipped)
        raise InsufficientDataError(f"No metric could be clustered ({reasons})")
    summary = pipeline.cluster_summary(run, config)
    with staged_output(config.out_dir, "cluster") as stage:
        seed = config.cluster_seed
        write_table(pipeline.clusters_frame(run), stage / "clusters.csv", kind="clusters", seed=seed)
        write_table(pipeline.centroids_frame(run), stage / "centroids.csv", kind="centroids", seed=seed)
        write_table(pipeline.trajectories_frame(run), stage / "trajectories.csv", kind="trajectories", seed=seed)
        write_text(summary.model_dump_json(indent=2) + "\n", stage / "cluster_summary.json")
    return config.out_dir / "clusters.csv"


def _existing_table(path: Path) -> Optional[pd.DataFrame]:
    return read_table(path) if path.is_file() else None


def _write_excel_report(
    stage: Path, anova: Optional[pd.DataFrame], lmm: Optional[pd.DataFrame], lines: List[str]
) -> None:
    (stage / "report.xlsx").write_bytes(export_report_workbook(anova, lmm, lines).getvalue())


def cmd_anova(
    config: PipelineConfig, clusters_path: Optional[Path] = None, metrics_path: Optional[Path] = None
) -> Path:
    rows = pipeline.read_metrics_table(metrics_path or config.out_dir / "metrics.csv")
    rows = pipeline.apply_outcomes(rows, config.outcomes, config.delimiter)
    assignments = pipeline.read_clusters_table(clusters_path or config.out_dir / "clusters.csv")
    results = pipeline.run_anova(rows, assignments, config)
    frame = pipeline.anova_frame(results, config.anova.alpha)
    with staged_output(config.out_dir, "anova") as stage:
        write_table(frame, stage / "anova.csv", kind="anova", seed=config.cluster_seed)
        if config.excel_report:
            lines = [f"ANOVA unit: {config.anova.unit}"]
            _write_excel_report(stage, frame, _existing_table(config.out_dir / "lmm.csv"), lines)
    return config.out_dir / "anova.csv"


def cmd_lmm(config: PipelineConfig, metrics_path: Optional[Path] = None) -> Path:
    rows = pipeline.read_metrics_table(metrics_path or config.out_dir / "metrics.csv")
    rows = pipeline.apply_outcomes(rows, config.outcomes, config.delimiter)
    fit, deleted = pipeline.run_lmm(rows, config)
    summary = pipeline.lmm_summary_text(fit, deleted, config.lmm.drop_predictors)
    frame = pipeline.lmm_frame(fit)
    with staged_output(config.out_dir, "lmm") as stage:
        write_table(frame, stage / "lmm.csv", kind="lmm", seed=config.seed)
        write_text(summary, stage / "lmm_summary.txt")
        if config.excel_report:
            _write_excel_report(stage, _existing_table(config.out_dir / "anova.csv"), frame, summary.splitlines())
    return config.out_dir / "lmm.csv"


def cmd_synth(config: PipelineConfig) -> Path:
    cohort = synthesize_cohort(config.synth, config.seed)
    truth = pd.DataFrame([row.model_dump() for row in cohort.truth])
    with staged_output(config.out_dir, "synth") as stage:
        ingest.write_fixation_log(cohort.fixations, stage / "fixations.csv", seed=config.seed)
        ingest.write_outcome_log(cohort.outcomes, stage / "outcomes.csv", seed=config.seed)
        write_table(truth, stage / "truth.csv", kind="truth", seed=config.seed)
    return config.out_dir / "fixations.csv"


def cmd_pipeline(config: PipelineConfig) -> Path:
    cmd_metrics(config)
    cmd_cluster(config)
    cmd_anova(config)
    return cmd_lmm(config)


# Parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="TOML configuration file")
    parser.add_argument("--out-dir", type=Path, default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Root random seed")
    parser.add_argument("--jobs", type=int, default=None, help="Worker processes (clamped to 1..32)")
    parser.add_argument("--delimiter", default=None, help="CSV field delimiter")


def _add_metric_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fixations", type=Path, default=None, help="AOI fixation CSV")
    parser.add_argument("--outcomes", type=Path, default=None, help="Per-trial outcome CSV")
    parser.add_argument(
        "--keep-self-loops", action="store_true", default=None, help="Keep repeated AOI fixations as self-loops"
    )
    parser.add_argument("--pi-source", choices=["counts", "durations"], default=None)
    parser.add_argument("--connectivity", choices=["undirected", "directed"], default=None)
    parser.add_argument(
        "--export-networks", action="store_true", default=None, help="Write node-link JSON per trial"
    )


def _add_cluster_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=_k_value, default=None, help="Cluster count or 'auto' (silhouette over candidates)")
    parser.add_argument("--normalize", choices=["zscore", "minmax"], default=None)
    parser.add_argument("--band", type=int, default=None, help="Sakoe-Chiba band half-width")
    parser.add_argument("--restarts", type=int, default=None)


def _add_lmm_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--drop-predictor",
        action="append",
        choices=predictor_names(),
        default=None,
        help="Exclude a predictor from the mixed model (repeatable)",
    )
    parser.add_argument("--standardize", action="store_true", default=None, help="Standardize predictors")
    parser.add_argument("--random-effects", choices=["intercept_slope", "intercept", "none"], default=None)


def _add_report_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--anova-unit", choices=["trial", "participant"], default=None)
    parser.add_argument("--excel-report", action="store_true", default=None, help="Also write report.xlsx")


def _handler(command: Callable[..., Path], **paths: str) -> Callable[[argparse.Namespace], Path]:
    def run(args: argparse.Namespace) -> Path:
        config = config_from_args(args)
        kwargs = {name: getattr(args, dest) for name, dest in paths.items() if getattr(args, dest, None)}
        output = command(config, **kwargs)
        logger.info(f"Done: {output}")
        return output
    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazenet",
        description="Gaze transition networks, DTW trajectory clustering and mixed models",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    metrics = subparsers.add_parser("metrics", help="Per-trial network metrics")
    _add_common(metrics)
    _add_metric_options(metrics)
    metrics.set_defaults(func=_handler(cmd_metrics))

    cluster = subparsers.add_parser("cluster", help="DTW k-means of metric trajectories")
    _add_common(cluster)
    cluster.add_argument("--metrics-file", type=Path, default=None)
    _add_cluster_options(cluster)
    cluster.set_defaults(func=_handler(cmd_cluster, metrics_path="metrics_file"))

    anova = subparsers.add_parser("anova", help="One-way ANOVA of BFD across clusters")
    _add_common(anova)
    anova.add_argument("--clusters-file", type=Path, default=None)
    anova.add_argument("--metrics-file", type=Path, default=None)
    anova.add_argument("--outcomes", type=Path, default=None)
    anova.add_argument("--normalize", choices=["zscore", "minmax"], default=None)
    _add_report_options(anova)
    anova.set_defaults(func=_handler(cmd_anova, clusters_path="clusters_file", metrics_path="metrics_file"))

    lmm = subparsers.add_parser("lmm", help="REML mixed model predicting BFD")
    _add_common(lmm)
    lmm.add_argument("--metrics-file", type=Path, default=None)
    lmm.add_argument("--outcomes", type=Path, default=None)
    _add_lmm_options(lmm)
    lmm.add_argument("--excel-report", action="store_true", default=None, help="Also write report.xlsx")
    lmm.set_defaults(func=_handler(cmd_lmm, metrics_path="metrics_file"))

    synth = subparsers.add_parser("synth", help="Synthetic cohort with known generating parameters")
    _add_common(synth)
    synth.add_argument("--participants", type=int, default=None)
    synth.set_defaults(func=_handler(cmd_synth))

    full = subparsers.add_parser("pipeline", help="metrics, cluster, anova and lmm in sequence")
    _add_common(full)
    _add_metric_options(full)
    _add_cluster_options(full)
    _add_lmm_options(full)
    _add_report_options(full)
    full.set_defaults(func=_handler(cmd_pipeline))

    return parser
