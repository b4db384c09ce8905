import json

import pandas as pd
import pytest

from src.app.main import main
from src.infrastructure.exporters.tables import read_table
from src.shared.utils import default_cluster_metrics

from .conftest import E2E_DROPS, FIXATION_HEADER, write_lines

OUTPUTS = (
    "metrics.csv",
    "clusters.csv",
    "centroids.csv",
    "trajectories.csv",
    "cluster_summary.json",
    "anova.csv",
    "lmm.csv",
    "lmm_summary.txt",
)


def _drop_flags():
    return [flag for name in E2E_DROPS for flag in ("--drop-predictor", name)]


def _synthesize(tmp_path, config):
    data = tmp_path / "data"
    assert main(["synth", "--config", str(config), "--out-dir", str(data)]) == 0
    return data


def _pipeline(data, out, config, *extra):
    return main([
        "pipeline",
        "--config", str(config),
        "--fixations", str(data / "fixations.csv"),
        "--outcomes", str(data / "outcomes.csv"),
        "--out-dir", str(out),
        "--random-effects", "intercept",
        *_drop_flags(),
        *extra,
    ])


@pytest.fixture
def cohort(tmp_path, small_config):
    return _synthesize(tmp_path, small_config)


def test_synth_writes_headed_tables(cohort):
    for name, kind in (("fixations.csv", "fixations"), ("outcomes.csv", "outcomes"), ("truth.csv", "truth")):
        first_line = (cohort / name).read_text().splitlines()[0]
        assert first_line == f"# gazenet schema_version=1 kind={kind} seed=7"
    truth = read_table(cohort / "truth.csv")
    assert len(truth) == 6 * 2 * 3
    assert not list(cohort.glob(".staging-*"))


def test_pipeline_end_to_end(tmp_path, small_config, cohort):
    out = tmp_path / "run"
    assert _pipeline(cohort, out, small_config) == 0
    for name in OUTPUTS:
        assert (out / name).is_file(), name

    metrics = read_table(out / "metrics.csv")
    assert len(metrics) == 36
    assert set(metrics["participant_id"]) == {f"P{i:03d}" for i in range(6)}

    clusters = read_table(out / "clusters.csv")
    assert set(clusters["cluster_id"].astype(int)) <= {0, 1, 2}

    anova = read_table(out / "anova.csv")
    assert list(anova.columns[:4]) == ["Metric", "N-Mean-1", "N-Mean-2", "N-Mean-3"]
    assert list(anova.columns[-2:]) == ["f-stat", "p-stat"]
    assert "transition entropy" in set(anova["Metric"])

    lmm = read_table(out / "lmm.csv")
    assert lmm["Predictor"].iloc[0] == "Intercept"
    assert "Participant Var" in set(lmm["Predictor"])
    assert "Scale" in set(lmm["Predictor"])

    summary = json.loads((out / "cluster_summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["seed"] == 7
    reported = {entry["metric"] for entry in summary["results"] + summary["skipped"]}
    assert reported == set(default_cluster_metrics())
    assert all(entry["k"] in (2, 3) for entry in summary["results"])


def test_pipeline_reruns_are_byte_identical(tmp_path, small_config, cohort):
    first, second = tmp_path / "first", tmp_path / "second"
    assert _pipeline(cohort, first, small_config) == 0
    assert _pipeline(cohort, second, small_config, "--jobs", "2") == 0
    for name in OUTPUTS:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_stages_can_run_separately(tmp_path, small_config, cohort):
    out = tmp_path / "staged"
    common = ["--config", str(small_config), "--out-dir", str(out)]
    assert main(["metrics", *common, "--fixations", str(cohort / "fixations.csv"),
                 "--outcomes", str(cohort / "outcomes.csv"), "--export-networks"]) == 0
    assert list((out / "networks").glob("P000_6_0_0.json"))
    assert main(["cluster", *common, "--k", "2"]) == 0
    assert set(read_table(out / "clusters.csv")["cluster_id"].astype(int)) == {0, 1}
    assert main(["anova", *common, "--anova-unit", "participant", "--excel-report"]) == 0
    assert (out / "report.xlsx").is_file()
    assert main(["lmm", *common, "--random-effects", "intercept", *_drop_flags()]) == 0
    summary = (out / "lmm_summary.txt").read_text()
    assert summary.startswith("Mixed Linear Model Regression Results (REML)")
    assert "Excluded predictors (drop-list):" in summary


def test_unknown_flag_exits_with_usage_error(capsys):
    assert main(["pipeline", "--no-such-flag"]) == 1


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "pipeline" in capsys.readouterr().out


def test_invalid_k_is_a_configuration_error(tmp_path):
    assert main(["cluster", "--out-dir", str(tmp_path), "--k", "1"]) == 1


def test_empty_fixation_file_is_a_data_error(tmp_path):
    fixations = write_lines(tmp_path / "fix.csv", [FIXATION_HEADER])
    assert main(["metrics", "--fixations", str(fixations), "--out-dir", str(tmp_path / "out")]) == 2
    assert not (tmp_path / "out" / "metrics.csv").exists()


def test_malformed_row_is_a_data_error(tmp_path):
    fixations = write_lines(tmp_path / "fix.csv", [FIXATION_HEADER, "P1,6,0,0,0,A,zero,90"])
    assert main(["metrics", "--fixations", str(fixations), "--out-dir", str(tmp_path / "out")]) == 2


def test_rank_deficient_design_is_reported(tmp_path, small_config, cohort):
    out = tmp_path / "rank"
    common = ["--config", str(small_config), "--out-dir", str(out)]
    assert main(["metrics", *common, "--fixations", str(cohort / "fixations.csv"),
                 "--outcomes", str(cohort / "outcomes.csv")]) == 0
    frame = read_table(out / "metrics.csv")
    assert pd.to_numeric(frame["avg_degree"]).sub(2 * pd.to_numeric(frame["density"])).abs().max() < 1e-12
    config = write_lines(tmp_path / "nodrop.toml", ["[lmm]", "drop_predictors = []"])
    assert main(["lmm", "--config", str(config), "--out-dir", str(out)]) == 2


def test_malformed_metrics_table_is_a_data_error(tmp_path, small_config, cohort):
    out = tmp_path / "edited"
    common = ["--config", str(small_config), "--out-dir", str(out)]
    assert main(["metrics", *common, "--fixations", str(cohort / "fixations.csv"),
                 "--outcomes", str(cohort / "outcomes.csv")]) == 0
    path = out / "metrics.csv"
    lines = path.read_text().splitlines()
    column = lines[1].split(",").index("semester")
    fields = lines[2].split(",")
    fields[column] = "six"
    lines[2] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    assert main(["lmm", *common, "--random-effects", "intercept", *_drop_flags()]) == 2
    assert main(["anova", *common]) == 2
