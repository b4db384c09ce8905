import pytest

from src.domain.models.fixations import TrialOutcome
from src.services import ingest
from src.shared.errors import DataValidationError, GazeDataError, RowError, SchemaError

from .conftest import FIXATION_HEADER, OUTCOME_HEADER, fixation, scanpath_records, write_lines


def test_parses_and_sorts_fixations(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [
        FIXATION_HEADER,
        "P1,6,0,0,1,B,100,80",
        "P1,6,0,0,0,A,0,90",
        "P0,6,0,0,0,C,0,70",
    ])
    records = ingest.parse_fixation_log(path)
    assert [(r.participant_id, r.fixation_index, r.aoi_id) for r in records] == [
        ("P0", 0, "C"), ("P1", 0, "A"), ("P1", 1, "B"),
    ]


def test_row_error_reports_file_line_and_column(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [
        FIXATION_HEADER,
        "P1,6,0,0,0,A,0,90",
        "P1,6,0,0,1,B,100,90",
        "P1,6,0,0,2,A,200,90",
        "P1,6,0,0,3,B,300,abc",
    ])
    with pytest.raises(RowError) as info:
        ingest.parse_fixation_log(path)
    assert info.value.line == 5
    assert info.value.column == "duration_ms"
    assert f"{path}:5" in str(info.value)
    assert info.value.exit_code == 2


def test_line_numbers_account_for_header_comment(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [
        "# gazenet schema_version=1 kind=fixations seed=1",
        FIXATION_HEADER,
        "P1,6,0,0,0,A,0,",
    ])
    with pytest.raises(RowError) as info:
        ingest.parse_fixation_log(path)
    assert info.value.line == 3
    assert "missing value" in str(info.value)


def test_missing_column_is_a_schema_error(tmp_path):
    path = write_lines(tmp_path / "fix.csv", ["participant_id,semester", "P1,6"])
    with pytest.raises(SchemaError) as info:
        ingest.parse_fixation_log(path)
    assert info.value.column == "session_index"


def test_duplicate_fixation_index_is_rejected(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [
        FIXATION_HEADER,
        "P1,6,0,0,0,A,0,90",
        "P1,6,0,0,0,B,100,90",
    ])
    with pytest.raises(DataValidationError, match="duplicate fixation_index"):
        ingest.parse_fixation_log(path)


def test_decreasing_start_time_is_rejected(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [
        FIXATION_HEADER,
        "P1,6,0,0,0,A,500,90",
        "P1,6,0,0,1,B,100,90",
    ])
    with pytest.raises(DataValidationError) as info:
        ingest.parse_fixation_log(path)
    assert info.value.line == 3


def test_header_only_file_yields_no_records(tmp_path):
    path = write_lines(tmp_path / "fix.csv", [FIXATION_HEADER])
    assert ingest.parse_fixation_log(path) == []


def test_missing_file(tmp_path):
    with pytest.raises(DataValidationError, match="not found"):
        ingest.parse_fixation_log(tmp_path / "nope.csv")


def test_found_above_total_is_a_data_error(tmp_path):
    path = write_lines(tmp_path / "out.csv", [OUTCOME_HEADER, "P1,6,0,0,5,3,"])
    with pytest.raises(GazeDataError) as info:
        ingest.parse_outcome_log(path)
    assert info.value.exit_code == 2
    assert "exceeds" in str(info.value)


def test_outcome_counts_and_score_must_agree(tmp_path):
    path = write_lines(tmp_path / "out.csv", [OUTCOME_HEADER, "P1,6,0,0,1,4,0.5"])
    with pytest.raises(DataValidationError, match="disagrees"):
        ingest.parse_outcome_log(path)


def test_outcome_with_only_normalized_score(tmp_path):
    path = write_lines(tmp_path / "out.csv", [
        "participant_id,semester,session_index,opt_index,bfd_normalized",
        "P1,6,0,0,0.75",
    ])
    (outcome,) = ingest.parse_outcome_log(path)
    assert outcome.anomalies_found is None
    assert ingest.normalize_bfd(outcome) == 0.75


def test_duplicate_outcome_rows(tmp_path):
    path = write_lines(tmp_path / "out.csv", [OUTCOME_HEADER, "P1,6,0,0,1,2,", "P1,6,0,0,2,2,"])
    with pytest.raises(DataValidationError, match="duplicate outcome"):
        ingest.parse_outcome_log(path)


@pytest.mark.parametrize(
    "score, expected",
    [(0.0, 0.0), (1.0, 1.0), (-1e-12, 0.0), (1.0 + 1e-12, 1.0), (0.3, 0.3)],
)
def test_normalize_bfd_clamps_rounding(score, expected):
    outcome = TrialOutcome(participant_id="P1", semester=6, session_index=0, opt_index=0, bfd_normalized=score)
    assert ingest.normalize_bfd(outcome) == expected


def test_normalize_bfd_rejects_out_of_range():
    outcome = TrialOutcome(participant_id="P1", semester=6, session_index=0, opt_index=0, bfd_normalized=1.2)
    with pytest.raises(DataValidationError):
        ingest.normalize_bfd(outcome)


def test_build_trials_orders_by_semester_session_opt():
    records = (
        scanpath_records("AB", semester=7, session_index=0, opt_index=0)
        + scanpath_records("BC", semester=6, session_index=1, opt_index=0)
        + scanpath_records("CA", semester=6, session_index=0, opt_index=2)
        + scanpath_records("AA", participant_id="P2", semester=7)
    )
    trials, warnings = ingest.build_trials(reversed(records))
    assert warnings == []
    p1 = [key for key in trials if key.participant_id == "P1"]
    assert [(k.semester, k.session_index, k.opt_index, k.ordered_index) for k in p1] == [
        (6, 0, 2, 0), (6, 1, 0, 1), (7, 0, 0, 2),
    ]
    (p2,) = [key for key in trials if key.participant_id == "P2"]
    assert p2.ordered_index == 0
    assert trials[p1[0]].aois == ("C", "A")


def test_orphan_outcomes_warn_and_unscored_trials_keep_missing_score():
    records = scanpath_records("AB") + scanpath_records("BA", opt_index=1)
    outcomes = [
        TrialOutcome(participant_id="P1", semester=6, session_index=0, opt_index=0, anomalies_found=1, anomalies_total=2),
        TrialOutcome(participant_id="P9", semester=6, session_index=0, opt_index=0, bfd_normalized=0.5),
    ]
    trials, warnings = ingest.build_trials(records, outcomes)
    assert len(warnings) == 1
    assert "P9" in warnings[0] and "dropped" in warnings[0]
    scores = {key.opt_index: trial.bfd for key, trial in trials.items()}
    assert scores == {0: 0.5, 1: None}


def test_write_then_parse_fixation_log(tmp_path):
    records = [fixation(fixation_index=i, aoi_id=aoi) for i, aoi in enumerate("ABCA")]
    path = ingest.write_fixation_log(records, tmp_path / "fix.csv", seed=3)
    assert path.read_text().startswith("# gazenet schema_version=1 kind=fixations seed=3\n")
    assert ingest.parse_fixation_log(path) == records
