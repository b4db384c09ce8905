import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import pandas as pd
from pydantic import BaseModel, ValidationError

from src.domain.models.fixations import (
    SCORE_TOLERANCE,
    FixationRecord,
    Trial,
    TrialId,
    TrialKey,
    TrialOutcome,
)
from src.infrastructure.exporters.tables import count_comment_lines, read_table, write_table
from src.services import quality
from src.shared.errors import DataValidationError, RowError, SchemaError

logger = logging.getLogger(__name__)

FIXATION_COLUMNS = (
    "participant_id",
    "semester",
    "session_index",
    "opt_index",
    "fixation_index",
    "aoi_id",
    "start_ms",
    "duration_ms",
)
OUTCOME_KEY_COLUMNS = ("participant_id", "semester", "session_index", "opt_index")
OUTCOME_SCORE_COLUMNS = ("anomalies_found", "anomalies_total", "bfd_normalized")

# pydantic error types that mean "this cell is not a value of the right type".
PARSE_ERROR_TYPES = {
    "int_parsing",
    "int_from_float",
    "int_type",
    "float_parsing",
    "float_type",
    "string_type",
    "finite_number",
    "missing",
}

RecordT = TypeVar("RecordT", bound=BaseModel)


def _load_frame(path: Path, delimiter: str, required: Sequence[str]) -> Tuple[pd.DataFrame, int]:
    """Return the table and the file line number of its first data row."""
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"Input file not found: {path}")
    frame = read_table(path, delimiter=delimiter)
    if frame.empty and not len(frame.columns):
        return frame, 0
    for column in required:
        if column not in frame.columns:
            raise SchemaError(str(path), column)
    return frame, count_comment_lines(path) + 2


def _validate_rows(
    frame: pd.DataFrame,
    model: Type[RecordT],
    columns: Sequence[str],
    first_line: int,
    path: Path,
) -> List[Tuple[RecordT, int]]:
    present = [column for column in columns if column in frame.columns]
    records: List[Tuple[RecordT, int]] = []
    for offset, row in enumerate(frame[present].itertuples(index=False, name=None)):
        line = first_line + offset
        payload = {column: (value.strip() or None) for column, value in zip(present, row)}
        try:
            records.append((model.model_validate(payload), line))
        except ValidationError as exc:
            raise _row_error(exc, payload, line, path) from exc
    return records


def _row_error(exc: ValidationError, payload: Dict[str, Optional[str]], line: int, path: Path) -> Exception:
    error = exc.errors()[0]
    column = str(error["loc"][0]) if error.get("loc") else ""
    if error["type"] in PARSE_ERROR_TYPES and column:
        reason = "missing value" if payload.get(column) is None else error["msg"]
        return RowError(str(path), line, column, payload.get(column), reason)
    location = f" column '{column}'" if column else ""
    return DataValidationError(f"{path}:{line}:{location} {error['msg']}", line=line)


def parse_fixation_log(path: Path, delimiter: str = ",") -> List[FixationRecord]:
    """Parse an AOI fixation CSV into records sorted by trial and fixation index."""
    path = Path(path)
    frame, first_line = _load_frame(path, delimiter, FIXATION_COLUMNS)
    if frame.empty:
        logger.warning(f"No fixations in {path}")
        return []
    rows = _validate_rows(frame, FixationRecord, FIXATION_COLUMNS, first_line, path)
    rows.sort(key=lambda item: (*item[0].trial_id, item[0].fixation_index, item[1]))
    issues = quality.check_fixation_order(rows)
    if issues:
        line, message = issues[0]
        raise DataValidationError(f"{path}:{line}: {message}", line=line)
    logger.info(f"Parsed {len(rows)} fixations from {path}")
    return [record for record, _ in rows]


def parse_outcome_log(path: Path, delimiter: str = ",") -> List[TrialOutcome]:
    """Parse a per-trial outcome CSV. Score columns are individually optional."""
    path = Path(path)
    frame, first_line = _load_frame(path, delimiter, OUTCOME_KEY_COLUMNS)
    if frame.empty:
        logger.warning(f"No outcomes in {path}")
        return []
    if not any(column in frame.columns for column in OUTCOME_SCORE_COLUMNS):
        raise SchemaError(str(path), "bfd_normalized")
    rows = _validate_rows(frame, TrialOutcome, OUTCOME_KEY_COLUMNS + OUTCOME_SCORE_COLUMNS, first_line, path)
    seen: Dict[TrialId, int] = {}
    for outcome, line in rows:
        if outcome.trial_id in seen:
            raise DataValidationError(
                f"{path}:{line}: duplicate outcome for trial {outcome.trial_id} (first at line {seen[outcome.trial_id]})",
                line=line,
            )
        seen[outcome.trial_id] = line
    logger.info(f"Parsed {len(rows)} outcomes from {path}")
    return [outcome for outcome, _ in rows]


def write_fixation_log(
    records: Iterable[FixationRecord], path: Path, seed: Optional[int] = None, delimiter: str = ","
) -> Path:
    frame = pd.DataFrame([record.model_dump() for record in records], columns=list(FIXATION_COLUMNS))
    return write_table(frame, path, kind="fixations", seed=seed, delimiter=delimiter)


def write_outcome_log(
    outcomes: Iterable[TrialOutcome], path: Path, seed: Optional[int] = None, delimiter: str = ","
) -> Path:
    columns = list(OUTCOME_KEY_COLUMNS + OUTCOME_SCORE_COLUMNS)
    frame = pd.DataFrame([outcome.model_dump() for outcome in outcomes], columns=columns)
    frame["anomalies_found"] = frame["anomalies_found"].astype("Int64")
    frame["anomalies_total"] = frame["anomalies_total"].astype("Int64")
    return write_table(frame, path, kind="outcomes", seed=seed, delimiter=delimiter)


def normalize_bfd(outcome: TrialOutcome) -> float:
    """Normalized score in [0, 1]: found/total, or the provided normalized value."""
    if outcome.anomalies_found is not None and outcome.anomalies_total is not None:
        if outcome.anomalies_found > outcome.anomalies_total:
            raise DataValidationError(
                f"anomalies_found ({outcome.anomalies_found}) exceeds anomalies_total "
                f"({outcome.anomalies_total}) for trial {outcome.trial_id}"
            )
        return outcome.anomalies_found / outcome.anomalies_total
    score = outcome.bfd_normalized
    if score is None:
        raise DataValidationError(f"Outcome for trial {outcome.trial_id} carries no score")
    if -SCORE_TOLERANCE <= score < 0.0:
        return 0.0
    if 1.0 < score <= 1.0 + SCORE_TOLERANCE:
        return 1.0
    if not 0.0 <= score <= 1.0:
        raise DataValidationError(f"bfd_normalized {score} outside [0, 1] for trial {outcome.trial_id}")
    return score


def build_trials(
    fixations: Iterable[FixationRecord], outcomes: Iterable[TrialOutcome] = ()
) -> Tuple[Dict[TrialKey, Trial], List[str]]:
    """Group fixations into trials, join scores and assign per-participant ordered indices.

    Returns the trials in (participant, semester, session, OPT) order and the
    warnings for outcomes that match no trial.
    """
    grouped: Dict[TrialId, List[FixationRecord]] = {}
    for record in sorted(fixations, key=lambda r: (*r.trial_id, r.fixation_index)):
        grouped.setdefault(record.trial_id, []).append(record)

    scores: Dict[TrialId, float] = {}
    for outcome in outcomes:
        if outcome.trial_id in scores:
            raise DataValidationError(f"Duplicate outcome for trial {outcome.trial_id}")
        scores[outcome.trial_id] = normalize_bfd(outcome)

    warnings = quality.find_orphan_outcomes(scores.keys(), grouped.keys())
    for message in warnings:
        logger.warning(message)
    unscored = quality.find_unscored_trials(grouped.keys(), scores.keys())
    if unscored:
        logger.info(f"{len(unscored)} trials have no outcome and keep a missing score")

    trials: Dict[TrialKey, Trial] = {}
    ordered_index = 0
    previous_participant = None
    for trial_id in sorted(grouped):
        participant_id, semester, session_index, opt_index = trial_id
        if participant_id != previous_participant:
            ordered_index, previous_participant = 0, participant_id
        key = TrialKey(
            participant_id=participant_id,
            semester=semester,
            session_index=session_index,
            opt_index=opt_index,
            ordered_index=ordered_index,
        )
        records = grouped[trial_id]
        trials[key] = Trial(
            key=key,
            aois=tuple(record.aoi_id for record in records),
            durations_ms=tuple(record.duration_ms for record in records),
            bfd=scores.get(trial_id),
        )
        ordered_index += 1
    logger.info(f"Built {len(trials)} trials for {len({k.participant_id for k in trials})} participants")
    return trials, warnings
