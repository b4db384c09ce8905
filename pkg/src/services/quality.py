from __future__ import annotations

from typing import Dict, Iterable, List, Sequence, Set, Tuple

from src.domain.models.fixations import FixationRecord, TrialId


def _trial_label(trial_id: TrialId) -> str:
    participant_id, semester, session_index, opt_index = trial_id
    return f"participant {participant_id}, semester {semester}, session {session_index}, OPT {opt_index}"


def find_orphan_outcomes(outcome_ids: Iterable[TrialId], trial_ids: Iterable[TrialId]) -> List[str]:
    """Outcomes that match no trial with fixations; they are dropped."""
    known: Set[TrialId] = set(trial_ids)
    return [
        f"Outcome for {_trial_label(trial_id)} has no fixations and was dropped."
        for trial_id in sorted(set(outcome_ids) - known)
    ]


def find_unscored_trials(trial_ids: Iterable[TrialId], outcome_ids: Iterable[TrialId]) -> List[str]:
    """Trials with fixations but no outcome; they are kept with a missing score."""
    scored: Set[TrialId] = set(outcome_ids)
    return [
        f"Trial {_trial_label(trial_id)} has no outcome; its score is missing."
        for trial_id in sorted(set(trial_ids) - scored)
    ]


def check_fixation_order(records: Sequence[Tuple[FixationRecord, int]]) -> List[Tuple[int, str]]:
    """Return (line, message) for fixations violating within-trial ordering.

    `records` must be sorted by trial and fixation index. Fixation indices
    must be strictly increasing and start times non-decreasing.
    """
    issues: List[Tuple[int, str]] = []
    previous: Dict[TrialId, FixationRecord] = {}
    for record, line in records:
        prior = previous.get(record.trial_id)
        if prior is not None:
            if record.fixation_index == prior.fixation_index:
                issues.append((
                    line,
                    f"duplicate fixation_index {record.fixation_index} in {_trial_label(record.trial_id)}",
                ))
            elif record.start_ms < prior.start_ms:
                issues.append((
                    line,
                    f"start_ms {record.start_ms} precedes start_ms {prior.start_ms} of fixation "
                    f"{prior.fixation_index} in {_trial_label(record.trial_id)}",
                ))
        previous[record.trial_id] = record
    return issues
