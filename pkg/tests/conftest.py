from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import pytest

from src.domain.models.fixations import FixationRecord

FIXATION_HEADER = "participant_id,semester,session_index,opt_index,fixation_index,aoi_id,start_ms,duration_ms"
OUTCOME_HEADER = "participant_id,semester,session_index,opt_index,anomalies_found,anomalies_total,bfd_normalized"

SMALL_COHORT_TOML = """\
seed = 7

[synth]
participants = 6
semesters = [6, 7]
sessions_per_semester = 1
opts_per_session = 3
aoi_range = [4, 6]
steps_range = [30, 40]

[clustering]
restarts = 2
max_iter = 20
"""

# Predictors dropped in end-to-end runs so tiny cohorts keep a full-rank design.
E2E_DROPS = ["n_nodes", "avg_degree", "avg_betweenness", "avg_closeness", "avg_pagerank", "reciprocity", "node_connectivity"]


def write_lines(path: Path, lines: Iterable[str]) -> Path:
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def fixation(
    participant_id: str = "P1",
    semester: int = 6,
    session_index: int = 0,
    opt_index: int = 0,
    fixation_index: int = 0,
    aoi_id: str = "A",
    start_ms: Optional[int] = None,
    duration_ms: int = 100,
) -> FixationRecord:
    return FixationRecord(
        participant_id=participant_id,
        semester=semester,
        session_index=session_index,
        opt_index=opt_index,
        fixation_index=fixation_index,
        aoi_id=aoi_id,
        start_ms=fixation_index * 100 if start_ms is None else start_ms,
        duration_ms=duration_ms,
    )


def scanpath_records(aois: Sequence[str], **trial) -> List[FixationRecord]:
    return [fixation(fixation_index=i, aoi_id=aoi, **trial) for i, aoi in enumerate(aois)]


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    return write_lines(tmp_path / "gazenet.toml", SMALL_COHORT_TOML.splitlines())


@pytest.fixture(autouse=True)
def _isolated_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    for name in ("GAZENET_SEED", "GAZENET_JOBS", "GAZENET_OUT_DIR", "LOG_LEVEL", "ENABLE_GCLOUD_LOGGING"):
        monkeypatch.delenv(name, raising=False)
