import logging
import os
import shutil
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import pandas as pd

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGING_PREFIX = ".staging-"


def header_line(kind: str, seed: Optional[int] = None) -> str:
    parts = [f"# gazenet schema_version={SCHEMA_VERSION}", f"kind={kind}"]
    if seed is not None:
        parts.append(f"seed={seed}")
    return " ".join(parts)


def write_table(frame: pd.DataFrame, path: Path, kind: str, seed: Optional[int] = None, delimiter: str = ",") -> Path:
    """Write a CSV table preceded by a one-line schema header comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(header_line(kind, seed) + "\n")
        frame.to_csv(handle, index=False, sep=delimiter, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def write_text(text: str, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def count_comment_lines(path: Path) -> int:
    """Number of leading '#' comment lines."""
    count = 0
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            count += 1
    return count


def read_table(path: Path, delimiter: str = ",") -> pd.DataFrame:
    """Read a CSV written by write_table (or any CSV with leading comment lines) as strings."""
    skip = count_comment_lines(path)
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skiprows=skip,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    frame.columns = [str(column).strip() for column in frame.columns]
    return frame


@contextmanager
def staged_output(out_dir: Path, kind: str) -> Iterator[Path]:
    """Yield a staging directory whose files move into out_dir only if the block succeeds."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = out_dir / f"{STAGING_PREFIX}{kind}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        logger.debug(f"Discarded partial {kind} outputs in {staging}")
        raise
    for source in sorted(staging.rglob("*")):
        if source.is_dir():
            continue
        target = out_dir / source.relative_to(staging)
        target.parent.mkdir(parents=True, exist_ok=True)
        os.replace(source, target)
    shutil.rmtree(staging, ignore_errors=True)
    logger.info(f"Committed {kind} outputs to {out_dir}")
