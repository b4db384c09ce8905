import io
from typing import Iterable, Optional

import pandas as pd


def _write_frame(ws, frame: pd.DataFrame) -> None:
    for idx, name in enumerate(frame.columns, start=1):
        ws.cell(row=1, column=idx, value=str(name))
    for r_idx, row in enumerate(frame.itertuples(index=False, name=None), start=2):
        for c_idx, value in enumerate(row, start=1):
            ws.cell(row=r_idx, column=c_idx, value=None if pd.isna(value) else value)


def export_report_workbook(
    anova: Optional[pd.DataFrame],
    lmm: Optional[pd.DataFrame],
    report_lines: Iterable[str],
) -> io.BytesIO:
    """Workbook with the ANOVA and mixed-model tables plus a plain-text report sheet."""
    import openpyxl

    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "ANOVA"
    if anova is not None:
        _write_frame(ws, anova)

    if lmm is not None:
        _write_frame(wb.create_sheet("LMM"), lmm)

    report = wb.create_sheet("Report")
    for i, line in enumerate(report_lines, start=1):
        report.cell(row=i, column=1, value=line)

    buf = io.BytesIO()
    wb.save(buf)
    buf.seek(0)
    return buf
