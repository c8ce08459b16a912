"""Excel Export Generator for Mobility Gap Reports"""
from io import BytesIO

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

NAVY = "243b53"
LIGHT_GRAY = "f0f4f8"


def _write_frame(ws, frame, start_row=1, index=True):
    """Write a DataFrame as a navy-headed table; returns the next free row"""
    navy_fill = PatternFill(start_color=NAVY, end_color=NAVY, fill_type="solid")
    light_gray_fill = PatternFill(start_color=LIGHT_GRAY, end_color=LIGHT_GRAY, fill_type="solid")
    white_font = Font(color="FFFFFF", bold=True, size=11)

    table = frame.reset_index() if index and frame.index.name is not None else frame
    headers = [str(c) for c in table.columns]
    for col, header in enumerate(headers, 1):
        cell = ws.cell(row=start_row, column=col)
        cell.value = header
        cell.font = white_font
        cell.fill = navy_fill
        cell.alignment = Alignment(horizontal='center', vertical='center')

    for row_idx, values in enumerate(table.itertuples(index=False), start_row + 1):
        for col, value in enumerate(values, 1):
            if value is not None and value == value:
                ws.cell(row=row_idx, column=col, value=value.item() if hasattr(value, 'item') else value)
            # Alternating row colors
            if (row_idx - start_row) % 2 == 0:
                ws.cell(row=row_idx, column=col).fill = light_gray_fill

    for idx, header in enumerate(headers, 1):
        letter = get_column_letter(idx)
        ws.column_dimensions[letter].width = max(ws.column_dimensions[letter].width or 0, len(header) + 4, 12)
    return start_row + len(table) + 2


def _write_pairs(ws, title, pairs, row):
    ws.cell(row=row, column=1, value=title).font = Font(bold=True, size=14, color=NAVY)
    row += 1
    for key, value in pairs.items():
        ws.cell(row=row, column=1, value=key).font = Font(bold=True, size=11)
        ws.cell(row=row, column=2, value=value)
        row += 1
    return row + 1


def generate_report_excel(study_name, summaries, correlations=None, comparisons=()):
    """
    Generate the analysis workbook

    Args:
        study_name: label shown on the summary sheet
        summaries: list of classify.Summary, one per period
        correlations: long-format correlation DataFrame (instant, pair, r, note)
        comparisons: between-period comparison DataFrames, one per consecutive pair

    Returns:
        BytesIO object containing the Excel file
    """
    wb = Workbook()

    # === SUMMARY SHEET ===
    ws_summary = wb.active
    ws_summary.title = "Summary"
    ws_summary['A1'] = f"MOBILITY GAP REPORT - {study_name}"
    ws_summary['A1'].font = Font(bold=True, size=16, color=NAVY)
    ws_summary.merge_cells('A1:D1')

    row = 3
    for summary in summaries:
        row = _write_pairs(ws_summary, f"Period {summary.period}: counts", summary.counts, row)
        row = _write_pairs(ws_summary, f"Period {summary.period}: medians", summary.medians, row)
    ws_summary.column_dimensions['A'].width = 30
    ws_summary.column_dimensions['B'].width = 18

    # === CLASSIFICATION SHEETS ===
    for summary in summaries:
        ws = wb.create_sheet(f"Shares {summary.period}"[:31])
        row = _write_frame(ws, summary.type_shares)
        _write_frame(ws, summary.class_shares, start_row=row)
        ws.freeze_panes = 'A2'

        ws = wb.create_sheet(f"Connecting {summary.period}"[:31])
        _write_frame(ws, summary.connecting)
        ws.freeze_panes = 'A2'

    # === CORRELATIONS ===
    if correlations is not None and not correlations.empty:
        ws = wb.create_sheet("Correlations")
        table = correlations.pivot(index='pair', columns='instant', values='r')
        _write_frame(ws, table)
        ws.freeze_panes = 'A2'

    if comparisons:
        ws = wb.create_sheet("Comparison")
        row = 1
        for comparison in comparisons:
            row = _write_frame(ws, comparison, start_row=row, index=False)
        ws.freeze_panes = 'A2'

    output = BytesIO()
    wb.save(output)
    output.seek(0)
    return output
