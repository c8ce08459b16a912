"""PDF Report Generator for Mobility Gap Reports"""
from io import BytesIO

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import PageBreak, Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle


def _fmt(value):
    if value is None or value != value:
        return '-'
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _table(rows, col_widths=None):
    table = Table(rows, colWidths=col_widths, repeatRows=1)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor('#243b53')),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
        ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, 0), 9),
        ('FONTSIZE', (0, 1), (-1, -1), 8),
        ('TOPPADDING', (0, 0), (-1, -1), 6),
        ('BOTTOMPADDING', (0, 0), (-1, -1), 6),
        ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor('#f0f4f8')]),
    ]))
    return table


def _frame_rows(frame):
    table = frame.reset_index() if frame.index.name is not None else frame
    return [[str(c) for c in table.columns]] + [[_fmt(v) for v in row] for row in table.itertuples(index=False)]


def generate_report_pdf(study_name, summaries, correlations=None, comparisons=()):
    """
    Generate the PDF summary of an analysis run

    The document is built with reportlab's invariant mode, so identical
    inputs give identical bytes.

    Returns:
        BytesIO object containing the PDF
    """
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=A4,
                            rightMargin=0.75*inch, leftMargin=0.75*inch,
                            topMargin=1*inch, bottomMargin=1*inch,
                            title=f"Mobility gap report - {study_name}", invariant=1)
    elements = []

    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        'CustomTitle',
        parent=styles['Heading1'],
        fontSize=22,
        textColor=colors.HexColor('#1a2b3d'),
        spaceAfter=30,
        alignment=TA_CENTER,
        fontName='Helvetica-Bold'
    )
    heading_style = ParagraphStyle(
        'CustomHeading',
        parent=styles['Heading2'],
        fontSize=14,
        textColor=colors.HexColor('#243b53'),
        spaceAfter=12,
        spaceBefore=12,
        fontName='Helvetica-Bold'
    )

    # === COVER ===
    elements.append(Spacer(1, 1.5*inch))
    elements.append(Paragraph("<b>MOBILITY GAP REPORT</b>", title_style))
    periods = ', '.join(s.period for s in summaries)
    elements.append(Paragraph(f"<para align=center><b><font size=16>{study_name}</font></b><br/>"
                              f"<font size=11>Periods: {periods}</font></para>", styles['Normal']))
    elements.append(PageBreak())

    # === PER-PERIOD SUMMARY ===
    for summary in summaries:
        elements.append(Paragraph(f"<b>PERIOD {summary.period.upper()}</b>", heading_style))
        rows = [['Metric', 'Value']]
        rows += [[k, _fmt(v)] for k, v in summary.counts.items()]
        rows += [[f"median {k}", _fmt(v)] for k, v in summary.medians.items()]
        elements.append(_table(rows, col_widths=[3*inch, 2*inch]))
        elements.append(Spacer(1, 0.2*inch))
        elements.append(Paragraph("<b>Transit trip types by hour (%)</b>", styles['Normal']))
        elements.append(_table(_frame_rows(summary.type_shares)))
        elements.append(Spacer(1, 0.2*inch))
        elements.append(Paragraph("<b>Bikeshare classes by hour (%)</b>", styles['Normal']))
        elements.append(_table(_frame_rows(summary.class_shares)))
        elements.append(Spacer(1, 0.2*inch))
        elements.append(Paragraph("<b>Transit-connecting trips by hour</b>", styles['Normal']))
        elements.append(_table(_frame_rows(summary.connecting)))
        elements.append(PageBreak())

    if correlations is not None and not correlations.empty:
        elements.append(Paragraph("<b>KERNEL DENSITY CORRELATIONS</b>", heading_style))
        table = correlations.pivot(index='pair', columns='instant', values='r')
        elements.append(_table(_frame_rows(table)))

    if comparisons:
        elements.append(Paragraph("<b>BETWEEN-PERIOD COMPARISON</b>", heading_style))
        for comparison in comparisons:
            elements.append(_table(_frame_rows(comparison)))
            elements.append(Spacer(1, 0.2*inch))
        elements.append(Paragraph("<font size=8>*** p&lt;0.01, ** p&lt;0.05, * p&lt;0.1 "
                                  "(two-sided Mann-Whitney U)</font>", styles['Normal']))

    doc.build(elements)
    buffer.seek(0)
    return buffer
