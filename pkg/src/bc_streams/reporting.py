"""
Reporting and Export Module for BC Streams

Writes every output of the tool: stream and event exports, membership
tables, run reports, partitions, manifests, and the comparison report in
JSON, CSV, Excel and PDF form.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from .compare import ComparisonReport
from .corpus import Corpus, ExportError, save_corpus
from .matching import StreamSet, yearly_counts
from .partition import Partition

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

COMPARISON_COLUMNS = [
    ("x", "X"),
    ("y", "Y"),
    ("n_shared", "N"),
    ("streams_x", "Streams X"),
    ("streams_y", "Streams Y"),
    ("entropy_x", "H(X)"),
    ("entropy_y", "H(Y)"),
    ("mi", "MI"),
    ("nmi_x", "NMI_X"),
    ("nmi_y", "NMI_Y"),
    ("nmi", "NMI"),
    ("first_edge_xy", "1stE X>Y"),
    ("first_edge_yx", "1stE Y>X"),
    ("sum80_xy", "Sum80 X>Y"),
    ("sum80_yx", "Sum80 Y>X"),
]


def _atomic_write(output_path: Path, write):
    temp_file = output_path.with_suffix(output_path.suffix + ".tmp")
    try:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        write(temp_file)
        temp_file.replace(output_path)
    except (IOError, OSError) as e:
        logger.error(f"I/O error while writing {output_path}: {e}", exc_info=True)
        raise ExportError(f"Failed to write {output_path}: {e}")
    finally:
        if temp_file.exists():
            temp_file.unlink()


def write_json(output_path: PathLike, data: Any):
    """Write JSON with sorted keys through a temporary file"""

    def write(path: Path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")

    _atomic_write(Path(output_path), write)


def write_jsonl(output_path: PathLike, records: Iterable[Dict[str, Any]]):
    records = list(records)

    def write(path: Path):
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    _atomic_write(Path(output_path), write)


def file_digest(path: PathLike) -> str:
    """sha256 of a file's bytes"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def stream_records(streams: StreamSet, corpus: Corpus) -> List[Dict[str, Any]]:
    """One JSON-ready record per stream"""
    records = []
    for stream in streams:
        records.append(
            {
                "id": stream.stream_id,
                "label": stream.label,
                "size": stream.size,
                "clusters": [
                    {
                        "window": window,
                        "cluster": cluster,
                        "label": stream.labels.get(window),
                        "publications": list(stream.publications[window]),
                    }
                    for window, cluster in stream.clusters
                ],
                "yearly_counts": {
                    str(year): count
                    for year, count in yearly_counts(stream, corpus).items()
                },
            }
        )
    return records


def event_records(streams: StreamSet) -> List[Dict[str, Any]]:
    records = []
    for event in streams.events:
        record = event.to_dict()
        record["weak"] = event.delta_q <= 0
        records.append(record)
    return records


class ReportGenerator:
    """Tabular renderings of comparison reports"""

    def __init__(self):
        self.styles = getSampleStyleSheet()
        self._setup_custom_styles()

    def _setup_custom_styles(self):
        """Setup custom report styles"""
        self.styles.add(
            ParagraphStyle(
                name="CustomTitle",
                parent=self.styles["Heading1"],
                fontSize=18,
                spaceAfter=30,
                alignment=1,  # Center alignment
            )
        )
        self.styles.add(
            ParagraphStyle(
                name="CustomHeading",
                parent=self.styles["Heading2"],
                fontSize=14,
                spaceAfter=12,
            )
        )

    def comparison_dataframe(self, reports: List[ComparisonReport]) -> pd.DataFrame:
        return pd.DataFrame([report.to_row() for report in reports])

    def _display_rows(self, reports: List[ComparisonReport]) -> List[List[str]]:
        rows = [[title for _, title in COMPARISON_COLUMNS]]
        for report in reports:
            data = report.to_dict()
            row = []
            for key, _ in COMPARISON_COLUMNS:
                value = data[key]
                if isinstance(value, dict):
                    row.append(f"{value['mean']:.2f} ± {value['std']:.2f}")
                elif isinstance(value, float):
                    row.append(f"{value:.3f}")
                elif value is None:
                    row.append("n/a")
                else:
                    row.append(str(value))
            rows.append(row)
        return rows

    def export_comparison_csv(
        self, reports: List[ComparisonReport], output_path: PathLike
    ) -> bool:
        """Export comparison rows to CSV format"""
        try:
            df = self.comparison_dataframe(reports)
            _atomic_write(Path(output_path), lambda p: df.to_csv(p, index=False))
            return True
        except Exception as e:
            logger.error(f"Error exporting to CSV: {e}", exc_info=True)
            return False

    def export_comparison_excel(
        self, reports: List[ComparisonReport], output_path: PathLike
    ) -> bool:
        """Export the comparison report to a styled workbook"""
        try:
            with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
                self.comparison_dataframe(reports).to_excel(
                    writer, sheet_name="Comparison", index=False
                )
                header, *rows = self._display_rows(reports)
                pd.DataFrame(rows, columns=header).to_excel(
                    writer, sheet_name="Summary", index=False
                )
                self._format_excel_worksheets(writer)
            return True
        except Exception as e:
            logger.error(f"Error exporting to Excel: {e}", exc_info=True)
            return False

    def _format_excel_worksheets(self, writer):
        """Header colours and column widths"""
        from openpyxl.styles import Font, PatternFill

        header_fill = PatternFill(
            start_color="366092", end_color="366092", fill_type="solid"
        )
        header_font = Font(color="FFFFFF", bold=True)

        for worksheet in writer.sheets.values():
            for cell in worksheet[1]:
                cell.fill = header_fill
                cell.font = header_font

            for column in worksheet.columns:
                max_length = max(len(str(cell.value)) for cell in column)
                worksheet.column_dimensions[column[0].column_letter].width = min(
                    max_length + 2, 50
                )

    def export_comparison_pdf(
        self, reports: List[ComparisonReport], output_path: PathLike
    ) -> bool:
        """Export the comparison report as a PDF table"""
        try:
            doc = SimpleDocTemplate(
                str(output_path),
                pagesize=landscape(A4),
                rightMargin=0.4 * inch,
                leftMargin=0.4 * inch,
                topMargin=0.5 * inch,
                bottomMargin=0.5 * inch,
            )
            story = [
                Paragraph("Stream Partition Comparison", self.styles["CustomTitle"]),
                Spacer(1, 12),
                Paragraph(
                    "Information measures and stream flow summaries "
                    "(mean ± population std)",
                    self.styles["CustomHeading"],
                ),
            ]

            table = Table(self._display_rows(reports), repeatRows=1)
            table.setStyle(
                TableStyle(
                    [
                        ("BACKGROUND", (0, 0), (-1, 0), colors.grey),
                        ("TEXTCOLOR", (0, 0), (-1, 0), colors.whitesmoke),
                        ("ALIGN", (0, 0), (-1, -1), "CENTER"),
                        ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
                        ("GRID", (0, 0), (-1, -1), 1, colors.black),
                        ("FONTSIZE", (0, 0), (-1, -1), 7),
                        ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
                    ]
                )
            )
            story.append(table)
            doc.build(story)
            return True
        except Exception as e:
            logger.error(f"Error creating PDF: {e}", exc_info=True)
            return False


class ExportManager:
    """Writes the output files of one command into an output directory"""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.report_generator = ReportGenerator()
        self.written: List[str] = []

    def _path(self, name: str) -> Path:
        self.written.append(name)
        return self.out_dir / name

    def export_streams(
        self,
        streams: StreamSet,
        corpus: Corpus,
        name: str = "streams.jsonl",
    ):
        write_jsonl(self._path(name), stream_records(streams, corpus))

    def export_events(self, streams: StreamSet, name: str = "events.jsonl"):
        write_jsonl(self._path(name), event_records(streams))

    def export_membership(self, streams: StreamSet, name: str = "membership.tsv"):
        membership = streams.membership
        df = pd.DataFrame(
            sorted(membership.items()), columns=["publication", "stream"]
        )
        _atomic_write(
            self._path(name),
            lambda p: df.to_csv(p, sep="\t", header=False, index=False),
        )

    def export_run_report(self, report: Dict[str, Any], name: str = "run_report.json"):
        write_json(self._path(name), report)

    def export_partition(self, partition: Partition, name: str):
        """(node, community) rows plus seed, modularity and graph digest"""
        write_json(
            self._path(name),
            {
                "seed": partition.seed,
                "modularity": partition.modularity,
                "graph_digest": partition.graph_digest,
                "n_communities": partition.n_communities,
                "nodes": [
                    [node, community]
                    for node, community in sorted(partition.assignment.items())
                ],
            },
        )

    def export_detection(
        self,
        streams: StreamSet,
        report: Dict[str, Any],
        corpus: Corpus,
        partitions: Iterable[Optional[Partition]] = (),
        min_stream_size: Optional[int] = None,
    ):
        self.export_streams(streams, corpus)
        self.export_events(streams)
        self.export_membership(streams)
        self.export_run_report(report)
        for k, partition in enumerate(partitions):
            if partition is not None:
                self.export_partition(partition, f"partitions/window_{k:02d}.json")
        if min_stream_size:
            shown = streams.filter_min_size(min_stream_size)
            logger.info(
                f"Display filter: {len(shown)} of {len(streams)} streams "
                f"have at least {min_stream_size} publications"
            )
            self.export_streams(shown, corpus, name="streams_display.jsonl")

    def export_comparison(
        self,
        reports: List[ComparisonReport],
        excel: bool = False,
        pdf: bool = False,
    ):
        write_json(self._path("comparison.json"), [r.to_dict() for r in reports])
        generator = self.report_generator
        outputs = [("comparison.csv", generator.export_comparison_csv)]
        if excel:
            outputs.append(("comparison.xlsx", generator.export_comparison_excel))
        if pdf:
            outputs.append(("comparison.pdf", generator.export_comparison_pdf))
        for name, export in outputs:
            if not export(reports, self._path(name)):
                raise ExportError(f"Failed to write {self.out_dir / name}")

        for report in reports:
            if report.graph is not None:
                write_json(
                    self._path(f"bipartite_{report.x}__{report.y}.json"),
                    report.graph.to_node_link(),
                )

    def export_corpus(self, corpus: Corpus, fmt: str = "jsonl"):
        save_corpus(corpus, self._path(f"corpus.{fmt}"), fmt)

    def export_json(self, data: Any, name: str):
        write_json(self._path(name), data)
