"""
Test Suite for Stream and Comparison Exports
"""

import hashlib
import json
import sys
from pathlib import Path

import pandas as pd
import pytest

# Setup import path for src
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bc_streams.algorithms import AlgorithmConfig, detect
from bc_streams.compare import StreamPartition, compare_partitions
from bc_streams.corpus import load_corpus
from bc_streams.matching import StreamEvent, StreamSet
from bc_streams.reporting import (
    ExportManager,
    ReportGenerator,
    event_records,
    file_digest,
    stream_records,
    write_json,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def corpus():
    return load_corpus(FIXTURES / "long_term_connections.jsonl")


@pytest.fixture
def detection(corpus):
    return detect(corpus, AlgorithmConfig(algorithm="bmla", n_runs=3))


@pytest.fixture
def reports():
    p_x = StreamPartition({"a": "0", "b": "0", "c": "1", "d": "1"}, "run")
    p_y = StreamPartition({"a": "E", "b": "E", "c": "E", "d": "L"}, "reference")
    return [compare_partitions(p_x, p_y)]


def test_write_json_sorts_keys_and_leaves_no_temp_file(tmp_path):
    path = tmp_path / "out.json"
    write_json(path, {"b": 1, "a": [1, 2]})
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
    assert json.loads(path.read_text()) == {"a": [1, 2], "b": 1}
    assert not (tmp_path / "out.json.tmp").exists()


def test_file_digest(tmp_path):
    path = tmp_path / "data.txt"
    path.write_bytes(b"streams\n")
    assert file_digest(path) == hashlib.sha256(b"streams\n").hexdigest()


def test_stream_records(detection, corpus):
    records = stream_records(detection.streams, corpus)
    assert [r["id"] for r in records] == [0, 1]
    early = records[0]
    assert early["label"] == "Early"
    assert early["size"] == 3
    assert early["clusters"] == [
        {
            "window": 0,
            "cluster": 0,
            "label": "Early",
            "publications": ["a1", "a2", "a3"],
        }
    ]
    assert early["yearly_counts"] == {"2000": 1, "2001": 1, "2002": 1}


def test_event_records_flag_weak_links():
    event = StreamEvent(
        boundary=0,
        kind="split",
        from_stream=0,
        to_stream=1,
        from_cluster=0,
        to_cluster=1,
        delta_q=-0.5,
        omega=0.1,
    )
    (record,) = event_records(StreamSet(streams=(), events=(event,)))
    assert record["type"] == "split"
    assert record["weak"] is True


def test_export_detection_files(tmp_path, detection, corpus):
    exporter = ExportManager(tmp_path)
    exporter.export_detection(
        detection.streams,
        detection.report.to_dict(),
        corpus,
        partitions=detection.partitions,
    )
    for name in [
        "streams.jsonl",
        "events.jsonl",
        "membership.tsv",
        "run_report.json",
        "partitions/window_00.json",
        "partitions/window_01.json",
    ]:
        assert (tmp_path / name).exists(), name
    assert "streams_display.jsonl" not in exporter.written

    membership = (tmp_path / "membership.tsv").read_text().splitlines()
    assert membership[0] == "a1\t0"
    assert len(membership) == 6

    partition = json.loads((tmp_path / "partitions/window_00.json").read_text())
    assert partition["nodes"] == [["a1", 0], ["a2", 0], ["a3", 0]]
    assert partition["seed"] in (0, 1, 2)

    report = json.loads((tmp_path / "run_report.json").read_text())
    assert report["algorithm"] == "bmla"
    assert len(report["windows"]) == 2


def test_display_filter_writes_separate_file(tmp_path, detection, corpus):
    exporter = ExportManager(tmp_path)
    exporter.export_detection(
        detection.streams, detection.report.to_dict(), corpus, min_stream_size=4
    )
    shown = (tmp_path / "streams_display.jsonl").read_text().splitlines()
    full = (tmp_path / "streams.jsonl").read_text().splitlines()
    assert len(shown) == 0
    assert len(full) == 2


def test_export_comparison_files(tmp_path, reports):
    exporter = ExportManager(tmp_path)
    exporter.export_comparison(reports, excel=True, pdf=True)
    data = json.loads((tmp_path / "comparison.json").read_text())
    assert data[0]["x"] == "run"
    assert data[0]["sum80_xy"] == {"mean": 1.5, "std": 0.5}

    df = pd.read_csv(tmp_path / "comparison.csv")
    assert list(df["x"]) == ["run"]
    assert df.loc[0, "n_shared"] == 4

    sheets = pd.read_excel(tmp_path / "comparison.xlsx", sheet_name=None)
    assert set(sheets) == {"Comparison", "Summary"}
    assert (tmp_path / "comparison.pdf").stat().st_size > 200

    graph = json.loads((tmp_path / "bipartite_run__reference.json").read_text())
    assert graph["graph"] == {"x": "run", "y": "reference"}


def test_pdf_export_bad_path(reports):
    """Failures are reported through the return value"""
    generator = ReportGenerator()
    assert (
        generator.export_comparison_pdf(reports, "/not_a_dir/comparison.pdf") is False
    )


def test_summary_rows_format_flow_measures(reports):
    header, row = ReportGenerator()._display_rows(reports)
    assert header[0] == "X"
    assert row[header.index("Sum80 X>Y")] == "1.50 ± 0.50"
    assert row[header.index("N")] == "4"
