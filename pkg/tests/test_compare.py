"""
Test Suite for Stream Partition Comparison
"""

import itertools
import json
import math
import random
import statistics
import sys
from collections import Counter
from pathlib import Path

import pytest

# Setup import path for src
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bc_streams.compare import (
    StreamPartition,
    bipartite_graph,
    compare_many,
    compare_partitions,
    entropy,
    first_edge_avg,
    load_stream_partition,
    mutual_information,
    nmi,
    nmi_x,
    restrict_to_shared,
    sum80,
)
from bc_streams.corpus import (
    DataValidationError,
    RecordParseError,
    UndefinedMeasureError,
)
from bc_streams.matching import Stream, StreamSet


def partition(groups, name="X"):
    """Partition from {stream: [publications]}"""
    return StreamPartition(
        assignment={pub: stream for stream, pubs in groups.items() for pub in pubs},
        name=name,
    )


def ids(first, last):
    return [f"p{i:02d}" for i in range(first, last + 1)]


@pytest.fixture
def flow_pair():
    """X = {s1: p01-p10, s2: p11-p20}, Y = {t1: p01-p08, t2: p09-p20}"""
    p_x = partition({"s1": ids(1, 10), "s2": ids(11, 20)}, "X")
    p_y = partition({"t1": ids(1, 8), "t2": ids(9, 20)}, "Y")
    return p_x, p_y


def random_partition(rng, pubs, n_streams, name):
    return StreamPartition(
        assignment={pub: f"s{rng.randrange(n_streams)}" for pub in pubs}, name=name
    )


def set_partitions(n):
    """Every partition of n elements, as restricted growth strings"""
    if n == 0:
        yield ()
        return
    for head in set_partitions(n - 1):
        for block in range(max(head, default=-1) + 2):
            yield head + (block,)


def brute_force_mi(p_x, p_y):
    n = len(p_x)
    joint = Counter((p_x.assignment[p], p_y.assignment[p]) for p in p_x.assignment)
    size_x, size_y = Counter(p_x.assignment.values()), Counter(p_y.assignment.values())
    return sum(
        (c / n) * math.log((c / n) / ((size_x[a] / n) * (size_y[b] / n)))
        for (a, b), c in joint.items()
    )


class TestEntropy:
    def test_uniform(self):
        p = partition({s: ids(5 * i + 1, 5 * i + 5) for i, s in enumerate("abcd")})
        assert entropy(p) == pytest.approx(math.log(4))

    def test_single_stream(self):
        assert entropy(partition({"a": ids(1, 7)})) == 0.0

    def test_skewed(self):
        p = partition({"a": ids(1, 3), "b": ids(4, 4)})
        expected = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
        assert entropy(p) == pytest.approx(expected)

    def test_empty_partition_rejected(self):
        with pytest.raises(DataValidationError):
            StreamPartition(assignment={})


class TestMutualInformation:
    def test_matches_brute_force(self):
        rng = random.Random(3)
        pubs = ids(1, 60)
        for _ in range(20):
            p_x = random_partition(rng, pubs, 4, "X")
            p_y = random_partition(rng, pubs, 5, "Y")
            assert mutual_information(p_x, p_y) == pytest.approx(
                brute_force_mi(p_x, p_y), abs=1e-12
            )

    def test_matches_scikit_learn(self):
        metrics = pytest.importorskip("sklearn.metrics")
        rng = random.Random(5)
        pubs = ids(1, 80)
        for _ in range(10):
            p_x = random_partition(rng, pubs, 3, "X")
            p_y = random_partition(rng, pubs, 6, "Y")
            labels_x = [p_x.assignment[p] for p in pubs]
            labels_y = [p_y.assignment[p] for p in pubs]
            assert mutual_information(p_x, p_y) == pytest.approx(
                metrics.mutual_info_score(labels_x, labels_y), abs=1e-12
            )
            assert nmi(p_x, p_y) == pytest.approx(
                metrics.normalized_mutual_info_score(
                    labels_x, labels_y, average_method="geometric"
                ),
                abs=1e-12,
            )

    def test_symmetric(self):
        rng = random.Random(7)
        pubs = ids(1, 40)
        p_x = random_partition(rng, pubs, 3, "X")
        p_y = random_partition(rng, pubs, 4, "Y")
        assert mutual_information(p_x, p_y) == pytest.approx(
            mutual_information(p_y, p_x), abs=1e-12
        )
        assert nmi(p_x, p_y) == pytest.approx(nmi(p_y, p_x), abs=1e-12)

    def test_identical_partitions(self):
        p_x = partition({"a": ids(1, 3), "b": ids(4, 9), "c": ids(10, 10)})
        p_y = partition({"1": ids(1, 3), "2": ids(4, 9), "3": ids(10, 10)}, "Y")
        assert nmi(p_x, p_y) == 1.0
        assert nmi_x(p_x, p_y) == 1.0
        assert nmi_x(p_y, p_x) == 1.0

    def test_refinement_gives_one_on_the_coarse_side(self):
        coarse = partition({"a": ids(1, 10), "b": ids(11, 20)}, "X")
        fine = partition(
            {"a1": ids(1, 4), "a2": ids(5, 10), "b1": ids(11, 13), "b2": ids(14, 20)},
            "Y",
        )
        assert nmi_x(coarse, fine) == 1.0
        assert nmi_x(fine, coarse) < 1.0
        assert nmi(coarse, fine) < 1.0

    def test_independent_partitions(self):
        pubs = ids(1, 40)
        p_x = StreamPartition({p: str(i % 2) for i, p in enumerate(pubs)}, "X")
        p_y = StreamPartition({p: str(i // 2 % 2) for i, p in enumerate(pubs)}, "Y")
        assert mutual_information(p_x, p_y) == pytest.approx(0.0, abs=1e-12)
        assert nmi(p_x, p_y) == pytest.approx(0.0, abs=1e-12)

    def test_refining_one_side_never_loses_information(self):
        rng = random.Random(17)
        for n in range(1, 9):
            pubs = ids(1, n)
            labellings = list(set_partitions(n))
            if n <= 4:
                triples = list(itertools.product(labellings, repeat=3))
            else:
                triples = [tuple(rng.choices(labellings, k=3)) for _ in range(300)]
            for x, y, z in triples:
                p_x = StreamPartition(dict(zip(pubs, map(str, x))), "X")
                p_y = StreamPartition(dict(zip(pubs, map(str, y))), "Y")
                refined = StreamPartition(
                    {p: f"{a}.{b}" for p, a, b in zip(pubs, y, z)}, "Y2"
                )
                assert (
                    mutual_information(p_x, refined)
                    >= mutual_information(p_x, p_y) - 1e-12
                )

    def test_single_stream_is_undefined(self):
        p_x = partition({"a": ids(1, 6)})
        p_y = partition({"b": ids(1, 3), "c": ids(4, 6)}, "Y")
        with pytest.raises(UndefinedMeasureError):
            nmi(p_x, p_y)
        with pytest.raises(UndefinedMeasureError):
            nmi_x(p_x, p_y)
        assert nmi_x(p_y, p_x) == 0.0

    def test_different_universes_rejected(self):
        p_x = partition({"a": ids(1, 3)})
        p_y = partition({"a": ids(2, 4)}, "Y")
        with pytest.raises(DataValidationError, match="restrict"):
            mutual_information(p_x, p_y)


class TestRestrict:
    def test_intersection(self):
        p_x = partition({"a": ids(1, 5), "b": ids(6, 8)})
        p_y = partition({"c": ids(3, 10)}, "Y")
        shared_x, shared_y = restrict_to_shared(p_x, p_y)
        assert shared_x.universe == shared_y.universe == frozenset(ids(3, 8))
        assert shared_x.sizes == {"a": 3, "b": 3}

    def test_disjoint(self):
        with pytest.raises(DataValidationError, match="share no"):
            restrict_to_shared(partition({"a": ids(1, 2)}), partition({"a": ids(3, 4)}))


class TestBipartiteGraph:
    def test_weights(self, flow_pair):
        g = bipartite_graph(*flow_pair)
        assert sorted(g.out_edges("X:s1")) == [("t1", 0.8, 8), ("t2", 0.2, 2)]
        assert g.out_edges("X:s2") == [("t2", 1.0, 10)]
        assert sorted(g.out_edges("Y:t2")) == [
            ("s1", pytest.approx(2 / 12), 2),
            ("s2", pytest.approx(10 / 12), 10),
        ]

    def test_outgoing_weights_sum_to_one(self):
        rng = random.Random(11)
        pubs = ids(1, 50)
        g = bipartite_graph(
            random_partition(rng, pubs, 4, "X"), random_partition(rng, pubs, 6, "Y")
        )
        for direction in ("XY", "YX"):
            for node in g.sources(direction):
                total = sum(w for _, w, _ in g.out_edges(node))
                assert total == pytest.approx(1.0)

    def test_node_link_export(self, flow_pair):
        data = bipartite_graph(*flow_pair).to_node_link()
        assert data["graph"] == {"x": "X", "y": "Y"}
        assert data["directed"] is True
        assert len(data["nodes"]) == 4

    def test_invalid_direction(self, flow_pair):
        with pytest.raises(DataValidationError):
            bipartite_graph(*flow_pair).sources("XX")


class TestFlowSummaries:
    def test_first_edge(self, flow_pair):
        g = bipartite_graph(*flow_pair)
        mean, std = first_edge_avg(g, "XY")
        assert (mean, std) == (pytest.approx(0.9), pytest.approx(0.1))
        mean, std = first_edge_avg(g, "YX")
        assert (mean, std) == (pytest.approx(11 / 12), pytest.approx(1 / 12))

    def test_sum80_exact_threshold(self, flow_pair):
        g = bipartite_graph(*flow_pair)
        # s1 reaches 8 / 10 with its first counterpart
        assert sum80(g, "XY") == (1.0, 0.0)
        assert sum80(g, "YX") == (1.0, 0.0)

    def test_sum80_needs_two(self):
        p_x = partition({"s": ids(1, 10), "u": ids(11, 12)})
        p_y = partition({"a": ids(1, 5), "b": ids(6, 10) + ids(11, 12)}, "Y")
        g = bipartite_graph(p_x, p_y)
        mean, std = sum80(g, "XY")
        assert (mean, std) == (pytest.approx(1.5), pytest.approx(0.5))

    def test_identical_partitions_are_one_to_one(self):
        p = partition({"a": ids(1, 4), "b": ids(5, 9)})
        g = bipartite_graph(p, StreamPartition(p.assignment, "Y"))
        assert first_edge_avg(g, "XY") == (1.0, 0.0)
        assert sum80(g, "YX") == (1.0, 0.0)

    def test_sum80_matches_naive_count(self):
        rng = random.Random(13)
        pubs = ids(1, 90)
        for _ in range(50):
            p_x = random_partition(rng, pubs, 5, "X")
            p_y = random_partition(rng, pubs, 7, "Y")
            counts = []
            for members in p_x.streams.values():
                shared = sorted(
                    Counter(p_y.assignment[p] for p in members).values(), reverse=True
                )
                covered, needed = 0, 0
                while covered * 10 < 8 * len(members):
                    covered += shared[needed]
                    needed += 1
                counts.append(needed)
            mean, std = sum80(bipartite_graph(p_x, p_y), "XY")
            assert mean == pytest.approx(statistics.fmean(counts))
            assert std == pytest.approx(statistics.pstdev(counts), abs=1e-12)

    def test_first_edge_matches_naive_maximum(self):
        rng = random.Random(19)
        pubs = ids(1, 60)
        for _ in range(50):
            p_x = random_partition(rng, pubs, rng.randint(2, 6), "X")
            p_y = random_partition(rng, pubs, rng.randint(2, 8), "Y")
            for direction, (src, dst) in (("XY", (p_x, p_y)), ("YX", (p_y, p_x))):
                firsts = [
                    max(Counter(dst.assignment[p] for p in members).values())
                    / len(members)
                    for members in src.streams.values()
                ]
                mean, std = first_edge_avg(bipartite_graph(p_x, p_y), direction)
                assert mean == pytest.approx(statistics.fmean(firsts))
                assert std == pytest.approx(statistics.pstdev(firsts), abs=1e-12)


class TestComparisonReport:
    def test_self_comparison(self, flow_pair):
        p_x, _ = flow_pair
        report = compare_partitions(p_x, StreamPartition(p_x.assignment, "X2"))
        assert report.nmi == 1.0
        assert report.nmi_x == report.nmi_y == 1.0
        assert report.first_edge_xy == (1.0, 0.0)
        assert report.sum80_yx == (1.0, 0.0)

    def test_restricts_to_shared_publications(self, flow_pair):
        p_x, p_y = flow_pair
        extra = dict(p_y.assignment, q99="t3")
        report = compare_partitions(p_x, StreamPartition(extra, "Y"))
        assert report.n_shared == 20
        assert (report.removed_x, report.removed_y) == (0, 1)
        assert report.streams_y == 2

    def test_undefined_measure_reported_as_missing(self):
        p_x = partition({"a": ids(1, 6)})
        p_y = partition({"b": ids(1, 3), "c": ids(4, 6)}, "Y")
        report = compare_partitions(p_x, p_y)
        assert report.nmi is None
        assert report.nmi_x is None
        assert report.nmi_y == 0.0
        assert report.to_dict()["nmi"] is None

    def test_to_row_flattens_flow_summaries(self, flow_pair):
        row = compare_partitions(*flow_pair).to_row()
        assert row["first_edge_xy_mean"] == pytest.approx(0.9)
        assert row["sum80_xy_std"] == 0.0
        assert "graph" not in row

    def test_compare_many_pairs_in_input_order(self, flow_pair):
        p_x, p_y = flow_pair
        p_z = partition({"z": ids(1, 20)}, "Z")
        reports = compare_many({"A": p_x, "B": p_y, "C": p_z})
        assert [(r.x, r.y) for r in reports] == [("A", "B"), ("A", "C"), ("B", "C")]

    def test_compare_many_needs_two(self, flow_pair):
        with pytest.raises(DataValidationError):
            compare_many({"A": flow_pair[0]})


class TestLoadStreamPartition:
    def test_stream_export(self, tmp_path):
        path = tmp_path / "streams.jsonl"
        records = [
            {"id": 0, "label": "Early", "clusters": [{"publications": ["a", "b"]}]},
            {"id": 1, "clusters": [{"publications": ["c"]}, {"publications": ["d"]}]},
        ]
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        p = load_stream_partition(path, "run")
        assert p.name == "run"
        assert p.assignment == {"a": "0", "b": "0", "c": "1", "d": "1"}
        assert p.labels == {"0": "Early"}

    @pytest.mark.parametrize("suffix, sep", [(".tsv", "\t"), (".csv", ",")])
    def test_reference_table(self, tmp_path, suffix, sep):
        path = tmp_path / f"reference{suffix}"
        path.write_text(f"a{sep}X\nb{sep}X\nc{sep}Y\n")
        p = load_stream_partition(path)
        assert p.name == "reference"
        assert p.sizes == {"X": 2, "Y": 1}

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "reference.tsv"
        path.write_text("a\tX\t1\nb\tY\t2\n")
        with pytest.raises(RecordParseError):
            load_stream_partition(path)

    def test_duplicate_publication(self, tmp_path):
        path = tmp_path / "reference.tsv"
        path.write_text("a\tX\na\tY\n")
        with pytest.raises(DataValidationError, match="twice"):
            load_stream_partition(path)

    def test_publication_in_two_streams(self, tmp_path):
        path = tmp_path / "streams.jsonl"
        records = [
            {"id": 0, "clusters": [{"publications": ["a"]}]},
            {"id": 1, "clusters": [{"publications": ["a"]}]},
        ]
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        with pytest.raises(DataValidationError):
            load_stream_partition(path)


def test_from_stream_set():
    streams = StreamSet(
        streams=(
            Stream(0, ((0, 0),), {0: ("a", "b")}, label="Early"),
            Stream(1, ((0, 1), (1, 0)), {0: ("c",), 1: ("d",)}),
        )
    )
    p = StreamPartition.from_stream_set(streams, "run")
    assert p.assignment == {"a": "0", "b": "0", "c": "1", "d": "1"}
    assert p.labels == {"0": "Early"}


def test_numeric_stream_ids_sort_numerically():
    p = partition({"10": ids(1, 3), "9": ids(4, 5), "2": ids(6, 6), "b": ids(7, 7)})
    assert list(p.sizes) == ["2", "9", "10", "b"]
    assert list(p.streams) == ["2", "9", "10", "b"]
    g = bipartite_graph(p, StreamPartition(p.assignment, "Y"))
    assert g.sources("XY") == ["X:2", "X:9", "X:10", "X:b"]
