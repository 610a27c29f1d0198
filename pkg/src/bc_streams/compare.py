"""
Stream Partition Comparison

Information-theoretic and flow measures between two temporal partitions
of the same publications: entropy, mutual information and its normalised
variants, the directed bipartite stream graph, and the two flow summaries
built on it (largest edge average and number of streams covering 80% of a
stream's articles).
"""

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import networkx as nx
import numpy as np
import pandas as pd

from .corpus import (
    DataValidationError,
    RecordParseError,
    UndefinedMeasureError,
    decoded_lines,
)
from .matching import StreamSet

logger = logging.getLogger(__name__)

DIRECTIONS = ("XY", "YX")
# Slack on the Sum80 attainment test so that e.g. 8/10 >= 0.8 holds
SUM80_TOLERANCE = 1e-12


def stream_order(stream: str) -> Tuple[int, int, str]:
    """Sort key putting numeric stream ids in numeric order, before the others"""
    if stream.isdecimal():
        return 0, int(stream), stream
    return 1, 0, stream


@dataclass(frozen=True)
class StreamPartition:
    """Total assignment of a publication universe to streams"""

    assignment: Mapping[str, str]
    name: str = "X"
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.assignment:
            raise DataValidationError(f"partition '{self.name}' has no publications")

    def __len__(self) -> int:
        return len(self.assignment)

    @classmethod
    def from_stream_set(cls, streams: StreamSet, name: str = "X") -> "StreamPartition":
        return cls(
            assignment={
                pub: str(stream) for pub, stream in streams.membership.items()
            },
            name=name,
            labels={
                str(s.stream_id): s.label for s in streams if s.label is not None
            },
        )

    @property
    def universe(self) -> frozenset:
        return frozenset(self.assignment)

    @property
    def streams(self) -> Dict[str, Tuple[str, ...]]:
        members: Dict[str, List[str]] = {}
        for pub in sorted(self.assignment):
            members.setdefault(self.assignment[pub], []).append(pub)
        return {s: tuple(members[s]) for s in sorted(members, key=stream_order)}

    @property
    def sizes(self) -> Dict[str, int]:
        counts = Counter(self.assignment.values())
        return {stream: counts[stream] for stream in sorted(counts, key=stream_order)}

    def restrict(self, universe) -> "StreamPartition":
        return StreamPartition(
            assignment={
                pub: stream
                for pub, stream in self.assignment.items()
                if pub in universe
            },
            name=self.name,
            labels=self.labels,
        )


def restrict_to_shared(
    p_x: StreamPartition, p_y: StreamPartition
) -> Tuple[StreamPartition, StreamPartition]:
    """Restrict both partitions to the publications they have in common"""
    shared = p_x.universe & p_y.universe
    if not shared:
        raise DataValidationError(
            f"partitions '{p_x.name}' and '{p_y.name}' share no publications"
        )
    removed_x, removed_y = len(p_x) - len(shared), len(p_y) - len(shared)
    if removed_x or removed_y:
        logger.info(
            f"Restricted to {len(shared)} shared publications: "
            f"{removed_x} removed from '{p_x.name}', {removed_y} from '{p_y.name}'"
        )
        return p_x.restrict(shared), p_y.restrict(shared)
    return p_x, p_y


def _entropy_of_counts(counts) -> float:
    n = sum(counts)
    return math.fsum(-(c / n) * math.log(c / n) for c in sorted(counts) if c)


def entropy(p: StreamPartition) -> float:
    """Shannon entropy of the stream-size distribution, in nats"""
    return _entropy_of_counts(list(p.sizes.values()))


def _check_universe(p_x: StreamPartition, p_y: StreamPartition):
    if p_x.universe != p_y.universe:
        raise DataValidationError(
            f"partitions '{p_x.name}' and '{p_y.name}' cover different publications; "
            f"restrict them to the shared universe first"
        )


def _joint_counts(p_x: StreamPartition, p_y: StreamPartition) -> Counter:
    return Counter((p_x.assignment[pub], p_y.assignment[pub]) for pub in p_x.assignment)


def mutual_information(p_x: StreamPartition, p_y: StreamPartition) -> float:
    """
    Mutual information between two partitions of the same universe.

    Computed as H(X) + (H(Y) - H(X, Y)); the joint entropy equals H(Y)
    exactly when Y refines X, so the normalised variants reach 1 without
    rounding error.
    """
    _check_universe(p_x, p_y)
    h_xy = _entropy_of_counts(list(_joint_counts(p_x, p_y).values()))
    mi = entropy(p_x) + (entropy(p_y) - h_xy)
    return max(mi, 0.0)


def nmi_x(p_x: StreamPartition, p_y: StreamPartition) -> float:
    """Mutual information normalised by the entropy of ``p_x``"""
    h_x = entropy(p_x)
    if h_x == 0:
        raise UndefinedMeasureError(
            f"NMI normalised by '{p_x.name}' is undefined: it has a single stream"
        )
    return min(max(mutual_information(p_x, p_y) / h_x, 0.0), 1.0)


def nmi(p_x: StreamPartition, p_y: StreamPartition) -> float:
    """Symmetric NMI, MI / sqrt(H(X) H(Y))"""
    h_x, h_y = entropy(p_x), entropy(p_y)
    if h_x == 0 or h_y == 0:
        raise UndefinedMeasureError(
            f"NMI of '{p_x.name}' and '{p_y.name}' is undefined: zero entropy"
        )
    denominator = h_x if h_x == h_y else math.sqrt(h_x * h_y)
    return min(max(mutual_information(p_x, p_y) / denominator, 0.0), 1.0)


class BipartiteStreamGraph:
    """
    Directed weighted graph between the streams of two partitions.

    Node ids are ``"X:<stream>"`` and ``"Y:<stream>"``. An edge from a
    stream s to a stream t of the other side carries the share of s's
    articles that also belong to t, and the shared article count.
    """

    def __init__(self, graph: nx.DiGraph, x_name: str = "X", y_name: str = "Y"):
        self.graph = graph
        self.x_name = x_name
        self.y_name = y_name

    @staticmethod
    def node_id(side: str, stream: str) -> str:
        return f"{side}:{stream}"

    def sources(self, direction: str = "XY") -> List[str]:
        if direction not in DIRECTIONS:
            raise DataValidationError(f"direction must be one of {DIRECTIONS}")
        side = direction[0]
        return sorted(
            (
                node
                for node, data in self.graph.nodes(data=True)
                if data["side"] == side
            ),
            key=lambda node: stream_order(self.graph.nodes[node]["stream"]),
        )

    def out_edges(self, node: str) -> List[Tuple[str, float, int]]:
        """(target stream, weight, shared count) of every outgoing edge"""
        return [
            (self.graph.nodes[target]["stream"], data["weight"], data["shared"])
            for _, target, data in self.graph.out_edges(node, data=True)
        ]

    def size(self, node: str) -> int:
        return self.graph.nodes[node]["size"]

    def to_node_link(self) -> Dict[str, Any]:
        data = nx.node_link_data(self.graph)
        data["graph"] = {"x": self.x_name, "y": self.y_name}
        return data


def bipartite_graph(p_x: StreamPartition, p_y: StreamPartition) -> BipartiteStreamGraph:
    """Stream flow graph between two partitions of the same universe"""
    _check_universe(p_x, p_y)
    graph = nx.DiGraph()
    for side, p in (("X", p_x), ("Y", p_y)):
        for stream, size in p.sizes.items():
            graph.add_node(
                BipartiteStreamGraph.node_id(side, stream),
                side=side,
                stream=stream,
                size=size,
                label=p.labels.get(stream, stream),
            )

    sizes_x, sizes_y = p_x.sizes, p_y.sizes
    for (sx, sy), shared in sorted(_joint_counts(p_x, p_y).items()):
        x_node = BipartiteStreamGraph.node_id("X", sx)
        y_node = BipartiteStreamGraph.node_id("Y", sy)
        graph.add_edge(x_node, y_node, weight=shared / sizes_x[sx], shared=shared)
        graph.add_edge(y_node, x_node, weight=shared / sizes_y[sy], shared=shared)
    return BipartiteStreamGraph(graph, p_x.name, p_y.name)


def first_edge_avg(
    g: BipartiteStreamGraph, direction: str = "XY"
) -> Tuple[float, float]:
    """Mean and population std of the largest outgoing weight per source stream"""
    firsts = []
    for node in g.sources(direction):
        weights = [weight for _, weight, _ in g.out_edges(node)]
        assert weights, f"stream node {node} has no outgoing edge"
        firsts.append(max(weights))
    if not firsts:
        raise DataValidationError("bipartite stream graph is empty")
    return float(np.mean(firsts)), float(np.std(firsts))


def sum80(
    g: BipartiteStreamGraph, direction: str = "XY", threshold: float = 0.8
) -> Tuple[float, float]:
    """
    Mean and population std, over source streams, of the number of
    counterpart streams needed to gather ``threshold`` of its articles.

    Counterparts are taken by decreasing weight, ties by stream id.
    """
    counts = []
    for node in g.sources(direction):
        size = g.size(node)
        edges = sorted(
            g.out_edges(node), key=lambda edge: (-edge[2], stream_order(edge[0]))
        )
        covered = 0
        needed = None
        for k, (_, _, shared) in enumerate(edges, start=1):
            covered += shared
            if covered / size >= threshold - SUM80_TOLERANCE:
                needed = k
                break
        assert needed is not None, f"stream node {node} never reaches {threshold}"
        counts.append(needed)
    if not counts:
        raise DataValidationError("bipartite stream graph is empty")
    return float(np.mean(counts)), float(np.std(counts))


def _summary(value: Tuple[float, float]) -> Dict[str, float]:
    mean, std = value
    return {"mean": mean, "std": std}


@dataclass
class ComparisonReport:
    """All measures between two partitions, on their shared publications"""

    x: str
    y: str
    n_shared: int
    removed_x: int
    removed_y: int
    streams_x: int
    streams_y: int
    entropy_x: float
    entropy_y: float
    mi: float
    nmi_x: Optional[float]
    nmi_y: Optional[float]
    nmi: Optional[float]
    first_edge_xy: Tuple[float, float]
    first_edge_yx: Tuple[float, float]
    sum80_xy: Tuple[float, float]
    sum80_yx: Tuple[float, float]
    graph: Optional[BipartiteStreamGraph] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x": self.x,
            "y": self.y,
            "n_shared": self.n_shared,
            "removed_x": self.removed_x,
            "removed_y": self.removed_y,
            "streams_x": self.streams_x,
            "streams_y": self.streams_y,
            "entropy_x": self.entropy_x,
            "entropy_y": self.entropy_y,
            "mi": self.mi,
            "nmi_x": self.nmi_x,
            "nmi_y": self.nmi_y,
            "nmi": self.nmi,
            "first_edge_xy": _summary(self.first_edge_xy),
            "first_edge_yx": _summary(self.first_edge_yx),
            "sum80_xy": _summary(self.sum80_xy),
            "sum80_yx": _summary(self.sum80_yx),
        }

    def to_row(self) -> Dict[str, Any]:
        """Flat record for tabular outputs"""
        row = {}
        for key, value in self.to_dict().items():
            if isinstance(value, dict):
                row[f"{key}_mean"] = value["mean"]
                row[f"{key}_std"] = value["std"]
            else:
                row[key] = value
        return row


def _defined(measure, p_x: StreamPartition, p_y: StreamPartition) -> Optional[float]:
    try:
        return measure(p_x, p_y)
    except UndefinedMeasureError as e:
        logger.warning(f"{e}; reported as missing")
        return None


def compare_partitions(p_x: StreamPartition, p_y: StreamPartition) -> ComparisonReport:
    """Every measure between two partitions, on their shared publications"""
    shared_x, shared_y = restrict_to_shared(p_x, p_y)
    graph = bipartite_graph(shared_x, shared_y)
    return ComparisonReport(
        x=p_x.name,
        y=p_y.name,
        n_shared=len(shared_x),
        removed_x=len(p_x) - len(shared_x),
        removed_y=len(p_y) - len(shared_y),
        streams_x=len(shared_x.sizes),
        streams_y=len(shared_y.sizes),
        entropy_x=entropy(shared_x),
        entropy_y=entropy(shared_y),
        mi=mutual_information(shared_x, shared_y),
        nmi_x=_defined(nmi_x, shared_x, shared_y),
        nmi_y=_defined(lambda x, y: nmi_x(y, x), shared_x, shared_y),
        nmi=_defined(nmi, shared_x, shared_y),
        first_edge_xy=first_edge_avg(graph, "XY"),
        first_edge_yx=first_edge_avg(graph, "YX"),
        sum80_xy=sum80(graph, "XY"),
        sum80_yx=sum80(graph, "YX"),
        graph=graph,
    )


def compare_many(partitions: Mapping[str, StreamPartition]) -> List[ComparisonReport]:
    """Reports for every unordered pair of named partitions, in input order"""
    named = list(partitions.items())
    if len(named) < 2:
        raise DataValidationError("at least two partitions are needed for a comparison")
    reports = []
    for (name_x, p_x), (name_y, p_y) in combinations(named, 2):
        if p_x.name != name_x:
            p_x = StreamPartition(p_x.assignment, name_x, p_x.labels)
        if p_y.name != name_y:
            p_y = StreamPartition(p_y.assignment, name_y, p_y.labels)
        reports.append(compare_partitions(p_x, p_y))
    return reports


def load_stream_partition(
    path: Union[str, Path], name: Optional[str] = None
) -> StreamPartition:
    """
    Load a stream partition from a stream export (``.jsonl``) or from a
    two-column reference file (``publication<sep>stream``, tab or comma
    separated).
    """
    path = Path(path)
    name = name or path.stem
    if path.suffix == ".jsonl":
        assignment: Dict[str, str] = {}
        labels: Dict[str, str] = {}
        with open(path, "rb") as f:
            lines = decoded_lines(f, str(path))
            for line_number, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    stream = str(record["id"])
                    for cluster in record["clusters"]:
                        for pub in cluster["publications"]:
                            if pub in assignment:
                                raise DataValidationError(
                                    f"publication '{pub}' in two streams"
                                )
                            assignment[pub] = stream
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise RecordParseError(
                        f"invalid stream record ({e})", line_number, str(path)
                    )
                if record.get("label"):
                    labels[stream] = record["label"]
        return StreamPartition(assignment=assignment, name=name, labels=labels)

    sep = "," if path.suffix == ".csv" else "\t"
    try:
        df = pd.read_csv(
            path, sep=sep, header=None, dtype=str, keep_default_na=False, comment="#"
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise RecordParseError(f"malformed reference partition ({e})", None, str(path))
    if df.shape[1] != 2:
        raise RecordParseError(
            f"expected 2 columns (publication, stream), found {df.shape[1]}",
            None,
            str(path),
        )
    df.columns = ["publication", "stream"]
    duplicated = df["publication"][df["publication"].duplicated()]
    if not duplicated.empty:
        raise DataValidationError(
            f"publication '{duplicated.iloc[0]}' listed twice in {path}"
        )
    return StreamPartition(
        assignment=dict(zip(df["publication"], df["stream"])), name=name
    )
