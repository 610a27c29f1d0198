"""
Corpus Management for Bibliographic-Coupling Streams

Handles loading and saving of publication records, slicing a corpus into
time windows and building bibliographic-coupling (BC) graphs weighted by
Kessler similarity.
"""

import hashlib
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Tuple,
    Union,
)

import networkx as nx
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CORPUS_FORMATS = ("jsonl", "tsv")
TSV_COLUMNS = ["id", "year", "refs", "label"]


class BCStreamsError(Exception):
    """Base exception for all bc-streams operations"""

    pass


class RecordParseError(BCStreamsError):
    """Raised when an input record is malformed"""

    def __init__(
        self,
        message: str,
        line_number: Optional[int] = None,
        source: Optional[str] = None,
    ):
        self.line_number = line_number
        self.source = source
        location = source or "<records>"
        if line_number is not None:
            location = f"{location}:{line_number}"
        super().__init__(f"{location}: {message}")


class DataValidationError(BCStreamsError):
    """Raised when data validation fails"""

    pass


class EmptyGraphError(DataValidationError):
    """Raised when a graph has no qualifying links"""

    pass


class UndefinedMeasureError(BCStreamsError):
    """Raised when a normalised measure has a zero denominator"""

    pass


class ScenarioError(DataValidationError):
    """Raised when a planted scenario is infeasible or inconsistent"""

    pass


class ExportError(BCStreamsError):
    """Raised when writing an output file fails"""

    pass


@dataclass(frozen=True)
class Publication:
    """A corpus node: one time-stamped document and its reference ids"""

    id: str
    year: int
    refs: FrozenSet[str]
    label: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        data = {"id": self.id, "year": self.year, "refs": sorted(self.refs)}
        if self.label is not None:
            data["label"] = self.label
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Publication":
        if not isinstance(data, Mapping):
            raise DataValidationError("record must be an object")
        for key in ("id", "year", "refs"):
            if key not in data:
                raise DataValidationError(f"missing field '{key}'")

        pub_id = data["id"]
        if not isinstance(pub_id, str) or not pub_id.strip():
            raise DataValidationError("field 'id' must be a non-empty string")

        year = data["year"]
        if isinstance(year, bool) or not isinstance(year, (int, str)):
            raise DataValidationError(f"field 'year' must be an integer, got {year!r}")
        try:
            year = int(year)
        except ValueError:
            raise DataValidationError(f"field 'year' must be an integer, got {year!r}")

        refs = data["refs"]
        if not isinstance(refs, (list, tuple)) or not all(
            isinstance(ref, str) and ref for ref in refs
        ):
            raise DataValidationError("field 'refs' must be a list of strings")

        label = data.get("label")
        if label is not None and not isinstance(label, str):
            raise DataValidationError("field 'label' must be a string")

        return cls(id=pub_id, year=year, refs=frozenset(refs), label=label or None)


@dataclass
class Corpus:
    """Deduplicated set of publications with its period bounds"""

    publications: List[Publication] = field(default_factory=list)

    def __post_init__(self):
        self._by_id: Dict[str, Publication] = {}
        for pub in self.publications:
            if pub.id in self._by_id:
                raise DataValidationError(f"duplicate publication id '{pub.id}'")
            self._by_id[pub.id] = pub

    def __len__(self) -> int:
        return len(self.publications)

    def __iter__(self):
        return iter(self.publications)

    def __contains__(self, pub_id: str) -> bool:
        return pub_id in self._by_id

    def get(self, pub_id: str) -> Optional[Publication]:
        return self._by_id.get(pub_id)

    def subset(self, pub_ids: Iterable[str]) -> List[Publication]:
        """Publications for the given ids, in id order"""
        return [self._by_id[pub_id] for pub_id in sorted(pub_ids)]

    @property
    def period(self) -> Optional[Tuple[int, int]]:
        if not self.publications:
            return None
        years = [pub.year for pub in self.publications]
        return min(years), max(years)


@dataclass(frozen=True)
class TimeWindow:
    """Half-open year interval [start, end)"""

    start: int
    end: int
    index: int
    partial: bool = False

    @property
    def label(self) -> str:
        return f"{self.start}-{self.end - 1}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "partial": self.partial,
        }


def decoded_lines(handle: Iterable[bytes], source: str) -> Iterator[str]:
    """Decode raw lines as UTF-8, one line at a time"""
    for line_number, raw in enumerate(handle, start=1):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise RecordParseError(
                f"invalid UTF-8 at byte {e.start} ({e.reason})", line_number, source
            )
        yield text.rstrip("\r\n") + "\n"


def _read_jsonl(handle: Iterable[str], source: str) -> List[Publication]:
    publications = []
    for line_number, line in enumerate(handle, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise RecordParseError(f"invalid JSON ({e.msg})", line_number, source)
        try:
            publications.append(Publication.from_dict(data))
        except DataValidationError as e:
            raise RecordParseError(str(e), line_number, source)
    return publications


def _read_tsv(handle: Iterable[str], source: str) -> List[Publication]:
    text = "".join(
        line if line.endswith("\n") else line + "\n" for line in handle
    )
    if not text.strip():
        return []
    try:
        df = pd.read_csv(
            io.StringIO(text),
            sep="\t",
            header=None,
            names=TSV_COLUMNS,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            quoting=3,
        )
    except pd.errors.ParserError as e:
        raise RecordParseError(f"malformed tabular record ({e})", None, source)

    publications = []
    # skip_blank_lines drops rows, so recover physical line numbers first
    physical_lines = [
        number
        for number, line in enumerate(text.splitlines(), start=1)
        if line.strip()
    ]
    for row_number, row in enumerate(df.itertuples(index=False)):
        line_number = physical_lines[row_number]
        fields = {}
        for column, value in zip(TSV_COLUMNS, row):
            if isinstance(value, str) and value != "":
                fields[column] = value
        if "refs" in fields:
            fields["refs"] = [ref for ref in fields["refs"].split(";") if ref]
        elif "id" in fields and "year" in fields:
            fields["refs"] = []
        try:
            publications.append(Publication.from_dict(fields))
        except DataValidationError as e:
            raise RecordParseError(str(e), line_number, source)
    return publications


def load_corpus(
    source: Union[str, Path, Iterable[str]], fmt: str = "jsonl"
) -> Corpus:
    """
    Load a corpus from a file path or an iterable of text lines.

    Args:
        source: Path to a record file, or an iterable of lines
        fmt: "jsonl" (one JSON object per line) or "tsv"
            (id<TAB>year<TAB>ref1;ref2<TAB>label)

    Raises:
        RecordParseError: a record is malformed (carries the line number)
        DataValidationError: two records share an id
    """
    if fmt not in CORPUS_FORMATS:
        raise DataValidationError(f"unsupported corpus format '{fmt}'")

    reader = _read_jsonl if fmt == "jsonl" else _read_tsv
    if isinstance(source, (str, Path)):
        path = Path(source)
        with open(path, "rb") as f:
            publications = reader(decoded_lines(f, str(path)), str(path))
    else:
        publications = reader(source, "<records>")

    corpus = Corpus(publications)
    logger.info(f"Loaded {len(corpus)} publications (period {corpus.period})")
    return corpus


def save_corpus(corpus: Corpus, output_path: Union[str, Path], fmt: str = "jsonl"):
    """Write a corpus atomically in the given record format"""
    if fmt not in CORPUS_FORMATS:
        raise DataValidationError(f"unsupported corpus format '{fmt}'")

    output_path = Path(output_path)
    temp_file = output_path.with_suffix(output_path.suffix + ".tmp")
    try:
        if fmt == "jsonl":
            with open(temp_file, "w", encoding="utf-8") as f:
                for pub in corpus:
                    f.write(json.dumps(pub.to_dict(), sort_keys=True) + "\n")
        else:
            rows = [
                {
                    "id": pub.id,
                    "year": pub.year,
                    "refs": ";".join(sorted(pub.refs)),
                    "label": pub.label or "",
                }
                for pub in corpus
            ]
            pd.DataFrame(rows, columns=TSV_COLUMNS).to_csv(
                temp_file, sep="\t", header=False, index=False
            )
        temp_file.replace(output_path)
    except (IOError, OSError) as e:
        logger.error(f"I/O error while writing corpus: {e}", exc_info=True)
        raise ExportError(f"Failed to write corpus to {output_path}: {e}")
    finally:
        if temp_file.exists():
            temp_file.unlink()


def slice_windows(
    corpus: Corpus, delta_t: int
) -> List[Tuple[TimeWindow, FrozenSet[str]]]:
    """
    Cut the corpus period into contiguous windows of delta_t years.

    Windows are anchored at the earliest year. A trailing window that runs
    past the last corpus year is kept and flagged as partial.
    """
    if delta_t < 1:
        raise DataValidationError(f"delta_t must be >= 1, got {delta_t}")
    if not corpus.publications:
        logger.warning("Empty corpus, no time windows produced")
        return []

    first_year, last_year = corpus.period
    n_windows = math.ceil((last_year - first_year + 1) / delta_t)

    members: Dict[int, set] = defaultdict(set)
    for pub in corpus:
        members[(pub.year - first_year) // delta_t].add(pub.id)

    windows = []
    for index in range(n_windows):
        start = first_year + index * delta_t
        window = TimeWindow(
            start=start,
            end=start + delta_t,
            index=index,
            partial=start + delta_t > last_year + 1,
        )
        if window.partial:
            logger.info(f"Trailing window {window.label} is partial")
        windows.append((window, frozenset(members.get(index, ()))))
    return windows


@dataclass(frozen=True)
class BCGraph:
    """
    Weighted undirected similarity graph over publications.

    Each undirected edge is stored once under its (min, max) key. Nodes
    without an incident edge are not part of the graph and are listed in
    ``excluded`` instead.
    """

    nodes: Tuple[str, ...]
    edges: Mapping[Tuple[str, str], float]
    strength: Mapping[str, float]
    total_weight: float
    excluded: Tuple[str, ...] = ()

    @classmethod
    def from_edges(
        cls,
        edges: Union[Mapping[Tuple[str, str], float], Iterable[Tuple[str, str, float]]],
        excluded: Iterable[str] = (),
    ) -> "BCGraph":
        if isinstance(edges, Mapping):
            items = [(u, v, w) for (u, v), w in edges.items()]
        else:
            items = list(edges)

        canonical: Dict[Tuple[str, str], float] = {}
        for u, v, w in items:
            if u == v:
                raise DataValidationError(f"self-loop on '{u}'")
            if not 0.0 < w <= 1.0:
                raise DataValidationError(f"edge ({u}, {v}) weight {w} outside (0, 1]")
            key = (u, v) if u < v else (v, u)
            if key in canonical:
                raise DataValidationError(f"duplicate edge {key}")
            canonical[key] = float(w)

        incident: Dict[str, List[float]] = defaultdict(list)
        for (u, v), w in canonical.items():
            incident[u].append(w)
            incident[v].append(w)
        strength = {node: math.fsum(weights) for node, weights in incident.items()}

        nodes = tuple(sorted(strength))
        ordered_edges = {key: canonical[key] for key in sorted(canonical)}
        return cls(
            nodes=nodes,
            edges=ordered_edges,
            strength={node: strength[node] for node in nodes},
            total_weight=math.fsum(ordered_edges.values()),
            excluded=tuple(sorted(set(excluded) - set(nodes))),
        )

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node: str) -> bool:
        return node in self.index

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    @property
    def number_of_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def index(self) -> Dict[str, int]:
        return {node: i for i, node in enumerate(self.nodes)}

    @cached_property
    def adjacency(self) -> Dict[str, Dict[str, float]]:
        adjacency: Dict[str, Dict[str, float]] = {node: {} for node in self.nodes}
        for (u, v), w in self.edges.items():
            adjacency[u][v] = w
            adjacency[v][u] = w
        return adjacency

    @cached_property
    def edge_arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(source index, target index, weight) arrays in edge key order"""
        index = self.index
        u = np.fromiter((index[a] for a, _ in self.edges), dtype=np.int64)
        v = np.fromiter((index[b] for _, b in self.edges), dtype=np.int64)
        w = np.fromiter(self.edges.values(), dtype=np.float64)
        return u, v, w

    @cached_property
    def strength_array(self) -> np.ndarray:
        return np.fromiter(
            (self.strength[node] for node in self.nodes), dtype=np.float64
        )

    @cached_property
    def digest(self) -> str:
        """Stable content hash of the weighted edge list"""
        h = hashlib.sha256()
        for (u, v), w in self.edges.items():
            h.update(f"{u}\t{v}\t{w!r}\n".encode("utf-8"))
        return h.hexdigest()[:16]

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.nodes)
        graph.add_weighted_edges_from((u, v, w) for (u, v), w in self.edges.items())
        return graph


def build_bc_graph(
    pubs: Iterable[Publication], min_shared_refs: int = 2
) -> BCGraph:
    """
    Build the Kessler-weighted BC graph over a set of publications.

    Two publications i, j are linked when they share at least
    ``min_shared_refs`` references, with weight R_ij / sqrt(R_i * R_j).
    Candidate pairs come from an inverted reference index, so only pairs
    that share at least one reference are ever visited.
    """
    if min_shared_refs < 1:
        raise DataValidationError(
            f"min_shared_refs must be >= 1, got {min_shared_refs}"
        )

    pubs = list(pubs)
    n_refs = {pub.id: len(pub.refs) for pub in pubs}

    citing: Dict[str, List[str]] = defaultdict(list)
    for pub in pubs:
        for ref in pub.refs:
            citing[ref].append(pub.id)

    shared: Dict[Tuple[str, str], int] = defaultdict(int)
    for ref in sorted(citing):
        for u, v in combinations(sorted(citing[ref]), 2):
            shared[(u, v)] += 1

    edges = {
        pair: count / math.sqrt(n_refs[pair[0]] * n_refs[pair[1]])
        for pair, count in shared.items()
        if count >= min_shared_refs
    }
    graph = BCGraph.from_edges(edges, excluded=n_refs)
    if graph.excluded:
        logger.info(
            f"BC graph: {len(graph)} nodes, {graph.number_of_edges} links, "
            f"{len(graph.excluded)} isolated publications excluded"
        )
    return graph


def build_cross_period_graph(
    pubs_a: Iterable[Publication],
    pubs_b: Iterable[Publication],
    min_shared_refs: int = 2,
) -> BCGraph:
    """BC graph over two disjoint publication sets, keeping inter-period links"""
    pubs_a = list(pubs_a)
    pubs_b = list(pubs_b)
    overlap = {pub.id for pub in pubs_a} & {pub.id for pub in pubs_b}
    if overlap:
        raise DataValidationError(
            f"period sets overlap on {len(overlap)} publications "
            f"(e.g. '{min(overlap)}')"
        )
    return build_bc_graph(pubs_a + pubs_b, min_shared_refs)


@dataclass
class GraphStatistics:
    """Size and density figures of a BC graph"""

    n_publications: int
    n_bc: int
    n_links: int
    density: float
    mean_degree: float
    mean_weight: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_publications": self.n_publications,
            "n_bc": self.n_bc,
            "n_links": self.n_links,
            "density": self.density,
            "mean_degree": self.mean_degree,
            "mean_weight": self.mean_weight,
        }


def graph_statistics(
    graph: BCGraph, n_publications: Optional[int] = None
) -> GraphStatistics:
    if n_publications is None:
        n_publications = len(graph) + len(graph.excluded)
    density = nx.density(graph.to_networkx()) if len(graph) > 1 else 0.0
    mean_weight = (
        graph.total_weight / graph.number_of_edges if graph.number_of_edges else 0.0
    )
    return GraphStatistics(
        n_publications=n_publications,
        n_bc=len(graph),
        n_links=graph.number_of_edges,
        density=density,
        mean_degree=(len(graph) - 1) * density if len(graph) > 1 else 0.0,
        mean_weight=mean_weight,
    )
