"""
Cluster Matching and Stream Assembly

Matches the communities of two successive time windows by the modularity
gain of merging them in the two-window BC graph, classifies the resulting
links into pairs, splits and merges, and chains paired clusters into
streams.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .corpus import BCGraph, Corpus, DataValidationError, EmptyGraphError
from .partition import Partition

logger = logging.getLogger(__name__)

DEFAULT_THETA = 1e-6
SIMILARITIES = ("delta_q", "omega_raw", "omega_norm")

Link = Tuple[int, int]


@dataclass(frozen=True)
class InterClusterLinks:
    """Aggregated link weights between the clusters of two windows"""

    omega_raw: Mapping[Link, float]
    omega_norm: Mapping[Link, float]
    strength_a: Tuple[float, ...]
    strength_b: Tuple[float, ...]
    size_a: Tuple[int, ...]
    size_b: Tuple[int, ...]
    internal_a: Tuple[float, ...]
    internal_b: Tuple[float, ...]
    total: float

    @property
    def n_a(self) -> int:
        return len(self.size_a)

    @property
    def n_b(self) -> int:
        return len(self.size_b)

    def raw(self, a: int, b: int) -> float:
        return self.omega_raw.get((a, b), 0.0)

    def norm(self, a: int, b: int) -> float:
        return self.omega_norm.get((a, b), 0.0)


def inter_cluster_links(
    part_a: Partition, part_b: Partition, cross_graph: BCGraph
) -> InterClusterLinks:
    """
    Aggregate the two-window graph by cluster.

    Cluster strengths are taken on the full two-window graph, so they
    include intra-window as well as cross-window incident weight.
    """
    overlap = set(part_a.assignment) & set(part_b.assignment)
    if overlap:
        raise DataValidationError(
            f"{len(overlap)} nodes assigned in both windows (e.g. '{min(overlap)}')"
        )

    n = len(cross_graph)
    side = np.empty(n, dtype=np.int8)
    cluster = np.empty(n, dtype=np.int64)
    for i, node in enumerate(cross_graph.nodes):
        if node in part_a.assignment:
            side[i], cluster[i] = 0, part_a.assignment[node]
        elif node in part_b.assignment:
            side[i], cluster[i] = 1, part_b.assignment[node]
        else:
            raise DataValidationError(
                f"node '{node}' of the two-window graph is in neither partition"
            )

    n_a, n_b = part_a.n_communities, part_b.n_communities
    u, v, w = cross_graph.edge_arrays
    su, sv = side[u], side[v]
    cu, cv = cluster[u], cluster[v]

    cross = su != sv
    a = np.where(su == 0, cu, cv)[cross]
    b = np.where(su == 0, cv, cu)[cross]
    omega_raw: Dict[Link, float] = {}
    if a.size:
        keys, inverse = np.unique(a * n_b + b, return_inverse=True)
        sums = np.bincount(inverse, weights=w[cross])
        for key, weight in zip(keys.tolist(), sums.tolist()):
            omega_raw[divmod(key, n_b)] = weight

    size_a = np.bincount(list(part_a.assignment.values()), minlength=n_a)
    size_b = np.bincount(list(part_b.assignment.values()), minlength=n_b)
    omega_norm = {
        (ca, cb): weight / (size_a[ca] * size_b[cb])
        for (ca, cb), weight in omega_raw.items()
    }

    def per_cluster(values, mask, n_clusters):
        return tuple(
            np.bincount(cluster[mask], weights=values[mask], minlength=n_clusters)
            .astype(float)
            .tolist()
        )

    strength = cross_graph.strength_array
    internal_mask_a = (su == 0) & (sv == 0) & (cu == cv)
    internal_mask_b = (su == 1) & (sv == 1) & (cu == cv)

    return InterClusterLinks(
        omega_raw=dict(sorted(omega_raw.items())),
        omega_norm=dict(sorted(omega_norm.items())),
        strength_a=per_cluster(strength, side == 0, n_a),
        strength_b=per_cluster(strength, side == 1, n_b),
        size_a=tuple(size_a.tolist()),
        size_b=tuple(size_b.tolist()),
        internal_a=tuple(
            np.bincount(cu[internal_mask_a], weights=w[internal_mask_a], minlength=n_a)
            .astype(float)
            .tolist()
        ),
        internal_b=tuple(
            np.bincount(cu[internal_mask_b], weights=w[internal_mask_b], minlength=n_b)
            .astype(float)
            .tolist()
        ),
        total=cross_graph.total_weight,
    )


def delta_q(links: InterClusterLinks, a: int, b: int) -> float:
    """Modularity gain (times total weight) of merging cluster a with cluster b"""
    return links.raw(a, b) - links.strength_a[a] * links.strength_b[b] / (
        2.0 * links.total
    )


def combined_modularity(links: InterClusterLinks, pairs: Iterable[Link]) -> float:
    """
    Modularity of the two-window graph once every paired (a, b) is merged
    into one community and all other clusters are kept as they are.
    """
    if links.total <= 0:
        raise EmptyGraphError("two-window graph has no links")
    two_m = 2.0 * links.total
    q = (math.fsum(links.internal_a) + math.fsum(links.internal_b)) / links.total
    q -= math.fsum((s / two_m) ** 2 for s in links.strength_a)
    q -= math.fsum((s / two_m) ** 2 for s in links.strength_b)
    q += math.fsum(delta_q(links, a, b) for a, b in pairs) / links.total
    return q


@dataclass(frozen=True)
class MatchResult:
    """Best-match links between the clusters of two successive windows"""

    successor: Mapping[int, Optional[int]]
    predecessor: Mapping[int, Optional[int]]
    pairs: FrozenSet[Link]
    splits: FrozenSet[Link]
    merges: FrozenSet[Link]
    link_scores: Mapping[Link, Tuple[float, float]] = field(default_factory=dict)
    weak_links: FrozenSet[Link] = frozenset()


def _scorer(links: InterClusterLinks, similarity: str):
    if similarity == "delta_q":
        return lambda a, b: delta_q(links, a, b)
    if similarity == "omega_raw":
        return links.raw
    if similarity == "omega_norm":
        return links.norm
    raise DataValidationError(
        f"unknown similarity '{similarity}' (expected one of {', '.join(SIMILARITIES)})"
    )


def match_links(
    links: InterClusterLinks,
    theta: float = DEFAULT_THETA,
    similarity: str = "delta_q",
) -> MatchResult:
    """
    Best-match every cluster across the boundary.

    Only cluster pairs with normalised link weight above ``theta`` are
    candidates. Ties on the score go to the larger normalised weight, then
    to the smaller cluster id. A best match with a non-positive delta Q is
    kept and listed in ``weak_links``.
    """
    score = _scorer(links, similarity)
    candidates = [link for link, norm in links.omega_norm.items() if norm > theta]

    best_b: Dict[int, Tuple[Tuple[float, float, int], int]] = {}
    best_a: Dict[int, Tuple[Tuple[float, float, int], int]] = {}
    for a, b in candidates:
        value, norm = score(a, b), links.norm(a, b)
        key_b = (value, norm, -b)
        if a not in best_b or key_b > best_b[a][0]:
            best_b[a] = (key_b, b)
        key_a = (value, norm, -a)
        if b not in best_a or key_a > best_a[b][0]:
            best_a[b] = (key_a, a)

    successor = {a: best_b[a][1] if a in best_b else None for a in range(links.n_a)}
    predecessor = {b: best_a[b][1] if b in best_a else None for b in range(links.n_b)}

    pairs = frozenset(
        (a, b)
        for a, b in successor.items()
        if b is not None and predecessor[b] == a
    )
    splits = frozenset(
        (a, b)
        for b, a in predecessor.items()
        if a is not None and successor[a] != b
    )
    merges = frozenset(
        (a, b)
        for a, b in successor.items()
        if b is not None and predecessor[b] != a
    )

    used = (
        {(a, b) for a, b in successor.items() if b is not None}
        | {(a, b) for b, a in predecessor.items() if a is not None}
    )
    link_scores = {
        link: (delta_q(links, *link), links.norm(*link)) for link in sorted(used)
    }
    weak_links = frozenset(link for link, (dq, _) in link_scores.items() if dq <= 0)
    for a, b in sorted(weak_links):
        logger.debug(
            f"Accepted link ({a}, {b}) with non-positive delta Q "
            f"{link_scores[(a, b)][0]:.3e}"
        )
    if weak_links:
        logger.info(f"{len(weak_links)} best-match links have delta Q <= 0")

    return MatchResult(
        successor=successor,
        predecessor=predecessor,
        pairs=pairs,
        splits=splits,
        merges=merges,
        link_scores=link_scores,
        weak_links=weak_links,
    )


def match_periods(
    part_a: Partition,
    part_b: Partition,
    cross_graph: BCGraph,
    theta: float = DEFAULT_THETA,
    similarity: str = "delta_q",
) -> MatchResult:
    """Match the clusters of window A to those of window B"""
    links = inter_cluster_links(part_a, part_b, cross_graph)
    return match_links(links, theta, similarity)


@dataclass(frozen=True)
class StreamEvent:
    """A split or merge between two streams at a window boundary"""

    boundary: int
    kind: str
    from_stream: int
    to_stream: int
    from_cluster: int
    to_cluster: int
    delta_q: float
    omega: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "boundary": self.boundary,
            "type": self.kind,
            "from_stream": self.from_stream,
            "to_stream": self.to_stream,
            "from_cluster": self.from_cluster,
            "to_cluster": self.to_cluster,
            "delta_q": self.delta_q,
            "omega": self.omega,
        }


@dataclass(frozen=True)
class Stream:
    """Chain of per-window clusters, at most one per window"""

    stream_id: int
    clusters: Tuple[Tuple[int, int], ...]
    publications: Mapping[int, Tuple[str, ...]]
    labels: Mapping[int, str] = field(default_factory=dict)
    label: Optional[str] = None

    @property
    def windows(self) -> Tuple[int, ...]:
        return tuple(window for window, _ in self.clusters)

    @property
    def members(self) -> Tuple[str, ...]:
        return tuple(
            pub for window in self.windows for pub in self.publications[window]
        )

    @property
    def size(self) -> int:
        return sum(len(pubs) for pubs in self.publications.values())


@dataclass(frozen=True)
class StreamSet:
    """Streams of one detection run with their split/merge events"""

    streams: Tuple[Stream, ...]
    events: Tuple[StreamEvent, ...] = ()

    def __len__(self) -> int:
        return len(self.streams)

    def __iter__(self):
        return iter(self.streams)

    @property
    def membership(self) -> Dict[str, int]:
        membership: Dict[str, int] = {}
        for stream in self.streams:
            for pub in stream.members:
                if pub in membership:
                    raise DataValidationError(
                        f"publication '{pub}' in streams {membership[pub]} "
                        f"and {stream.stream_id}"
                    )
                membership[pub] = stream.stream_id
        return membership

    @property
    def labels(self) -> Dict[int, Dict[int, str]]:
        return {stream.stream_id: dict(stream.labels) for stream in self.streams}

    def stream(self, stream_id: int) -> Stream:
        for stream in self.streams:
            if stream.stream_id == stream_id:
                return stream
        raise KeyError(stream_id)

    def filter_min_size(self, min_size: int) -> "StreamSet":
        """Streams with at least ``min_size`` publications, for display only"""
        kept = tuple(s for s in self.streams if s.size >= min_size)
        kept_ids = {s.stream_id for s in kept}
        events = tuple(
            e
            for e in self.events
            if e.from_stream in kept_ids and e.to_stream in kept_ids
        )
        return StreamSet(streams=kept, events=events)


def build_streams(
    match_results: Sequence[Optional[MatchResult]],
    partitions: Sequence[Optional[Partition]],
) -> StreamSet:
    """
    Chain paired clusters of successive windows into streams.

    ``partitions[k]`` is the partition of window k (None for a window
    without partitioned publications) and ``match_results[k]`` links
    window k to window k + 1 (None when either side is empty). Stream ids
    are assigned in window order, then cluster order.
    """
    if len(match_results) != max(len(partitions) - 1, 0):
        raise DataValidationError(
            f"{len(match_results)} match results for {len(partitions)} windows"
        )

    for k, result in enumerate(match_results):
        part_a, part_b = partitions[k], partitions[k + 1]
        if result is None:
            continue
        if part_a is None or part_b is None:
            raise DataValidationError(
                f"match result at boundary {k} spans an empty window"
            )
        if set(result.successor) != set(range(part_a.n_communities)) or set(
            result.predecessor
        ) != set(range(part_b.n_communities)):
            raise DataValidationError(
                f"match result at boundary {k} does not align with its windows"
            )

    paired_next: Dict[Tuple[int, int], int] = {}
    paired_prev: Dict[Tuple[int, int], int] = {}
    for k, result in enumerate(match_results):
        if result is None:
            continue
        for a, b in result.pairs:
            paired_next[(k, a)] = b
            paired_prev[(k + 1, b)] = a

    members: Dict[Tuple[int, int], Tuple[str, ...]] = {}
    for window, partition in enumerate(partitions):
        if partition is None:
            continue
        for cluster, nodes in enumerate(partition.communities):
            members[(window, cluster)] = nodes

    streams: List[Stream] = []
    stream_of: Dict[Tuple[int, int], int] = {}
    for window, partition in enumerate(partitions):
        if partition is None:
            continue
        for cluster in range(partition.n_communities):
            if (window, cluster) in paired_prev:
                continue
            chain = [(window, cluster)]
            while chain[-1] in paired_next:
                w, c = chain[-1]
                chain.append((w + 1, paired_next[(w, c)]))
            stream_id = len(streams)
            for node in chain:
                stream_of[node] = stream_id
            streams.append(
                Stream(
                    stream_id=stream_id,
                    clusters=tuple(chain),
                    publications={w: members[(w, c)] for w, c in chain},
                )
            )

    events: List[StreamEvent] = []
    for k, result in enumerate(match_results):
        if result is None:
            continue
        for kind, links in (("split", result.splits), ("merge", result.merges)):
            for a, b in sorted(links):
                dq, omega = result.link_scores.get((a, b), (float("nan"), 0.0))
                events.append(
                    StreamEvent(
                        boundary=k,
                        kind=kind,
                        from_stream=stream_of[(k, a)],
                        to_stream=stream_of[(k + 1, b)],
                        from_cluster=a,
                        to_cluster=b,
                        delta_q=dq,
                        omega=omega,
                    )
                )

    logger.info(f"Built {len(streams)} streams with {len(events)} events")
    return StreamSet(streams=tuple(streams), events=tuple(events))


def _mode_label(labels: Iterable[Optional[str]]) -> Optional[str]:
    counts = Counter(label for label in labels if label)
    if not counts:
        return None
    top = max(counts.values())
    return min(label for label, count in counts.items() if count == top)


def label_streams(streams: StreamSet, corpus: Corpus) -> StreamSet:
    """
    Label every stream per window with the most frequent publication label.

    Ties go to the lexicographically smaller label; when no publication of
    a window carries a label the stream id is used.
    """
    labelled = []
    for stream in streams:
        fallback = str(stream.stream_id)
        labels = {}
        for window in stream.windows:
            pubs = (corpus.get(pub) for pub in stream.publications[window])
            labels[window] = (
                _mode_label(pub.label for pub in pubs if pub is not None) or fallback
            )
        overall = _mode_label(
            corpus.get(pub).label for pub in stream.members if pub in corpus
        )
        labelled.append(replace(stream, labels=labels, label=overall or fallback))
    return replace(streams, streams=tuple(labelled))


def yearly_counts(stream: Stream, corpus: Corpus) -> Dict[int, int]:
    """Number of stream publications per year"""
    counts = Counter(
        corpus.get(pub).year for pub in stream.members if pub in corpus
    )
    return dict(sorted(counts.items()))
