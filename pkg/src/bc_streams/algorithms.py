"""
Stream Detection Algorithms

Orchestrates corpus slicing, per-window partitioning and cluster matching
into the four stream-construction algorithms:

- GA: one Louvain partition of the global BC graph, each community a stream
- GPA: GA communities projected onto the per-window BC graphs, then matched
- BMLA: the best-modularity run of each window's ensemble, then matched
- BCLC: the ensemble runs whose matched two-window modularity is highest
"""

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from .corpus import (
    BCGraph,
    Corpus,
    DataValidationError,
    EmptyGraphError,
    TimeWindow,
    build_bc_graph,
    build_cross_period_graph,
    graph_statistics,
    slice_windows,
)
from .matching import (
    DEFAULT_THETA,
    SIMILARITIES,
    MatchResult,
    Stream,
    StreamSet,
    build_streams,
    combined_modularity,
    inter_cluster_links,
    label_streams,
    match_links,
)
from .partition import (
    SPREAD_WARNING,
    Ensemble,
    Partition,
    best_modularity,
    best_run_index,
    louvain_ensemble,
)

logger = logging.getLogger(__name__)

ALGORITHMS = ("ga", "gpa", "bmla", "bclc")


@dataclass
class AlgorithmConfig:
    """Parameters of one stream detection run"""

    algorithm: str = "bclc"
    delta_t: int = 5
    n_runs: int = 100
    base_seed: int = 0
    theta: float = DEFAULT_THETA
    min_shared_refs: int = 2
    similarity: str = "delta_q"
    workers: int = 1

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise DataValidationError(
                f"unknown algorithm '{self.algorithm}' "
                f"(expected one of {', '.join(ALGORITHMS)})"
            )
        if self.delta_t < 1:
            raise DataValidationError(f"delta_t must be >= 1, got {self.delta_t}")
        if self.n_runs < 1:
            raise DataValidationError(f"n_runs must be >= 1, got {self.n_runs}")
        if not self.theta > 0:
            raise DataValidationError(f"theta must be > 0, got {self.theta}")
        if self.min_shared_refs < 1:
            raise DataValidationError(
                f"min_shared_refs must be >= 1, got {self.min_shared_refs}"
            )
        if self.similarity not in SIMILARITIES:
            raise DataValidationError(f"unknown similarity '{self.similarity}'")
        if self.workers < 1:
            raise DataValidationError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "delta_t": self.delta_t,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "theta": self.theta,
            "min_shared_refs": self.min_shared_refs,
            "similarity": self.similarity,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AlgorithmConfig":
        known = cls().to_dict()
        unknown = set(data) - set(known)
        if unknown:
            raise DataValidationError(
                f"unknown config fields: {', '.join(sorted(unknown))}"
            )
        config = cls(**{**known, **data})
        config.algorithm = str(config.algorithm).lower()
        config.validate()
        return config


@dataclass
class RunReport:
    """Metadata of a detection run, written next to the stream export"""

    algorithm: str
    windows: List[Dict[str, Any]] = field(default_factory=list)
    boundaries: List[Dict[str, Any]] = field(default_factory=list)
    gpa_loss: List[Dict[str, Any]] = field(default_factory=list)
    global_statistics: Optional[Dict[str, Any]] = None
    global_modularity: Optional[float] = None
    n_evaluations: int = 0
    wall_time: float = 0.0
    warnings: List[str] = field(default_factory=list)

    def warn(self, message: str):
        logger.warning(message)
        self.warnings.append(message)

    @property
    def gpa_loss_fraction(self) -> Optional[float]:
        population = sum(entry["population"] for entry in self.gpa_loss)
        if not population:
            return None
        return sum(entry["dropped"] for entry in self.gpa_loss) / population

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "windows": self.windows,
            "boundaries": self.boundaries,
            "gpa_loss": self.gpa_loss,
            "gpa_loss_fraction": self.gpa_loss_fraction,
            "global_statistics": self.global_statistics,
            "global_modularity": self.global_modularity,
            "n_evaluations": self.n_evaluations,
            "wall_time": self.wall_time,
            "warnings": self.warnings,
        }


@dataclass
class DetectionResult:
    """Streams of a run together with its report and per-window partitions"""

    streams: StreamSet
    report: RunReport
    windows: List[TimeWindow]
    partitions: List[Optional[Partition]]


class StreamDetector:
    """
    Shared per-window state of the stream algorithms.

    Window graphs, ensembles and two-window graphs are built lazily and
    cached, so one detector can drive several algorithms over the same
    corpus with identical ensembles.
    """

    def __init__(self, corpus: Corpus, config: AlgorithmConfig):
        config.validate()
        if not len(corpus):
            raise DataValidationError("corpus is empty")
        self.corpus = corpus
        self.config = config
        sliced = slice_windows(corpus, config.delta_t)
        self.windows = [window for window, _ in sliced]
        self.window_ids = [ids for _, ids in sliced]

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    @lru_cache(maxsize=None)
    def global_graph(self) -> BCGraph:
        graph = build_bc_graph(self.corpus, self.config.min_shared_refs)
        if graph.is_empty:
            raise EmptyGraphError(
                f"global BC graph has zero qualifying links "
                f"(min_shared_refs={self.config.min_shared_refs})"
            )
        return graph

    @lru_cache(maxsize=None)
    def window_graph(self, window: int) -> BCGraph:
        graph = build_bc_graph(
            self.corpus.subset(self.window_ids[window]), self.config.min_shared_refs
        )
        if graph.is_empty:
            logger.warning(
                f"Window {self.windows[window].label} has no BC links "
                f"({len(self.window_ids[window])} publications)"
            )
        return graph

    @lru_cache(maxsize=None)
    def ensemble(self, window: int) -> Optional[Ensemble]:
        graph = self.window_graph(window)
        if graph.is_empty:
            return None
        ensemble = louvain_ensemble(
            graph, self.config.n_runs, self.config.base_seed, self.config.workers
        )
        log_spread(ensemble, self.windows[window].label)
        return ensemble

    @lru_cache(maxsize=None)
    def global_ensemble(self) -> Ensemble:
        ensemble = louvain_ensemble(
            self.global_graph(),
            self.config.n_runs,
            self.config.base_seed,
            self.config.workers,
        )
        log_spread(ensemble, "global")
        return ensemble

    def cross_graph(self, part_a: Partition, part_b: Partition) -> BCGraph:
        return build_cross_period_graph(
            self.corpus.subset(part_a.assignment),
            self.corpus.subset(part_b.assignment),
            self.config.min_shared_refs,
        )

    def _new_report(self) -> RunReport:
        return RunReport(algorithm=self.config.algorithm)

    def _window_entry(
        self,
        window: int,
        partition: Optional[Partition],
        ensemble: Optional[Ensemble] = None,
        run: Optional[int] = None,
    ) -> Dict[str, Any]:
        graph = self.window_graph(window)
        entry = self.windows[window].to_dict()
        entry.update(
            {
                "n_publications": len(self.window_ids[window]),
                "n_bc": len(graph),
                "excluded": len(self.window_ids[window]) - len(graph),
                "modularity": partition.modularity if partition else None,
                "n_communities": partition.n_communities if partition else 0,
                "run": run,
                "seed": partition.seed if partition else None,
            }
        )
        if ensemble is not None:
            qs = ensemble.modularities
            entry.update(
                {"q_min": min(qs), "q_max": max(qs), "q_spread": ensemble.spread}
            )
        return entry

    def _match_chain(
        self, partitions: Sequence[Optional[Partition]], report: RunReport
    ) -> List[Optional[MatchResult]]:
        results: List[Optional[MatchResult]] = []
        for k in range(len(partitions) - 1):
            part_a, part_b = partitions[k], partitions[k + 1]
            if part_a is None or part_b is None:
                results.append(None)
                continue
            cross = self.cross_graph(part_a, part_b)
            links = inter_cluster_links(part_a, part_b, cross)
            result = match_links(links, self.config.theta, self.config.similarity)
            results.append(result)
            report.boundaries.append(
                boundary_entry(k, result, combined_modularity(links, result.pairs))
            )
        return results

    def _local_streams(
        self, partitions: List[Optional[Partition]], report: RunReport
    ) -> StreamSet:
        match_results = self._match_chain(partitions, report)
        return build_streams(match_results, partitions)

    def ga(self) -> DetectionResult:
        """Global approach: every global community is one stream"""
        report = self._new_report()
        graph = self.global_graph()
        ensemble = self.global_ensemble()
        run = best_run_index(ensemble)
        partition = ensemble[run]

        report.global_statistics = graph_statistics(graph, len(self.corpus)).to_dict()
        report.global_modularity = partition.modularity
        report.windows = [self._window_entry(w, None) for w in range(self.n_windows)]

        streams = []
        for community, members in enumerate(partition.communities):
            by_window: Dict[int, List[str]] = {}
            for pub_id in members:
                window = self._window_of(pub_id)
                by_window.setdefault(window, []).append(pub_id)
            streams.append(
                Stream(
                    stream_id=community,
                    clusters=tuple((w, community) for w in sorted(by_window)),
                    publications={w: tuple(by_window[w]) for w in sorted(by_window)},
                )
            )
        logger.info(
            f"GA: {len(streams)} streams, Q={partition.modularity:.4f} (run {run})"
        )
        return DetectionResult(
            streams=StreamSet(streams=tuple(streams), events=()),
            report=report,
            windows=self.windows,
            partitions=[partition],
        )

    def _window_of(self, pub_id: str) -> int:
        year = self.corpus.get(pub_id).year
        return (year - self.windows[0].start) // self.config.delta_t

    def gpa(self) -> DetectionResult:
        """Global approach projected onto the per-window BC graphs"""
        global_partition = best_modularity(self.global_ensemble())
        global_nodes = set(self.global_graph().nodes)
        report = self._new_report()
        report.global_statistics = graph_statistics(
            self.global_graph(), len(self.corpus)
        ).to_dict()
        report.global_modularity = global_partition.modularity

        partitions: List[Optional[Partition]] = []
        for window in range(self.n_windows):
            graph = self.window_graph(window)
            population = self.window_ids[window] & global_nodes
            kept = set(graph.nodes)
            dropped = population - kept
            report.gpa_loss.append(
                {
                    "window": window,
                    "population": len(population),
                    "kept": len(kept),
                    "dropped": len(dropped),
                    "loss_fraction": len(dropped) / len(population)
                    if population
                    else 0.0,
                }
            )
            if graph.is_empty:
                partitions.append(None)
                report.windows.append(self._window_entry(window, None))
                continue
            projected = Partition.from_assignment(
                graph,
                {node: global_partition.assignment[node] for node in graph.nodes},
            )
            partitions.append(projected)
            report.windows.append(self._window_entry(window, projected))

        loss = report.gpa_loss_fraction
        if loss is not None:
            logger.info(f"GPA: {loss:.1%} of the global BC articles dropped")

        match_results = self._match_chain(partitions, report)
        for k, result in enumerate(match_results):
            if result is None:
                continue
            crossing = _cross_stream_links(
                result, global_partition, partitions[k], partitions[k + 1]
            )
            for entry in report.boundaries:
                if entry["boundary"] == k:
                    entry["cross_ga_links"] = len(crossing)
            if crossing:
                logger.info(
                    f"GPA boundary {k}: {len(crossing)} links join projections of "
                    f"different GA streams"
                )

        return DetectionResult(
            streams=build_streams(match_results, partitions),
            report=report,
            windows=self.windows,
            partitions=partitions,
        )

    def bmla(self) -> DetectionResult:
        """Best-modularity local approach"""
        report = self._new_report()
        partitions: List[Optional[Partition]] = []
        for window in range(self.n_windows):
            ensemble = self.ensemble(window)
            if ensemble is None:
                partitions.append(None)
                report.windows.append(self._window_entry(window, None))
                continue
            run = best_run_index(ensemble)
            partitions.append(ensemble[run])
            report.windows.append(
                self._window_entry(window, ensemble[run], ensemble, run)
            )
        return DetectionResult(
            streams=self._local_streams(partitions, report),
            report=report,
            windows=self.windows,
            partitions=partitions,
        )

    def bclc(self) -> DetectionResult:
        """
        Best combination of local communities.

        On the first two windows of every run of consecutive non-empty
        windows, all N x N ensemble combinations are matched and scored by
        the modularity of the two-window graph with paired clusters merged.
        Each later window is chosen one at a time against the partition
        already fixed for its predecessor. Ties go to the lowest run index.
        """
        report = self._new_report()
        chosen: List[Optional[int]] = [None] * self.n_windows
        boundary_scores: Dict[int, Tuple[float, float]] = {}

        for segment in self._segments():
            if len(segment) == 1:
                window = segment[0]
                chosen[window] = best_run_index(self.ensemble(window))
                report.warn(
                    f"Window {self.windows[window].label} has no non-empty "
                    f"neighbour, using its best-modularity partition"
                )
                continue

            first, second = segment[0], segment[1]
            ens_a, ens_b = self.ensemble(first), self.ensemble(second)
            cross = self.cross_graph(ens_a[0], ens_b[0])
            best = None
            for i, part_a in enumerate(ens_a):
                for j, part_b in enumerate(ens_b):
                    q = self._score(part_a, part_b, cross)
                    report.n_evaluations += 1
                    if best is None or q > best[0]:
                        best = (q, i, j)
            chosen[first], chosen[second] = best[1], best[2]
            boundary_scores[first] = (
                best[0],
                self._score(
                    best_modularity(ens_a), best_modularity(ens_b), cross
                ),
            )

            for window in segment[2:]:
                part_a = self.ensemble(window - 1)[chosen[window - 1]]
                ens_b = self.ensemble(window)
                cross = self.cross_graph(part_a, ens_b[0])
                best = None
                for j, part_b in enumerate(ens_b):
                    q = self._score(part_a, part_b, cross)
                    report.n_evaluations += 1
                    if best is None or q > best[0]:
                        best = (q, j)
                chosen[window] = best[1]
                boundary_scores[window - 1] = (
                    best[0],
                    self._score(
                        best_modularity(self.ensemble(window - 1)),
                        best_modularity(ens_b),
                        cross,
                    ),
                )

        partitions: List[Optional[Partition]] = []
        for window, run in enumerate(chosen):
            ensemble = self.ensemble(window)
            partition = ensemble[run] if ensemble is not None else None
            partitions.append(partition)
            report.windows.append(self._window_entry(window, partition, ensemble, run))

        streams = self._local_streams(partitions, report)
        for entry in report.boundaries:
            scores = boundary_scores.get(entry["boundary"])
            if scores is not None:
                entry["bmla_combined_modularity"] = scores[1]
        logger.info(f"BCLC: {report.n_evaluations} matching evaluations")
        return DetectionResult(
            streams=streams, report=report, windows=self.windows, partitions=partitions
        )

    def _score(self, part_a: Partition, part_b: Partition, cross: BCGraph) -> float:
        links = inter_cluster_links(part_a, part_b, cross)
        result = match_links(links, self.config.theta, self.config.similarity)
        return combined_modularity(links, result.pairs)

    def _segments(self) -> List[List[int]]:
        """Runs of consecutive windows that have a partitionable BC graph"""
        segments: List[List[int]] = []
        current: List[int] = []
        for window in range(self.n_windows):
            if self.ensemble(window) is None:
                if current:
                    segments.append(current)
                current = []
            else:
                current.append(window)
        if current:
            segments.append(current)
        return segments

    def run(self) -> DetectionResult:
        start = time.time()
        handler = {
            "ga": self.ga,
            "gpa": self.gpa,
            "bmla": self.bmla,
            "bclc": self.bclc,
        }[self.config.algorithm]
        result = handler()
        result.streams = label_streams(result.streams, self.corpus)
        result.report.wall_time = time.time() - start
        logger.info(
            f"{self.config.algorithm.upper()} finished in "
            f"{result.report.wall_time:.2f}s: {len(result.streams)} streams, "
            f"{len(result.streams.events)} events"
        )
        return result


def log_spread(ensemble: Ensemble, name: str):
    message = (
        f"Window {name}: {len(ensemble)} runs, Q in "
        f"[{min(ensemble.modularities):.4f}, {max(ensemble.modularities):.4f}]"
    )
    if ensemble.spread > SPREAD_WARNING:
        logger.warning(
            f"{message}, spread {ensemble.spread:.4f} above {SPREAD_WARNING}"
        )
    else:
        logger.info(message)


def boundary_entry(
    boundary: int, result: MatchResult, combined: float
) -> Dict[str, Any]:
    return {
        "boundary": boundary,
        "combined_modularity": combined,
        "n_pairs": len(result.pairs),
        "n_splits": len(result.splits),
        "n_merges": len(result.merges),
        "weak_links": len(result.weak_links),
    }


def _cross_stream_links(
    result: MatchResult,
    global_partition: Partition,
    part_a: Partition,
    part_b: Partition,
) -> FrozenSet[Tuple[int, int]]:
    """Links between projected clusters that stem from different GA streams"""

    def origin(partition: Partition, cluster: int) -> int:
        return global_partition.assignment[partition.members(cluster)[0]]

    return frozenset(
        (a, b)
        for a, b in result.link_scores
        if origin(part_a, a) != origin(part_b, b)
    )


def detect(corpus: Corpus, config: AlgorithmConfig) -> DetectionResult:
    """Run the configured algorithm and label its streams"""
    return StreamDetector(corpus, config).run()


def run_ga(corpus: Corpus, config: AlgorithmConfig) -> StreamSet:
    return StreamDetector(corpus, config).ga().streams


def run_gpa(corpus: Corpus, config: AlgorithmConfig) -> StreamSet:
    return StreamDetector(corpus, config).gpa().streams


def run_bmla(corpus: Corpus, config: AlgorithmConfig) -> StreamSet:
    return StreamDetector(corpus, config).bmla().streams


def run_bclc(corpus: Corpus, config: AlgorithmConfig) -> StreamSet:
    return StreamDetector(corpus, config).bclc().streams
