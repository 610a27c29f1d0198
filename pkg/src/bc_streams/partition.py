"""
Weighted Modularity and Louvain Partitioning

Evaluates the weighted modularity of a node-to-community assignment on a
BC graph and optimises it with the Louvain heuristic (local node moves
followed by community aggregation). Ensembles of independently seeded
runs feed the local stream algorithms.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from typing import Any, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import BCGraph, DataValidationError, EmptyGraphError

logger = logging.getLogger(__name__)

# Minimum gain (in units of edge weight) for a node move to be accepted
MOVE_EPSILON = 1e-12
# Levels stop once a full pass improves Q by less than this
LEVEL_TOLERANCE = 1e-9
# Ensemble spread above this is reported as unusual run variability
SPREAD_WARNING = 0.005


def _canonical_labels(labels: Sequence[Hashable]) -> np.ndarray:
    """Dense community ids ordered by first appearance"""
    mapping: Dict[Hashable, int] = {}
    return np.fromiter(
        (mapping.setdefault(label, len(mapping)) for label in labels),
        dtype=np.int64,
        count=len(labels),
    )


def _labels_for(graph: BCGraph, assignment: Mapping[str, Hashable]) -> np.ndarray:
    missing = [node for node in graph.nodes if node not in assignment]
    if missing:
        raise DataValidationError(
            f"{len(missing)} graph nodes missing from assignment "
            f"(e.g. '{missing[0]}')"
        )
    return _canonical_labels([assignment[node] for node in graph.nodes])


def _modularity(graph: BCGraph, labels: np.ndarray) -> float:
    if graph.total_weight <= 0:
        raise EmptyGraphError("modularity is undefined on a graph without links")
    u, v, w = graph.edge_arrays
    n_communities = int(labels.max()) + 1
    same = labels[u] == labels[v]
    internal = np.bincount(labels[u][same], weights=w[same], minlength=n_communities)
    tot = np.bincount(labels, weights=graph.strength_array, minlength=n_communities)
    two_m = 2.0 * graph.total_weight
    return float(internal.sum() / graph.total_weight - np.sum((tot / two_m) ** 2))


def modularity(graph: BCGraph, assignment: Mapping[str, Hashable]) -> float:
    """
    Weighted modularity Q of an assignment.

    Evaluated through community aggregates,
    Q = sum_c [in_c / 2W - (tot_c / 2W)^2], where in_c counts each internal
    edge twice, tot_c is the summed strength of community c and W the total
    edge weight.
    """
    return _modularity(graph, _labels_for(graph, assignment))


@dataclass(frozen=True)
class Partition:
    """Assignment of every node of one BC graph to a dense community id"""

    assignment: Mapping[str, int]
    graph_digest: str
    modularity: float
    seed: Optional[int] = None

    @classmethod
    def from_assignment(
        cls,
        graph: BCGraph,
        assignment: Mapping[str, Hashable],
        seed: Optional[int] = None,
    ) -> "Partition":
        labels = _labels_for(graph, assignment)
        return cls._from_labels(graph, labels, seed)

    @classmethod
    def _from_labels(
        cls, graph: BCGraph, labels: np.ndarray, seed: Optional[int]
    ) -> "Partition":
        labels = _canonical_labels(labels.tolist())
        return cls(
            assignment=dict(zip(graph.nodes, labels.tolist())),
            graph_digest=graph.digest,
            modularity=_modularity(graph, labels),
            seed=seed,
        )

    def __len__(self) -> int:
        return self.n_communities

    @property
    def n_communities(self) -> int:
        return max(self.assignment.values()) + 1 if self.assignment else 0

    @property
    def communities(self) -> List[Tuple[str, ...]]:
        members: List[List[str]] = [[] for _ in range(self.n_communities)]
        for node in sorted(self.assignment):
            members[self.assignment[node]].append(node)
        return [tuple(group) for group in members]

    def members(self, community: int) -> Tuple[str, ...]:
        return tuple(
            sorted(node for node, c in self.assignment.items() if c == community)
        )

    def labels(self, graph: BCGraph) -> np.ndarray:
        """Community of each graph node, in graph node order"""
        return np.fromiter(
            (self.assignment[node] for node in graph.nodes),
            dtype=np.int64,
            count=len(graph),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "graph_digest": self.graph_digest,
            "modularity": self.modularity,
            "seed": self.seed,
            "n_communities": self.n_communities,
            "assignment": dict(sorted(self.assignment.items())),
        }


@dataclass(frozen=True)
class Ensemble:
    """N independently seeded Louvain partitions of the same graph"""

    partitions: Tuple[Partition, ...]
    base_seed: int
    graph_digest: str = field(default="")

    def __len__(self) -> int:
        return len(self.partitions)

    def __getitem__(self, run: int) -> Partition:
        return self.partitions[run]

    def __iter__(self):
        return iter(self.partitions)

    @property
    def modularities(self) -> List[float]:
        return [p.modularity for p in self.partitions]

    @property
    def spread(self) -> float:
        qs = self.modularities
        return max(qs) - min(qs)


def _move_nodes(
    adjacency: List[Dict[int, float]],
    strength: np.ndarray,
    two_m: float,
    community: np.ndarray,
    rng: np.random.Generator,
) -> bool:
    """
    Local moving phase on one level. Updates ``community`` in place and
    returns True if any node changed community.
    """
    n = len(adjacency)
    tot = np.bincount(community, weights=strength, minlength=n).astype(np.float64)
    moved_any = False

    while True:
        moves = 0
        for i in rng.permutation(n):
            current = community[i]
            k_i = strength[i]

            links: Dict[int, float] = {}
            for j, w in adjacency[i].items():
                c = community[j]
                links[c] = links.get(c, 0.0) + w

            tot[current] -= k_i
            best = current
            best_gain = links.get(current, 0.0) - tot[current] * k_i / two_m
            for c in sorted(links):
                if c == current:
                    continue
                gain = links[c] - tot[c] * k_i / two_m
                if gain > best_gain + MOVE_EPSILON:
                    best, best_gain = c, gain
            tot[best] += k_i

            if best != current:
                community[i] = best
                moves += 1

        if not moves:
            return moved_any
        moved_any = True


def _aggregate(
    graph: BCGraph, labels: np.ndarray
) -> Tuple[List[Dict[int, float]], np.ndarray]:
    """Community graph of a dense labelling (self-loops folded into strength)"""
    n_communities = int(labels.max()) + 1
    u, v, w = graph.edge_arrays
    cu, cv = labels[u], labels[v]
    cross = cu != cv

    adjacency: List[Dict[int, float]] = [{} for _ in range(n_communities)]
    if cross.any():
        lo = np.minimum(cu[cross], cv[cross])
        hi = np.maximum(cu[cross], cv[cross])
        keys, inverse = np.unique(lo * n_communities + hi, return_inverse=True)
        weights = np.bincount(inverse, weights=w[cross])
        for key, weight in zip(keys.tolist(), weights.tolist()):
            a, b = divmod(key, n_communities)
            adjacency[a][b] = weight
            adjacency[b][a] = weight

    strength = np.bincount(
        labels, weights=graph.strength_array, minlength=n_communities
    )
    return adjacency, strength


def _run_levels(
    graph: BCGraph, labels: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Move/aggregate loop starting from the communities in ``labels``"""
    two_m = 2.0 * graph.total_weight
    labels = _canonical_labels(labels.tolist())
    previous_q = _modularity(graph, labels)

    while True:
        adjacency, strength = _aggregate(graph, labels)
        community = np.arange(len(adjacency), dtype=np.int64)
        if not _move_nodes(adjacency, strength, two_m, community, rng):
            break
        labels = _canonical_labels(community[labels].tolist())
        q = _modularity(graph, labels)
        logger.debug(f"Louvain level: {int(labels.max()) + 1} communities, Q={q:.6f}")
        if q - previous_q < LEVEL_TOLERANCE:
            break
        previous_q = q
    return labels


def louvain(graph: BCGraph, seed: int) -> Partition:
    """
    Optimise modularity with the Louvain heuristic.

    The node visit order of every local moving pass is drawn from a
    generator seeded with ``seed``, so a (graph, seed) pair always yields
    the same partition. After the aggregation levels converge, single-node
    moves are retried on the original graph; if any node still moves,
    aggregation restarts from the refined assignment. The result is a local
    optimum under single-node moves at the finest level.
    """
    if graph.is_empty or graph.total_weight <= 0:
        raise EmptyGraphError("cannot partition an empty BC graph")

    rng = np.random.default_rng(seed)
    fine_adjacency = [
        {graph.index[j]: w for j, w in graph.adjacency[node].items()}
        for node in graph.nodes
    ]
    two_m = 2.0 * graph.total_weight

    labels = np.arange(len(graph), dtype=np.int64)
    while True:
        labels = _run_levels(graph, labels, rng)
        if not _move_nodes(fine_adjacency, graph.strength_array, two_m, labels, rng):
            break
        logger.debug("Louvain finest-level pass moved nodes, re-aggregating")

    return Partition._from_labels(graph, labels, seed)


def louvain_ensemble(
    graph: BCGraph, n_runs: int, base_seed: int, workers: int = 1
) -> Ensemble:
    """Run ``n_runs`` Louvain optimisations, run i seeded with base_seed + i"""
    if n_runs < 1:
        raise DataValidationError(f"n_runs must be >= 1, got {n_runs}")

    seeds = [base_seed + run for run in range(n_runs)]
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            partitions = tuple(executor.map(louvain, repeat(graph), seeds))
    else:
        partitions = tuple(louvain(graph, seed) for seed in seeds)

    ensemble = Ensemble(
        partitions=partitions, base_seed=base_seed, graph_digest=graph.digest
    )
    logger.debug(
        f"Ensemble of {n_runs} runs: Q in "
        f"[{min(ensemble.modularities):.6f}, {max(ensemble.modularities):.6f}]"
    )
    return ensemble


def best_modularity(ensemble: Ensemble) -> Partition:
    """Highest-Q partition of an ensemble, earliest run on ties"""
    if not len(ensemble):
        raise DataValidationError("empty ensemble")
    return ensemble[best_run_index(ensemble)]


def best_run_index(ensemble: Ensemble) -> int:
    best = 0
    for run, partition in enumerate(ensemble):
        if partition.modularity > ensemble[best].modularity:
            best = run
    return best
