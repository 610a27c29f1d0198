"""
Planted Stream Scenarios

Generates synthetic time-stamped corpora from a scenario of planted
streams. Every stream owns a reference pool per window; its publications
cite that pool (or, with probability ``noise`` per reference, the pool of
another live stream). Splits hand part of a pool to a new stream, a merge
hands the absorbing stream the union of both pools and pools drift by
replacing a fraction of their references each window.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .compare import StreamPartition, nmi, restrict_to_shared
from .corpus import (
    Corpus,
    DataValidationError,
    Publication,
    RecordParseError,
    ScenarioError,
    UndefinedMeasureError,
)
from .matching import Stream, StreamEvent, StreamSet

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"
EVENT_KINDS = ("split", "merge", "birth", "death")
# Detected events this many boundaries away from a planted one still count
EVENT_TOLERANCE = 1


@dataclass(frozen=True)
class PlantedStream:
    """A stream alive on windows [start, end)"""

    name: str
    start: int
    end: int
    pubs_per_window: int
    pool_size: int

    def alive(self, window: int) -> bool:
        return self.start <= window < self.end

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "start": self.start,
            "end": self.end,
            "pubs_per_window": self.pubs_per_window,
            "pool_size": self.pool_size,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlantedStream":
        try:
            return cls(
                name=str(data["name"]),
                start=int(data["start"]),
                end=int(data["end"]),
                pubs_per_window=int(data["pubs_per_window"]),
                pool_size=int(data["pool_size"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"invalid stream entry {data!r}: {e}")


@dataclass(frozen=True)
class PlantedEvent:
    """
    Event at boundary k (between windows k and k + 1).

    Participants: split [parent, child], merge [absorber, absorbed],
    birth [stream], death [stream].
    """

    boundary: int
    kind: str
    participants: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "boundary": self.boundary,
            "kind": self.kind,
            "participants": list(self.participants),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlantedEvent":
        try:
            return cls(
                boundary=int(data["boundary"]),
                kind=str(data["kind"]),
                participants=tuple(str(p) for p in data["participants"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"invalid event entry {data!r}: {e}")


@dataclass
class PlantedScenario:
    windows: int
    streams: List[PlantedStream]
    events: List[PlantedEvent] = field(default_factory=list)
    noise: float = 0.0
    pool_drift: float = 0.0
    seed: int = 0
    delta_t: int = 5
    start_year: int = 2000
    refs_per_pub: int = 10
    event_share: float = 0.5
    name: str = "scenario"

    def stream(self, name: str) -> PlantedStream:
        for stream in self.streams:
            if stream.name == name:
                return stream
        raise ScenarioError(f"unknown stream '{name}'")

    def validate(self):
        if self.windows < 1:
            raise ScenarioError(f"windows must be >= 1, got {self.windows}")
        if not 0.0 <= self.noise < 0.5:
            raise ScenarioError(f"noise must be in [0, 0.5), got {self.noise}")
        if not 0.0 <= self.pool_drift <= 1.0:
            raise ScenarioError(f"pool_drift must be in [0, 1], got {self.pool_drift}")
        if not 0.0 < self.event_share < 1.0:
            raise ScenarioError(
                f"event_share must be in (0, 1), got {self.event_share}"
            )
        if self.delta_t < 1 or self.refs_per_pub < 1:
            raise ScenarioError("delta_t and refs_per_pub must be >= 1")
        if not self.streams:
            raise ScenarioError("scenario has no streams")

        if not any(s.start == 0 for s in self.streams):
            raise ScenarioError("no stream is alive in the first window")
        names = [s.name for s in self.streams]
        if len(set(names)) != len(names):
            raise ScenarioError("stream names must be unique")
        for s in self.streams:
            if not 0 <= s.start < s.end <= self.windows:
                raise ScenarioError(
                    f"stream '{s.name}' lifespan [{s.start}, {s.end}) outside "
                    f"0..{self.windows}"
                )
            if s.pubs_per_window < 1:
                raise ScenarioError(f"stream '{s.name}' needs pubs_per_window >= 1")
            if self.refs_per_pub > s.pool_size:
                raise ScenarioError(
                    f"infeasible pool size for stream '{s.name}': "
                    f"{self.refs_per_pub} refs per publication > pool of {s.pool_size}"
                )

        for event in self.events:
            self._validate_event(event)

    def _validate_event(self, event: PlantedEvent):
        k = event.boundary
        if event.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind '{event.kind}'")
        if not 0 <= k < self.windows - 1:
            raise ScenarioError(f"event boundary {k} outside 0..{self.windows - 2}")
        expected = 2 if event.kind in ("split", "merge") else 1
        if len(event.participants) != expected:
            raise ScenarioError(
                f"{event.kind} at boundary {k} needs {expected} participants"
            )
        streams = [self.stream(name) for name in event.participants]

        if event.kind == "split":
            parent, child = streams
            if not (parent.alive(k) and parent.alive(k + 1)):
                raise ScenarioError(f"split parent '{parent.name}' not alive at {k}")
            if child.start != k + 1:
                raise ScenarioError(f"split child '{child.name}' must start at {k + 1}")
            if round(self.event_share * parent.pool_size) < 1:
                raise ScenarioError(f"split of '{parent.name}' hands over no refs")
            if round(self.event_share * parent.pool_size) > child.pool_size:
                raise ScenarioError(f"split child '{child.name}' pool too small")
        elif event.kind == "merge":
            absorber, absorbed = streams
            if not (absorber.alive(k) and absorber.alive(k + 1)):
                raise ScenarioError(
                    f"merge absorber '{absorber.name}' not alive at {k}"
                )
            if not absorbed.alive(k) or absorbed.end != k + 1:
                raise ScenarioError(
                    f"merged stream '{absorbed.name}' must end at boundary {k}"
                )
        elif event.kind == "birth":
            if streams[0].start != k + 1:
                raise ScenarioError(
                    f"born stream '{streams[0].name}' must start at {k + 1}"
                )
        elif streams[0].end != k + 1:
            raise ScenarioError(f"dying stream '{streams[0].name}' must end at {k + 1}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "windows": self.windows,
            "streams": [s.to_dict() for s in self.streams],
            "events": [e.to_dict() for e in self.events],
            "noise": self.noise,
            "pool_drift": self.pool_drift,
            "seed": self.seed,
            "delta_t": self.delta_t,
            "start_year": self.start_year,
            "refs_per_pub": self.refs_per_pub,
            "event_share": self.event_share,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PlantedScenario":
        if "windows" not in data or "streams" not in data:
            raise ScenarioError("scenario needs 'windows' and 'streams'")
        try:
            scenario = cls(
                name=str(data.get("name", "scenario")),
                windows=int(data["windows"]),
                streams=[PlantedStream.from_dict(s) for s in data["streams"]],
                events=[PlantedEvent.from_dict(e) for e in data.get("events", [])],
                noise=float(data.get("noise", 0.0)),
                pool_drift=float(data.get("pool_drift", 0.0)),
                seed=int(data.get("seed", 0)),
                delta_t=int(data.get("delta_t", 5)),
                start_year=int(data.get("start_year", 2000)),
                refs_per_pub=int(data.get("refs_per_pub", 10)),
                event_share=float(data.get("event_share", 0.5)),
            )
        except (TypeError, ValueError) as e:
            raise ScenarioError(f"invalid scenario field: {e}")
        scenario.validate()
        return scenario


def load_scenario(source: Union[str, Path]) -> PlantedScenario:
    """Load a scenario file, or a shipped scenario by name"""
    path = Path(source)
    if not path.exists():
        shipped = SCENARIO_DIR / f"{source}.json"
        if not shipped.exists():
            raise DataValidationError(f"scenario '{source}' not found")
        path = shipped
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"invalid JSON ({e.msg})", e.lineno, str(path))
    return PlantedScenario.from_dict(data)


def shipped_scenarios() -> List[str]:
    return sorted(path.stem for path in SCENARIO_DIR.glob("*.json"))


@dataclass
class GroundTruth:
    """Planted stream and window of every generated publication"""

    membership: Dict[str, str]
    windows: Dict[str, int]
    events: List[PlantedEvent]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "membership": dict(sorted(self.membership.items())),
            "windows": dict(sorted(self.windows.items())),
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GroundTruth":
        return cls(
            membership=dict(data["membership"]),
            windows={pub: int(w) for pub, w in data["windows"].items()},
            events=[PlantedEvent.from_dict(e) for e in data.get("events", [])],
        )

    def partition(self, name: str = "truth") -> StreamPartition:
        return StreamPartition(assignment=dict(self.membership), name=name)

    def as_stream_set(self) -> StreamSet:
        """The planted streams and split/merge events as a StreamSet"""
        names = sorted(set(self.membership.values()))
        stream_id = {name: i for i, name in enumerate(names)}
        pubs: Dict[str, Dict[int, List[str]]] = {name: {} for name in names}
        for pub in sorted(self.membership):
            pubs[self.membership[pub]].setdefault(self.windows[pub], []).append(pub)

        streams = tuple(
            Stream(
                stream_id=stream_id[name],
                clusters=tuple((w, 0) for w in sorted(pubs[name])),
                publications={w: tuple(p) for w, p in sorted(pubs[name].items())},
                label=name,
            )
            for name in names
        )
        events = []
        for event in self.events:
            if event.kind == "split":
                source, target = event.participants
            elif event.kind == "merge":
                target, source = event.participants
            else:
                continue
            events.append(
                StreamEvent(
                    boundary=event.boundary,
                    kind=event.kind,
                    from_stream=stream_id[source],
                    to_stream=stream_id[target],
                    from_cluster=0,
                    to_cluster=0,
                    delta_q=float("nan"),
                    omega=0.0,
                )
            )
        return StreamSet(streams=streams, events=tuple(events))


class _PoolFactory:
    """Fresh, never reused reference ids per stream"""

    def __init__(self):
        self._counters: Dict[str, int] = {}

    def fresh(self, stream: str, count: int) -> List[str]:
        start = self._counters.get(stream, 0)
        self._counters[stream] = start + count
        return [f"{stream}-r{i:05d}" for i in range(start, start + count)]


def _take(rng: np.random.Generator, pool: List[str], count: int) -> List[str]:
    if count <= 0:
        return []
    picked = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(picked.tolist())]


def _evolve_pools(
    scenario: PlantedScenario,
    rng: np.random.Generator,
    factory: _PoolFactory,
) -> List[Dict[str, List[str]]]:
    """Reference pool of every live stream, window by window"""
    splits_into = {
        e.participants[1]: (e.participants[0], e)
        for e in scenario.events
        if e.kind == "split"
    }
    split_parents = {
        (e.boundary, e.participants[0]): e.participants[1]
        for e in scenario.events
        if e.kind == "split"
    }
    merges_into = {
        (e.boundary, e.participants[0]): e.participants[1]
        for e in scenario.events
        if e.kind == "merge"
    }
    handed_over: Dict[str, List[str]] = {}

    pools: List[Dict[str, List[str]]] = []
    for window in range(scenario.windows):
        current: Dict[str, List[str]] = {}
        previous = pools[-1] if pools else {}
        # continuing streams first, so split parents hand over before children start
        live = [s for s in scenario.streams if s.alive(window)]
        for stream in sorted(live, key=lambda s: s.start == window):
            size = stream.pool_size
            k = window - 1

            if stream.start == window:
                inherited = handed_over.pop(stream.name, [])
                if stream.name in splits_into and not inherited:
                    raise ScenarioError(f"split parent of '{stream.name}' has no pool")
                n_fresh = max(size - len(inherited), 0)
                pool = inherited + factory.fresh(stream.name, n_fresh)
            elif (k, stream.name) in split_parents:
                child = split_parents[(k, stream.name)]
                old = previous[stream.name]
                n_given = min(
                    max(round(scenario.event_share * len(old)), 1), len(old) - 1
                )
                given = _take(rng, old, n_given)
                given_set = set(given)
                handed_over[child] = given
                kept = [ref for ref in old if ref not in given_set]
                pool = kept + factory.fresh(stream.name, max(size - len(kept), 0))
            else:
                old = previous[stream.name]
                if (k, stream.name) in merges_into:
                    old = old + previous[merges_into[(k, stream.name)]]
                n_replaced = int(round(scenario.pool_drift * len(old)))
                if n_replaced:
                    kept = _take(rng, old, len(old) - n_replaced)
                    pool = kept + factory.fresh(stream.name, n_replaced)
                else:
                    pool = list(old)
            current[stream.name] = pool
        pools.append(current)
    return pools


def generate(scenario: PlantedScenario) -> Tuple[Corpus, GroundTruth]:
    """
    Generate a corpus and its ground truth from a planted scenario.

    Generation is a pure function of the scenario: the same scenario
    (seed included) always yields the same corpus.
    """
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    factory = _PoolFactory()
    pools = _evolve_pools(scenario, rng, factory)

    publications: List[Publication] = []
    membership: Dict[str, str] = {}
    windows: Dict[str, int] = {}
    for window, window_pools in enumerate(pools):
        live = sorted(window_pools)
        first_year = scenario.start_year + window * scenario.delta_t
        anchored = False
        for stream in scenario.streams:
            if stream.name not in window_pools:
                continue
            own_pool = window_pools[stream.name]
            foreign = [name for name in live if name != stream.name]
            for i in range(stream.pubs_per_window):
                n_foreign = (
                    int(rng.binomial(scenario.refs_per_pub, scenario.noise))
                    if foreign and scenario.noise > 0
                    else 0
                )
                refs = _take(rng, own_pool, scenario.refs_per_pub - n_foreign)
                if n_foreign:
                    other = window_pools[foreign[int(rng.integers(len(foreign)))]]
                    refs += _take(rng, other, min(n_foreign, len(other)))
                pub_id = f"{stream.name}-w{window}-{i:03d}"
                year = first_year + int(rng.integers(scenario.delta_t))
                # the first publication of a window opens it on its first year
                if not anchored:
                    year, anchored = first_year, True
                publications.append(
                    Publication(
                        id=pub_id, year=year, refs=frozenset(refs), label=stream.name
                    )
                )
                membership[pub_id] = stream.name
                windows[pub_id] = window

    logger.info(
        f"Generated scenario '{scenario.name}': {len(publications)} publications, "
        f"{len(scenario.streams)} streams, {len(scenario.events)} events"
    )
    return Corpus(publications), GroundTruth(
        membership=membership, windows=windows, events=list(scenario.events)
    )


@dataclass
class RecoveryReport:
    nmi: float
    event_recall: Optional[float]
    n_shared: int
    planted_events: int
    detected_events: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nmi": self.nmi,
            "event_recall": self.event_recall,
            "n_shared": self.n_shared,
            "planted_events": self.planted_events,
            "detected_events": self.detected_events,
        }


def score_recovery(detected: StreamSet, truth: GroundTruth) -> RecoveryReport:
    """
    Compare detected streams with the planted ones.

    NMI is computed on the publications both cover. A planted split or
    merge counts as recalled when a detected event of the same kind lies
    within one boundary of it. Event recall is None when nothing was
    planted.
    """
    p_detected, p_truth = restrict_to_shared(
        StreamPartition.from_stream_set(detected, name="detected"),
        truth.partition(),
    )
    try:
        score = nmi(p_detected, p_truth)
    except UndefinedMeasureError:
        # one side is a single stream: identical only if both are
        score = 1.0 if len(p_detected.sizes) == len(p_truth.sizes) == 1 else 0.0

    planted = [e for e in truth.events if e.kind in ("split", "merge")]
    recall = None
    if planted:
        hits = sum(
            any(
                d.kind == e.kind and abs(d.boundary - e.boundary) <= EVENT_TOLERANCE
                for d in detected.events
            )
            for e in planted
        )
        recall = hits / len(planted)

    report = RecoveryReport(
        nmi=score,
        event_recall=recall,
        n_shared=len(p_truth),
        planted_events=len(planted),
        detected_events=len(detected.events),
    )
    logger.info(f"Recovery: NMI={score:.4f}, event recall={recall}")
    return report
