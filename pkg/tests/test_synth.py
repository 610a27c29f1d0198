"""
Test Suite for Planted Stream Scenarios
"""

import json
import sys
from dataclasses import replace
from pathlib import Path

import pytest

# Setup import path for src
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bc_streams.algorithms import AlgorithmConfig, detect, run_bmla
from bc_streams.corpus import (
    DataValidationError,
    ScenarioError,
    build_bc_graph,
    slice_windows,
)
from bc_streams.synth import (
    GroundTruth,
    PlantedEvent,
    PlantedScenario,
    PlantedStream,
    generate,
    load_scenario,
    score_recovery,
    shipped_scenarios,
)


@pytest.fixture
def scenario_data():
    return {
        "name": "two_streams",
        "windows": 3,
        "refs_per_pub": 6,
        "streams": [
            {"name": "A", "start": 0, "end": 3, "pubs_per_window": 8, "pool_size": 8},
            {"name": "B", "start": 1, "end": 3, "pubs_per_window": 5, "pool_size": 8},
        ],
        "events": [{"boundary": 0, "kind": "split", "participants": ["A", "B"]}],
    }


@pytest.fixture(scope="module")
def split_merge():
    return generate(load_scenario("split_merge"))


def cited_by_stream_and_window(corpus, truth):
    refs = {}
    for pub in corpus:
        key = (truth.membership[pub.id], truth.windows[pub.id])
        refs.setdefault(key, set()).update(pub.refs)
    return refs


class TestScenario:
    def test_shipped_scenarios(self):
        assert {"parallel_streams", "split_merge"} <= set(shipped_scenarios())

    def test_load_by_name_and_by_path(self, tmp_path, scenario_data):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(scenario_data))
        scenario = load_scenario(path)
        assert scenario.name == "two_streams"
        assert scenario.events == [PlantedEvent(0, "split", ("A", "B"))]
        assert load_scenario("split_merge").windows == 4

    def test_unknown_scenario(self):
        with pytest.raises(DataValidationError, match="not found"):
            load_scenario("no_such_scenario")

    def test_round_trip(self, scenario_data):
        scenario = PlantedScenario.from_dict(scenario_data)
        assert PlantedScenario.from_dict(scenario.to_dict()) == scenario

    def test_infeasible_pool(self, scenario_data):
        scenario_data["refs_per_pub"] = 9
        with pytest.raises(ScenarioError, match="infeasible pool size"):
            PlantedScenario.from_dict(scenario_data)

    def test_missing_windows(self, scenario_data):
        del scenario_data["windows"]
        with pytest.raises(ScenarioError):
            PlantedScenario.from_dict(scenario_data)

    @pytest.mark.parametrize(
        "event",
        [
            {"boundary": 1, "kind": "split", "participants": ["A", "B"]},
            {"boundary": 0, "kind": "merge", "participants": ["A", "B"]},
            {"boundary": 0, "kind": "birth", "participants": ["A"]},
            {"boundary": 0, "kind": "death", "participants": ["B"]},
            {"boundary": 2, "kind": "split", "participants": ["A", "B"]},
            {"boundary": 0, "kind": "fusion", "participants": ["A", "B"]},
            {"boundary": 0, "kind": "split", "participants": ["A"]},
        ],
    )
    def test_inconsistent_events(self, scenario_data, event):
        scenario_data["events"] = [event]
        with pytest.raises(ScenarioError):
            PlantedScenario.from_dict(scenario_data)

    @pytest.mark.parametrize("field, value", [("noise", 0.5), ("event_share", 1.0)])
    def test_invalid_rates(self, scenario_data, field, value):
        scenario_data[field] = value
        with pytest.raises(ScenarioError):
            PlantedScenario.from_dict(scenario_data)

    def test_lifespan_outside_windows(self, scenario_data):
        scenario_data["streams"][1]["end"] = 4
        with pytest.raises(ScenarioError, match="lifespan"):
            PlantedScenario.from_dict(scenario_data)

    def test_first_window_must_have_a_stream(self, scenario_data):
        scenario_data["streams"][0]["start"] = 1
        with pytest.raises(ScenarioError, match="first window"):
            PlantedScenario.from_dict(scenario_data)


class TestGenerate:
    def test_deterministic(self):
        scenario = load_scenario("parallel_streams")
        first, truth_first = generate(scenario)
        second, truth_second = generate(scenario)
        assert first.publications == second.publications
        assert truth_first == truth_second

    def test_seed_changes_corpus(self):
        scenario = load_scenario("parallel_streams")
        reseeded = replace(scenario, seed=scenario.seed + 1)
        assert generate(scenario)[0].publications != generate(reseeded)[0].publications

    def test_sizes_and_years(self, split_merge):
        corpus, truth = split_merge
        assert len(corpus) == 4 * 60 + 3 * 30 + 2 * 60
        for pub in corpus:
            window = truth.windows[pub.id]
            assert 2000 + 5 * window <= pub.year < 2005 + 5 * window
            assert len(pub.refs) == 12
            assert truth.membership[pub.id] == pub.label

    def test_zero_noise_keeps_streams_apart(self):
        corpus, truth = generate(load_scenario("parallel_streams"))
        graph = build_bc_graph(corpus)
        for u, v in graph.edges:
            assert truth.membership[u] == truth.membership[v]

    def test_split_child_inherits_part_of_the_parent_pool(self, split_merge):
        corpus, truth = split_merge
        refs = cited_by_stream_and_window(corpus, truth)
        # a quarter of A's twelve references move to C at the split
        assert len(refs[("A", 1)] & refs[("C", 2)]) == 3
        assert not refs[("A", 1)] & refs[("B", 1)]

    def test_merge_absorber_takes_the_union_of_both_pools(self, split_merge):
        corpus, truth = split_merge
        refs = cited_by_stream_and_window(corpus, truth)
        assert refs[("A", 3)] == refs[("A", 2)] | refs[("B", 2)]
        assert len(refs[("A", 3)]) == 24

    @pytest.mark.parametrize("seed", range(20))
    def test_sliced_windows_match_planted_windows(self, seed):
        scenario = PlantedScenario(
            windows=3,
            streams=[PlantedStream("A", 0, 3, 3, 10)],
            refs_per_pub=8,
            seed=seed,
        )
        corpus, truth = generate(scenario)
        sliced = slice_windows(corpus, scenario.delta_t)
        assert len(sliced) == 3
        assert sliced[0][0].start == scenario.start_year
        for window, ids in sliced:
            assert all(truth.windows[pub_id] == window.index for pub_id in ids)

    def test_ground_truth_round_trip(self, split_merge):
        _, truth = split_merge
        assert GroundTruth.from_dict(json.loads(json.dumps(truth.to_dict()))) == truth

    def test_ground_truth_stream_set(self, split_merge):
        _, truth = split_merge
        streams = truth.as_stream_set()
        assert [s.label for s in streams] == ["A", "B", "C"]
        assert [s.windows for s in streams] == [(0, 1, 2, 3), (0, 1, 2), (2, 3)]
        events = [
            (e.kind, e.boundary, e.from_stream, e.to_stream) for e in streams.events
        ]
        assert events == [
            ("split", 1, 0, 2),
            ("merge", 2, 1, 0),
        ]


class TestRecovery:
    def test_truth_scores_perfectly(self, split_merge):
        _, truth = split_merge
        report = score_recovery(truth.as_stream_set(), truth)
        assert report.nmi == 1.0
        assert report.event_recall == 1.0
        assert report.planted_events == 2

    def test_bclc_recovers_split_and_merge(self, split_merge):
        corpus, truth = split_merge
        result = detect(corpus, AlgorithmConfig(algorithm="bclc", n_runs=5))
        report = score_recovery(result.streams, truth)
        assert report.nmi == pytest.approx(1.0)
        assert report.event_recall == 1.0
        kinds = {(e.kind, e.boundary) for e in result.streams.events}
        assert kinds == {("split", 1), ("merge", 2)}

    def test_recall_undefined_without_planted_events(self):
        corpus, truth = generate(load_scenario("parallel_streams"))
        streams = run_bmla(corpus, AlgorithmConfig(algorithm="bmla", n_runs=2))
        report = score_recovery(streams, truth)
        assert report.event_recall is None
        assert report.nmi == pytest.approx(1.0)

    def test_single_stream_on_both_sides(self):
        scenario = PlantedScenario(
            windows=2, streams=[PlantedStream("A", 0, 2, 20, 10)], refs_per_pub=8
        )
        corpus, truth = generate(scenario)
        streams = run_bmla(corpus, AlgorithmConfig(algorithm="bmla", n_runs=2))
        assert score_recovery(streams, truth).nmi == 1.0

    @pytest.mark.slow
    def test_low_noise_keeps_streams_recoverable(self):
        scenario = replace(load_scenario("parallel_streams"), noise=0.1)
        corpus, truth = generate(scenario)
        streams = run_bmla(corpus, AlgorithmConfig(algorithm="bmla", n_runs=3))
        assert score_recovery(streams, truth).nmi > 0.8

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(10))
    def test_noisy_split_merge_is_recovered(self, seed):
        scenario = replace(load_scenario("split_merge"), noise=0.1, seed=seed)
        corpus, truth = generate(scenario)
        result = detect(corpus, AlgorithmConfig(algorithm="bclc", n_runs=20))
        report = score_recovery(result.streams, truth)
        assert report.nmi >= 0.85
        assert report.event_recall >= 0.8
