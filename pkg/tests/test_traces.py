from itertools import product

import numpy as np
import pytest

from acps.backends import CompletionResult, MockBackend
from acps.core import Query, SketchTrace
from acps.errors import AllTracesFailed, DimensionMismatch, InconsistentM, KTooLarge, SafetyRefusal
from acps.router import Paradigm
from acps.traces import (
    DEFAULT_SCHEDULE,
    TemperatureSchedule,
    cluster_traces,
    cluster_weights,
    generate_traces,
    kmeans,
    l2_normalize,
    partition_sse,
    select_representatives,
)

QUERY = Query("q1", "Where do adults use glue sticks?")


def brute_force_sse(points, K):
    """Smallest SSE over every labelling of the points into exactly K nonempty groups."""
    best = np.inf
    for labels in product(range(K), repeat=len(points)):
        if len(set(labels)) == K and labels[0] == 0:
            best = min(best, partition_sse(points, labels))
    return best


class TestSchedule:
    def test_default_sweep(self):
        assert DEFAULT_SCHEDULE.values == (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)

    @pytest.mark.parametrize("values", [(), (0.5, 0.5), (1.0, 0.5), (0.0, 2.5), (-0.1,)])
    def test_invalid(self, values):
        with pytest.raises(ValueError):
            TemperatureSchedule(values)


class TestGenerate:
    def test_nine_calls_at_sweep_temperatures(self):
        seen = []

        def responder(req):
            seen.append(req.temperature)
            return "<think>\n#a → #b\n</think>\n\\boxed{x}"

        traces = generate_traces(QUERY, Paradigm.CC, DEFAULT_SCHEDULE, MockBackend(responder))
        assert sorted(seen) == list(DEFAULT_SCHEDULE.values)
        assert [t.schedule_index for t in traces] == list(range(9))
        assert len({t.text for t in traces}) == 1
        assert all(t.step_count == 1 and t.boxed_answer == "x" for t in traces)

    def test_refusal_and_empty_are_dropped(self):
        def responder(req):
            if req.temperature == 2.0:
                raise SafetyRefusal("no")
            if req.temperature == 1.0:
                return CompletionResult("   ", 0, 0, "t")
            return "\\boxed{y}"

        drops = []
        traces = generate_traces(QUERY, Paradigm.CS, DEFAULT_SCHEDULE, MockBackend(responder),
                                 drops=drops, parallelism=4)
        assert len(traces) == 7
        assert [(d.schedule_index, d.reason) for d in drops] == [(4, "empty_completion"), (8, "safety_refusal")]

    def test_all_failed(self):
        def responder(req):
            raise SafetyRefusal("no")

        with pytest.raises(AllTracesFailed):
            generate_traces(QUERY, Paradigm.CS, DEFAULT_SCHEDULE, MockBackend(responder))

    def test_transport_errors_propagate(self):
        def responder(req):
            raise RuntimeError("wire")

        with pytest.raises(RuntimeError):
            generate_traces(QUERY, Paradigm.CS, DEFAULT_SCHEDULE, MockBackend(responder))

    def test_order_independent_of_completion_order(self):
        import time

        def responder(req):
            time.sleep(0.002 * (2.0 - req.temperature))
            return f"\\boxed{{{req.temperature}}}"

        traces = generate_traces(QUERY, Paradigm.CS, DEFAULT_SCHEDULE, MockBackend(responder), parallelism=9)
        assert [t.temperature for t in traces] == list(DEFAULT_SCHEDULE.values)


class TestKMeans:
    def test_k1_centroid_is_mean_of_normalized(self):
        vecs = [[1, 0], [0, 2], [3, 3]]
        res = kmeans(vecs, 1, seed=0)
        assert np.allclose(res.centroids[0], l2_normalize(vecs).mean(axis=0))
        assert set(res.assignments) == {0}

    def test_one_dimensional_example(self):
        vecs = [[x, 1.0] for x in (0, 0.1, 10, 10.1)]
        res = kmeans(vecs, 2, seed=0)
        a = res.assignments
        assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]
        points = l2_normalize(vecs)
        assert res.sse == pytest.approx(brute_force_sse(points, 2), abs=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        vecs = rng.standard_normal((9, 5))
        a, b = kmeans(vecs, 4, seed=11), kmeans(vecs, 4, seed=11)
        assert np.array_equal(a.assignments, b.assignments) and a.sse == b.sse

    def test_errors(self):
        with pytest.raises(KTooLarge):
            kmeans([[1, 0]], 2)
        with pytest.raises(KTooLarge):
            kmeans([[1, 0]], 0)
        with pytest.raises(DimensionMismatch):
            kmeans([[1, 0], [1, 0, 0]], 1)

    def test_identical_points_still_fill_k_clusters(self):
        res = kmeans([[1.0, 1.0]] * 5, 3, seed=0)
        assert sorted(np.bincount(res.assignments, minlength=3).tolist())[0] >= 1
        assert res.sse == pytest.approx(0.0, abs=1e-12)

    def test_history_non_increasing(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            res = kmeans(rng.standard_normal((12, 4)), 3, seed=int(rng.integers(1000)))
            assert all(b <= a + 1e-12 for a, b in zip(res.history, res.history[1:]))
            assert res.sse == pytest.approx(partition_sse(res.points, res.assignments), abs=1e-12)


class TestRepresentatives:
    def test_singleton(self):
        pts = np.array([[1.0, 0.0]])
        assert select_representatives([0], pts, pts) == [0]

    def test_equidistant_tie_goes_to_smaller_schedule_index(self):
        pts = np.array([[1.0, 0.0], [0.0, 1.0]])
        centroid = pts.mean(axis=0, keepdims=True)
        assert select_representatives([0, 0], centroid, pts, schedule_indices=[5, 2]) == [1]
        assert select_representatives([0, 0], centroid, pts, schedule_indices=[1, 2]) == [0]

    def test_member_at_centroid(self):
        pts = np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]])
        assert select_representatives([0, 0, 0], np.array([[0.5, 0.5]]), pts) == [2]


class TestWeights:
    @pytest.mark.parametrize(
        "sizes,M,expected",
        [
            ([3, 3, 2, 1], 9, [1 / 3, 1 / 3, 2 / 9, 1 / 9]),
            ([3, 2, 2, 1], 8, [0.375, 0.25, 0.25, 0.125]),
            ([5], 5, [1.0]),
        ],
    )
    def test_case_study_weights(self, sizes, M, expected):
        assignments = [k for k, n in enumerate(sizes) for _ in range(n)]
        assert cluster_weights(assignments, M) == pytest.approx(expected, abs=1e-15)

    def test_inconsistent(self):
        with pytest.raises(InconsistentM):
            cluster_weights([0, 0, 1], 4)


def _traces(n):
    return [SketchTrace.parse(f"\\boxed{{{i}}}", DEFAULT_SCHEDULE.values[i], i, 1) for i in range(n)]


def test_cluster_traces_clamps_k_and_orders_clusters(caplog):
    vecs = [[1, 0, 0], [0, 1, 0], [1, 0.05, 0]]
    with caplog.at_level("WARNING", logger="acps.traces"):
        clustering = cluster_traces(_traces(3), vecs, K=4, seed=0)
    assert "clamping" in caplog.text
    assert len(clustering.clusters) == 3 and clustering.k_requested == 4
    assert sum(clustering.weights) == pytest.approx(1.0, abs=1e-12)


def test_cluster_traces_partition_and_weights():
    rng = np.random.default_rng(2)
    vecs = rng.standard_normal((9, 6))
    c = cluster_traces(_traces(9), vecs, K=4, seed=3)
    members = sorted(i for cl in c.clusters for i in cl.members)
    assert members == list(range(9))
    assert [cl.size for cl in c.clusters] == sorted((cl.size for cl in c.clusters), reverse=True)
    for cl in c.clusters:
        assert cl.representative_index in cl.members
        assert cl.weight == cl.size / 9
