from fractions import Fraction

import pytest

from acps.backends import MockBackend
from acps.core import CanonicalAnswer, Query
from acps.demos import InterventionPrompt
from acps.errors import (
    AllSamplesUnparseable,
    EmptyScores,
    LengthMismatch,
    NoParseableSamples,
    SafetyRefusal,
    WeightCountMismatch,
    WeightOutOfRange,
)
from acps.estimator import (
    CausalEstimate,
    ClusterEvidence,
    ExternalFactor,
    aggregate,
    answer_distribution,
    external_factor,
    majority_vote,
    sample_answers,
    select_answer,
)

GLUE = Query("g", "Where do adults use glue sticks?",
             choices={"A": "classroom", "B": "desk drawer", "C": "at school", "D": "office", "E": "kitchen drawer"},
             task_kind="multiple_choice")
PROMPT = InterventionPrompt("intervention prompt", ("d1", "d2"), 1)


def scripted(answers):
    def responder(req):
        a = answers[req.sample_index]
        if isinstance(a, Exception):
            raise a
        return f"<improved_rs> #x → #{req.sample_index} </improved_rs> \\boxed{{{a}}}" if a is not None else "no box"
    return MockBackend(responder)


class TestSampleAnswers:
    def test_three_samples_at_answer_temperature(self):
        seen = []

        def responder(req):
            seen.append((req.temperature, req.sample_index, req.prompt))
            return "\\boxed{D}"

        samples = sample_answers(PROMPT, 3, MockBackend(responder), GLUE, 0.7)
        assert len(samples) == 3
        assert sorted(seen) == [(0.7, i, "intervention prompt") for i in range(3)]

    def test_option_text_canonicalized(self):
        samples = sample_answers(PROMPT, 3, scripted(["D", "D", "office"]), GLUE)
        assert [s.canonical.value for s in samples] == ["D", "D", "D"]
        assert samples[2].improved_trace == "#x → #2"

    def test_unparseable_kept_as_sentinel(self):
        samples = sample_answers(PROMPT, 4, scripted(["D", None, "garage", SafetyRefusal("x")]), GLUE)
        assert [s.parseable for s in samples] == [True, False, False, False]
        assert [s.failure for s in samples[1:]] == ["no_boxed_answer", "UnmappableChoice", "safety_refusal"]
        assert answer_distribution(samples) == {"D": 1.0}

    def test_all_unparseable(self):
        with pytest.raises(AllSamplesUnparseable):
            sample_answers(PROMPT, 2, scripted([None, "garage"]), GLUE)

    def test_deterministic(self):
        a = sample_answers(PROMPT, 3, scripted(["A", "B", "c"]), GLUE, parallelism=3)
        b = sample_answers(PROMPT, 3, scripted(["A", "B", "c"]), GLUE, parallelism=1)
        assert [s.to_dict() for s in a] == [s.to_dict() for s in b]

    def test_transport_error_propagates(self):
        with pytest.raises(RuntimeError):
            sample_answers(PROMPT, 2, scripted(["A", RuntimeError("wire")]), GLUE)


class TestDistribution:
    def test_case_study_values(self):
        assert answer_distribution(["D", "D", "C"]) == pytest.approx({"D": 2 / 3, "C": 1 / 3}, abs=1e-15)
        assert answer_distribution(["A", "A", "A"]) == {"A": 1.0}
        assert answer_distribution([CanonicalAnswer("X")]) == {"X": 1.0}

    def test_none_excluded_from_denominator(self):
        assert answer_distribution(["A", None, "B", None]) == {"A": 0.5, "B": 0.5}

    def test_empty(self):
        with pytest.raises(NoParseableSamples):
            answer_distribution([None])


class TestExternalFactor:
    def test_defaults(self):
        assert external_factor(Query("1", "q")).product == 1.0
        f = external_factor(Query("1", "q", ("a", "b", "c")))
        assert f.per_element == (1.0, 1.0, 1.0) and f.product == 1.0

    def test_weights(self):
        assert external_factor(Query("1", "q", ("a", "b")), [0.5, 0.5]).product == 0.25

    def test_errors(self):
        with pytest.raises(WeightCountMismatch):
            external_factor(Query("1", "q", ("a",)), [0.5, 0.5])
        with pytest.raises(WeightOutOfRange):
            external_factor(Query("1", "q", ("a",)), [0.0])
        with pytest.raises(WeightOutOfRange):
            external_factor(Query("1", "q", ("a",)), [1.5])


class TestAggregate:
    def test_commonsense_case(self):
        weights = [1 / 3, 1 / 3, 2 / 9, 1 / 9]
        dists = [{"D": 1 / 3}, {"D": 2 / 3}, {"C": 2 / 3}, {"A": 1.0}]
        est = aggregate(weights, dists)
        assert est.scores["D"] == pytest.approx(0.3333, abs=5e-4)
        assert est.scores["C"] == pytest.approx(0.1481, abs=5e-4)
        assert est.scores["A"] == pytest.approx(0.1111, abs=5e-4)
        assert select_answer(est) == "D"

    def test_hotpot_case(self):
        weights = [3 / 8, 1 / 4, 1 / 4, 1 / 8]
        dists = [
            {"kyle busch": 1.0},
            {"carl edwards": 2 / 3, "not mentioned": 1 / 3},
            {"kyle busch": 2 / 3, "not mentioned": 1 / 3},
            {"brad keselowski": 2 / 3, "not mentioned": 1 / 3},
        ]
        est = aggregate(weights, dists)
        assert est.scores["kyle busch"] == pytest.approx(0.5417, abs=5e-4)
        assert est.scores["carl edwards"] == pytest.approx(0.1667, abs=5e-4)
        assert est.scores["brad keselowski"] == pytest.approx(0.0833, abs=5e-4)
        assert est.chosen == "kyle busch"

    def test_exact_rational_values(self):
        weights = [Fraction(1, 3), Fraction(1, 3), Fraction(2, 9), Fraction(1, 9)]
        expected_c = weights[2] * Fraction(2, 3)
        est = aggregate([float(w) for w in weights], [{"D": 1 / 3}, {"D": 2 / 3}, {"C": 2 / 3}, {"A": 1.0}])
        assert abs(est.scores["C"] - float(expected_c)) < 1e-15
        assert abs(est.scores["D"] - 1 / 3) < 1e-15

    def test_identity(self):
        est = aggregate([1.0], [{"x": 1.0}])
        assert est.scores == {"x": 1.0} and est.chosen == "x"

    def test_external_factor_scales(self):
        est = aggregate([0.5, 0.5], [{"a": 1.0}, {"b": 1.0}], ExternalFactor((0.5, 0.5), 0.25))
        assert est.scores == {"a": 0.125, "b": 0.125} and est.external_factor == 0.25

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            aggregate([1.0], [{"a": 1.0}, {"b": 1.0}])


class TestSelection:
    def test_scale_invariance(self):
        scores = {"D": 0.3333, "C": 0.1481, "A": 0.1111}
        assert select_answer(CausalEstimate(scores, 1.0, "")) == "D"
        assert select_answer(CausalEstimate({k: 2 * v for k, v in scores.items()}, 2.0, "")) == "D"

    def test_tie_lexicographic(self):
        assert select_answer(CausalEstimate({"b": 0.5, "a": 0.5}, 1.0, "")) == "a"

    def test_tie_broken_by_raw_count_first(self):
        c0 = ClusterEvidence(0, 0.5, [], {"b": 1.0})
        c1 = ClusterEvidence(1, 0.5, [], {"a": 1.0})
        c0.samples = sample_answers(PROMPT, 2, scripted(["b", "b"]), Query("q", "q?"))
        c1.samples = sample_answers(PROMPT, 1, scripted(["a"]), Query("q", "q?"))
        est = aggregate([0.5, 0.5], [c0.distribution, c1.distribution], 1.0, [c0, c1])
        assert est.chosen == "b" and select_answer(est) == "b"

    def test_empty(self):
        with pytest.raises(EmptyScores):
            select_answer(CausalEstimate({}, 1.0, ""))


class TestMajority:
    def test_mode(self):
        assert majority_vote(["A", "A", "B"]) == "A"

    def test_single(self):
        assert majority_vote(["Z"]) == "Z"

    def test_debias_fixture(self):
        # cluster 0 (weight 0.9) answered A, A, B; cluster 1 (weight 0.1) answered B, B, B
        pool = ["A", "A", "B", "B", "B", "B"]
        assert majority_vote(pool) == "B"
        est = aggregate([0.9, 0.1], [answer_distribution(pool[:3]), answer_distribution(pool[3:])])
        assert est.scores == pytest.approx({"A": 0.6, "B": 0.4}, abs=1e-12)
        assert select_answer(est) == "A"

    def test_empty(self):
        with pytest.raises(NoParseableSamples):
            majority_vote([None, None])
