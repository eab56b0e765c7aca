import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from irlab.corpus import Qrels, RunEntry
from irlab.metrics import (
    RankedList,
    average_precision,
    evaluate_run,
    mean_average_precision,
    ndcg_at_k,
    precision_at_k,
    random_ranking_ap,
)


# --- brute-force oracle: direct definitions, no shared code ---------------------


def oracle_precision(ids, grades, k):
    return len([d for d in ids[:k] if grades.get(d, 0) > 0]) / k


def oracle_ndcg(ids, grades, k):
    def dcg(gs):
        return sum((2**g - 1) / math.log2(r + 1) for r, g in enumerate(gs[:k], start=1))

    best = max(
        (dcg([grades[d] for d in perm]) for perm in itertools.permutations(list(grades))),
        default=0.0,
    )
    return dcg([grades.get(d, 0) for d in ids]) / best if best > 0 else 0.0


def oracle_ap(ids, grades):
    relevant = {d for d, g in grades.items() if g > 0}
    if not relevant:
        return 0.0
    precisions = [oracle_precision(ids, grades, r) for r, d in enumerate(ids, start=1) if d in relevant]
    return sum(precisions) / len(relevant)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 5))
    ids = [f"d{i}" for i in range(n)]
    order = draw(st.permutations(ids))
    grades = {d: draw(st.integers(0, 3)) for d in ids}
    return list(order), grades


class TestExamples:
    def test_precision(self):
        assert precision_at_k(["a"], {"a": 1}, 1) == 1.0
        assert precision_at_k(list("abcde"), {"c": 1}, 10) == pytest.approx(0.1)
        assert precision_at_k(list("abc"), {}, 3) == 0.0

    def test_ndcg(self):
        assert ndcg_at_k(["a", "b"], {"a": 1}, 10) == 1.0
        assert ndcg_at_k(["b", "a"], {"a": 1}, 10) == pytest.approx(1 / math.log2(3))
        assert round(ndcg_at_k(["b", "a"], {"a": 1}, 10), 3) == 0.631
        assert ndcg_at_k(["a"], {"a": 0}, 10) == 0.0

    def test_ap(self):
        assert average_precision(list("abcde"), {"a": 1}) == 1.0
        assert average_precision(list("abcde"), {"c": 1}) == pytest.approx(1 / 3)

    def test_unretrieved_relevant_counts_as_zero(self):
        assert average_precision(["a"], {"a": 1, "z": 1}) == pytest.approx(0.5)

    def test_random_ranking_expectation(self):
        # One relevant document among five: mean of 1/r over uniform r.
        assert random_ranking_ap(5) == pytest.approx((1 + 1 / 2 + 1 / 3 + 1 / 4 + 1 / 5) / 5)
        assert random_ranking_ap(5) == pytest.approx(0.4567, abs=1e-4)

    def test_bad_cutoff(self):
        with pytest.raises(ValueError):
            precision_at_k(["a"], {}, 0)


class TestAgainstOracle:
    @given(instances(), st.integers(1, 6))
    def test_metrics_match_definitions(self, inst, k):
        ids, grades = inst
        assert abs(precision_at_k(ids, grades, k) - oracle_precision(ids, grades, k)) <= 1e-12
        assert abs(ndcg_at_k(ids, grades, k) - oracle_ndcg(ids, grades, k)) <= 1e-12
        assert abs(average_precision(ids, grades) - oracle_ap(ids, grades)) <= 1e-12

    @given(instances(), st.integers(1, 6))
    def test_bounds(self, inst, k):
        ids, grades = inst
        for v in (precision_at_k(ids, grades, k), ndcg_at_k(ids, grades, k), average_precision(ids, grades)):
            assert 0.0 <= v <= 1.0 + 1e-12


class TestRankedList:
    def test_ties_break_by_doc_id(self):
        r = RankedList.from_scores("q", {"b": 1.0, "a": 1.0, "c": 2.0})
        assert r.docids == ["c", "a", "b"]

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            RankedList("q", (("a", 1.0), ("b", 2.0)))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            RankedList("q", (("a", 1.0), ("a", 1.0)))


def run_of(scores):
    return [RunEntry(q, d, 0, s) for q, ds in scores.items() for d, s in ds.items()]


class TestEvaluateRun:
    def test_perfect_run(self):
        qrels = Qrels({("q1", "a"): 1, ("q2", "c"): 1})
        rep = evaluate_run(run_of({"q1": {"a": 2, "b": 1}, "q2": {"c": 5, "d": 0}}), qrels, (1, 10))
        for name in ("NDCG@1", "NDCG@10", "P@1", "MAP"):
            assert rep.means[name] == 1.0
        assert rep.means["P@10"] == pytest.approx(0.1)

    def test_run_is_resorted_by_score(self):
        qrels = Qrels({("q1", "b"): 1})
        rep = evaluate_run([RunEntry("q1", "a", 1, 0.1), RunEntry("q1", "b", 2, 0.9)], qrels)
        assert rep.per_query["q1"]["MAP"] == 1.0

    def test_unjudged_query_flagged(self):
        rep = evaluate_run(run_of({"q9": {"a": 1}}), Qrels({("q1", "a"): 1}))
        assert rep.unjudged_queries == ["q9"]
        assert rep.per_query["q9"]["NDCG@1"] == 0.0

    def test_empty_run(self):
        with pytest.raises(ValueError):
            evaluate_run([], Qrels())

    def test_duplicate_entries_rejected(self):
        with pytest.raises(ValueError):
            evaluate_run([RunEntry("q", "a", 1, 1.0), RunEntry("q", "a", 2, 0.5)], Qrels())

    def test_map_is_mean_of_ap(self):
        qrels = Qrels({("q1", "a"): 1, ("q2", "d"): 1})
        runs = {"q1": ["a", "b"], "q2": ["c", "d"]}
        assert mean_average_precision(runs, qrels) == pytest.approx(0.75)

    def test_outputs(self, tmp_path):
        qrels = Qrels({("q1", "a"): 1})
        rep = evaluate_run(run_of({"q1": {"a": 1.0, "b": 3.0}}), qrels, (1, 10))
        rep.write_csv(tmp_path / "m.csv")
        rep.write_table(tmp_path / "t.csv")
        rep.write_json(tmp_path / "s.json")
        long = (tmp_path / "m.csv").read_text().splitlines()
        assert long[0] == "qid,metric,value" and "q1,MAP,0.5" in long
        wide = (tmp_path / "t.csv").read_text().splitlines()
        assert wide[0] == "qid,NDCG@1,NDCG@10,P@1,P@10,MAP"
        assert wide[-1].startswith("all,")


class TestRandomBaseline:
    def test_simulated_random_map(self):
        rng = np.random.default_rng(0)
        ranks = rng.integers(1, 6, size=10_000)
        assert np.mean(1.0 / ranks) == pytest.approx(random_ranking_ap(5), abs=0.01)
