import json

import numpy as np
import pytest

from irlab.corpus import Document, Qrels
from irlab.diagnostics import (
    Curve,
    FeatureSet,
    PassageScorer,
    Truncated,
    last_match_positions,
    linear_probe,
    overlap_curve,
    passage_score,
    planted_feature_set,
    pooling_report,
    positions_from_qrels,
    robustness_curve,
    split_queries,
)
from irlab.matchers import IntModel
from irlab.rankers import Bm25, CollectionStats
from irlab.synthetic import SynthConfig, generate


class TestLinearProbe:
    def test_exact_feature(self):
        y = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
        fit = linear_probe(y[:, None], y)
        assert fit.weights[0] == pytest.approx(1.0) and fit.intercept == pytest.approx(0.0, abs=1e-12)

    def test_matches_lstsq(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
        fit = linear_probe(X, y)
        A = np.column_stack([X, np.ones(50)])
        ref = np.linalg.lstsq(A, y, rcond=None)[0]
        np.testing.assert_allclose(fit.weights, ref[:3], atol=1e-10)
        assert fit.intercept == pytest.approx(ref[3])

    def test_noise_weight_shrinks(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=200)
        noise = rng.normal(size=200)
        ws = [abs(linear_probe(noise[:, None], y, l2).weights[0]) for l2 in (0.0, 10.0, 1e3, 1e5)]
        assert ws == sorted(ws, reverse=True) and ws[-1] < 1e-3

    def test_singular_without_ridge(self):
        X = np.ones((5, 2))
        with pytest.raises(np.linalg.LinAlgError):
            linear_probe(X, np.arange(5.0))
        assert np.isfinite(linear_probe(X, np.arange(5.0), l2=1.0).weights).all()


class TestRobustness:
    def test_concentrated_collapses(self):
        fs = planted_feature_set("concentrated", 300, seed=0)
        train, test = split_queries(fs.qids, 0.2, 0)
        c = robustness_curve(fs, train, test)
        assert c.y[0] == 1.0 and c.y[0] - c.y[1] >= 0.4
        assert c.meta["removal_order"][0] == "label"

    def test_redundant_degrades_gracefully(self):
        fs = planted_feature_set("redundant", 300, seed=0)
        train, test = split_queries(fs.qids, 0.2, 0)
        c = robustness_curve(fs, train, test)
        assert c.y[0] - c.y[5] < 0.01
        assert c.y[-1] < 1.0  # all features gone

    def test_refit_variant(self):
        fs = planted_feature_set("redundant", 100, seed=1)
        train, test = split_queries(fs.qids, 0.2, 1)
        c = robustness_curve(fs, train, test, refit=True)
        assert np.all(c.y[:10] == 1.0)

    def test_split_is_disjoint_and_complete(self):
        qids = [f"q{i}" for i in range(50)] * 2
        train, test = split_queries(qids, 0.2, 3)
        assert len(test) == 10 and not set(train) & set(test) and len(train) + len(test) == 50

    def test_empty_split(self):
        fs = planted_feature_set("redundant", 10)
        with pytest.raises(ValueError):
            robustness_curve(fs, [], fs.qids)

    def test_feature_csv_round_trip(self, tmp_path):
        fs = planted_feature_set("concentrated", 5, seed=2)
        fs.write_csv(tmp_path / "f.csv")
        back = FeatureSet.read_csv(tmp_path / "f.csv")
        assert back.names == fs.names and back.qids == fs.qids
        np.testing.assert_allclose(back.matrix, fs.matrix, rtol=1e-5)

    def test_misaligned_feature_set(self):
        with pytest.raises(ValueError):
            FeatureSet(np.zeros((2, 1)), np.zeros(3), ["f"], ["q", "q"], ["a", "b"])


class TestOverlap:
    def test_identical(self):
        c = overlap_curve(list("abc"), set("abc"), 3)
        assert np.all(c.y == 1.0)

    def test_disjoint(self):
        assert np.all(overlap_curve(list("abc"), set("xyz"), 3).y == 0.0)

    def test_prefix_values(self):
        c = overlap_curve(list("axbx"), {"a", "b"}, 10)
        np.testing.assert_allclose(c.y, [1.0, 0.5, 2 / 3, 0.5])
        assert len(c) == 4  # curve ends with the list


class TestPositions:
    def test_beyond_threshold(self):
        d = np.full(700, 9)
        d[599] = 1
        rep = last_match_positions([([1], d)], threshold=500)
        assert rep.positions[0] == 600 and rep.fraction_beyond == 1.0

    def test_all_at_start(self):
        rep = last_match_positions([([1], [1, 2, 3])] * 4)
        assert rep.fraction_beyond == 0.0

    def test_uniform_placement(self):
        rng = np.random.default_rng(0)
        pairs = []
        for _ in range(2000):
            d = np.full(1000, 9)
            d[rng.integers(0, 1000)] = 1
            pairs.append(([1], d))
        assert last_match_positions(pairs, threshold=500).fraction_beyond == pytest.approx(0.5, abs=0.03)

    def test_no_match_counted(self):
        rep = last_match_positions([([1], [2, 3]), ([1], [1])])
        assert rep.no_match == 1 and list(rep.positions) == [1]

    def test_pairs_from_qrels(self):
        queries = {"q": Document.of("q", [1])}
        docs = {"a": Document.of("a", [1, 2]), "b": Document.of("b", [3])}
        qrels = Qrels({("q", "a"): 1, ("q", "b"): 0, ("q", "zz"): 1})
        assert len(list(positions_from_qrels(queries, docs, qrels))) == 1
        assert len(list(positions_from_qrels(queries, docs, qrels, relevant_only=False))) == 2


class TestPassages:
    def scorer(self):
        return Bm25(CollectionStats.from_documents([np.arange(2, 50)] * 3 + [[1, 1, 2]], 60))

    def test_short_document_equals_plain_score(self):
        s = self.scorer()
        d = np.array([1, 2, 3, 1])
        assert passage_score(s, [1], d, 500) == s([1], d)

    def test_max_finds_late_match(self):
        s = Truncated(self.scorer(), 500)
        d = np.full(900, 30)
        d[800] = 1
        assert s([1], d) == 0.0
        assert PassageScorer(s, 500)([1], d) > 0.0

    def test_mean_aggregation(self):
        s = self.scorer()
        d = np.array([1, 5, 5, 5])
        assert passage_score(s, [1], d, 2, agg="mean") == pytest.approx((s([1], d[:2]) + s([1], d[2:])) / 2)

    def test_bad_aggregation(self):
        with pytest.raises(ValueError):
            passage_score(self.scorer(), [1], [1, 2], 1, agg="median")


class TestPoolingReport:
    def test_report_fields(self):
        ds = generate("topic", SynthConfig(n_queries=10, doc_len=(30, 50), vocab_size=200, seed=0))
        model = IntModel(len(ds.vocab), dim=8, channels=2, hidden=4, seed=0)
        rep = pooling_report(model, ds, ds.split["test"], top_n=20)
        assert rep.n_queries == 2 and 0 <= rep.query_overlap <= 1
        assert rep.topic_overlap is not None
        qwords = {int(t) for q in ds.split["test"] for t in ds.queries[q].tokens}
        assert rep.chance_query_overlap == pytest.approx(len(qwords) / 200)


class TestCurve:
    def test_write(self, tmp_path):
        Curve([1, 2], [0.5, 1 / 3], "n", "y", {"note": np.float64(1.5)}).write(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text() == "n,y\n1,0.5\n2,0.333333\n"
        meta = json.loads((tmp_path / "c.json").read_text())
        assert meta["note"] == 1.5 and meta["points"] == 2

    def test_x_must_increase(self):
        with pytest.raises(ValueError):
            Curve([2, 1], [0, 0])
