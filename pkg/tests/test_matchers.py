import numpy as np
import pytest

from irlab.matchers import (
    IntModel,
    RepModel,
    TrainConfig,
    TrainingError,
    build_model,
    interaction_matrix,
    load_model,
    pooling_words,
    similarity,
    train_pairwise,
)


def small(kind, **kw):
    base = dict(vocab_size=40, dim=8, seed=3)
    if kind == "rep":
        return RepModel(channels=4, hidden=5, **base, **kw)
    return IntModel(channels=3, hidden=5, **base, **kw)


class TestSimilarity:
    def test_kinds(self):
        u, v = np.array([1.0, 0.0]), np.array([1.0, 1.0])
        assert similarity(u, v, "dot") == 1.0
        assert similarity(u, v, "cosine") == pytest.approx(1 / np.sqrt(2))
        assert similarity(u, v, "gaussian", sigma=1.0) == pytest.approx(np.exp(-0.5))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            similarity([1.0], [1.0, 2.0])

    def test_matrix_shape_and_identity_entries(self):
        E = np.random.default_rng(0).normal(size=(20, 6))
        q = [3, 4, 5]
        d = [5, 1, 2, 3, 7, 8, 9, 10, 11, 12]
        S = interaction_matrix(q, d, E, "cosine")
        assert S.shape == (3, 10)
        assert S[0, 3] == pytest.approx(1.0) and S[2, 0] == pytest.approx(1.0)

    def test_oov_query_has_constant_gaussian_rows(self):
        E = np.random.default_rng(0).normal(size=(20, 6))
        E[0] = 0.0
        S = interaction_matrix([0, 0], [1, 2, 3], E, "gaussian")
        assert np.allclose(S[0], S[1])


class TestScoring:
    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_deterministic(self, kind):
        m = small(kind)
        q, d = [1, 2], list(range(5, 20))
        assert m.score(q, d) == m.score(q, d)
        assert m.hidden(q, d).shape == (5,)

    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_same_seed_same_model(self, kind):
        q, d = [1, 2], list(range(5, 20))
        assert small(kind).score(q, d) == small(kind).score(q, d)

    def test_zero_weights_score_zero(self):
        m = small("rep")
        for p in m.parameters():
            p.value[...] = 0.0
        assert m.score([1, 2], [3, 4, 5]) == 0.0

    def test_identical_documents_score_identically(self):
        m = small("rep")
        assert m.score([1], [4, 5, 6, 7]) == m.score([1], np.array([4, 5, 6, 7]))

    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_empty_input(self, kind):
        with pytest.raises(ValueError):
            small(kind).score([], [1, 2, 3])

    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_short_documents_are_handled(self, kind):
        assert np.isfinite(small(kind).score([1, 2, 3], [4]))

    def test_truncation_at_max_len(self):
        m = small("int", max_len=10)
        d = list(range(1, 11))
        assert m.score([1], d) == m.score([1], d + [30, 31, 32])

    def test_row_pooling_records_one_row_per_query_term(self):
        m = small("int", row_pooling=True)
        m.score([1, 2, 3, 4], list(range(5, 25)))
        assert m.last_record.row_records == 4
        assert m.last_record.cells.shape[0] == 4

    def test_unknown_similarity(self):
        with pytest.raises(ValueError):
            small("int", similarity="manhattan")


class TestPoolingWords:
    def test_requires_a_scored_pair(self):
        with pytest.raises(RuntimeError):
            pooling_words(small("int"))

    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_single_token_document(self, kind):
        m = small(kind)
        assert [w for w, _ in pooling_words(m, [1, 2], [7])] == [7]

    def test_words_come_from_the_document(self):
        m = small("int")
        d = list(range(10, 30))
        words = pooling_words(m, [1, 2], d)
        assert {w for w, _ in words} <= set(d)
        assert words == sorted(words, key=lambda wc: (-wc[1], wc[0]))

    def test_cosine_model_enriches_query_terms(self):
        # Exact matches are the only cosine-1 cells, so even untrained the
        # pooled words over-represent query terms relative to their density.
        rng = np.random.default_rng(0)
        m = IntModel(vocab_size=200, dim=20, seed=0)
        m.K.value[...] = np.abs(m.K.value)
        hits = total = 0
        for _ in range(20):
            q = rng.choice(np.arange(1, 200), 3, replace=False)
            d = rng.integers(1, 200, size=100)
            d[rng.choice(100, 10, replace=False)] = rng.choice(q, 10)
            for w, c in pooling_words(m, q, d):
                hits += c * (w in q)
                total += c
        assert hits / total > 2 * 0.10


class TestTraining:
    def triples(self, n=12, seed=0):
        # Positive documents repeat the query term; negatives never contain it.
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(n):
            t = int(rng.integers(1, 10))
            pos = rng.integers(10, 40, size=15)
            pos[rng.choice(15, 4, replace=False)] = t
            out.append(([t], pos, rng.integers(10, 40, size=15)))
        return out

    def test_loss_decreases(self):
        m = small("int")
        res = train_pairwise(m, self.triples(), TrainConfig(epochs=6, rate=0.01, batch=4))
        assert res.loss_trace[-1] < res.loss_trace[0]

    def test_bitwise_reproducible(self):
        cfg = TrainConfig(epochs=2, rate=0.01, batch=4, seed=5)
        a, b = small("rep"), small("rep")
        ra = train_pairwise(a, self.triples(), cfg)
        rb = train_pairwise(b, self.triples(), cfg)
        assert ra.loss_trace == rb.loss_trace
        assert all(np.array_equal(p.value, r.value) for p, r in zip(a.parameters(), b.parameters()))

    def test_satisfied_margin_leaves_parameters(self):
        m = small("int")
        before = [p.value.copy() for p in m.parameters()]
        q, d, _ = self.triples(1)[0]
        res = train_pairwise(m, [(q, d, d)], TrainConfig(epochs=2, margin=0.0, optimizer="sgd", rate=0.1))
        assert res.loss_trace == [0.0, 0.0]
        assert all(np.array_equal(b, p.value) for b, p in zip(before, m.parameters()))

    def test_fixed_embeddings_stay_fixed(self):
        m = small("int", train_embeddings=False)
        before = m.embeddings.copy()
        train_pairwise(m, self.triples(), TrainConfig(epochs=1, rate=0.01, batch=4))
        assert np.array_equal(before, m.embeddings)

    def test_nonfinite_loss_aborts(self):
        m = small("int")
        m.W2.value[...] = np.nan
        with pytest.raises(TrainingError):
            train_pairwise(m, self.triples(2), TrainConfig(epochs=1))

    def test_no_triples(self):
        with pytest.raises(ValueError):
            train_pairwise(small("int"), [])


class TestPersistence:
    @pytest.mark.parametrize("kind", ["rep", "int"])
    def test_save_load(self, tmp_path, kind):
        m = small(kind)
        m.save(tmp_path)
        back = load_model(tmp_path)
        q, d = [1, 2], list(range(5, 25))
        assert back.score(q, d) == pytest.approx(m.score(q, d), rel=1e-7)

    def test_build_model_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            build_model("lstm", vocab_size=5)
