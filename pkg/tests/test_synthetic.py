import numpy as np
import pytest

from irlab.corpus import parse_qrels, parse_triples
from irlab.synthetic import SynthConfig, generate, load_dataset, preset


def contains(tokens, seq):
    tokens, seq = list(map(int, tokens)), list(map(int, seq))
    return sum(tokens[i : i + len(seq)] == seq for i in range(len(tokens) - len(seq) + 1))


@pytest.fixture(scope="module")
def topic():
    return generate("topic", SynthConfig(n_queries=60, doc_len=(40, 80), seed=11))


@pytest.fixture(scope="module")
def density():
    return generate("density", SynthConfig(n_queries=60, doc_len=(40, 80), seed=11))


class TestTopicMatch:
    def test_relevant_documents_hold_the_sequence_once(self, topic):
        for q in topic.queries:
            seq = topic.annotations[q]["sequence"]
            for d in topic.docs_for(q):
                expected = 1 if topic.qrels.grade(q, d) else 0
                assert contains(topic.documents[d].tokens, seq) == expected

    def test_query_words_avoid_topic_vocabulary(self, topic):
        tv = topic.topic_vocabulary
        for q in topic.queries.values():
            assert not tv.intersection(int(t) for t in q.tokens)

    def test_sequences_come_from_the_shared_pool(self, topic):
        pool = [tuple(s) for s in topic.topic_pool]
        assert len(pool) == 20 and all(2 <= len(s) <= 4 for s in pool)
        for ann in topic.annotations.values():
            assert tuple(ann["sequence"]) in pool

    def test_one_relevant_four_irrelevant(self, topic):
        for q in topic.queries:
            grades = [topic.qrels.grade(q, d) for d in topic.docs_for(q)]
            assert sorted(grades) == [0, 0, 0, 0, 1]


class TestDensityMatch:
    def test_planted_counts(self, density):
        for q, query in density.queries.items():
            ann = density.annotations[q]
            for d in density.docs_for(q):
                doc = density.documents[d]
                rate = 0.10 if density.qrels.grade(q, d) else 0.01
                expected = max(1, round(rate * len(doc)))
                assert ann["query_term_counts"][d] == expected
                assert np.isin(doc.tokens, query.tokens).sum() == expected

    def test_relevant_is_denser(self, density):
        for q in density.queries:
            counts = density.annotations[q]["query_term_counts"]
            rel = density.relevant(q)
            assert all(counts[rel] > c for d, c in counts.items() if d != rel)

    def test_lengths_in_range(self, density):
        assert all(40 <= len(d) <= 80 for d in density.documents.values())


class TestSplitsAndDeterminism:
    def test_split_is_last_fifth(self, density):
        qids = list(density.queries)
        assert density.split["test"] == qids[48:]
        assert density.split["train"] == qids[:48]

    def test_triples_only_for_training_queries(self, density):
        train = set(density.split["train"])
        assert density.triples and all(q in train for q, _, _ in density.triples)
        assert len(density.triples) == 48 * 4

    def test_same_seed_same_data(self):
        cfg = SynthConfig(n_queries=5, doc_len=(30, 40), seed=2)
        a, b = generate("topic", cfg), generate("topic", cfg)
        assert all(np.array_equal(a.documents[d].tokens, b.documents[d].tokens) for d in a.documents)

    def test_queries_do_not_depend_on_query_count(self):
        # Per-query streams: a longer run extends a shorter one.
        small = generate("density", SynthConfig(n_queries=5, doc_len=(30, 40), seed=2))
        large = generate("density", SynthConfig(n_queries=50, doc_len=(30, 40), seed=2))
        for k in range(5):
            a, b = small.queries[f"q{k}"], large.queries[f"q{k:02d}"]
            assert np.array_equal(a.tokens, b.tokens)

    def test_relevant_position_is_shuffled(self, density):
        first = {sorted(density.docs_for(q)).index(density.relevant(q)) for q in density.queries}
        assert len(first) > 1


class TestConfig:
    def test_full_scale_defaults(self):
        ds = generate("density", SynthConfig())
        assert len(ds.queries) == 10_000 and len(ds.documents) == 50_000

    def test_desk_preset(self):
        cfg = preset("desk")
        assert cfg.n_queries == 1000 and cfg.doc_len == (100, 200)

    @pytest.mark.parametrize("bad", [dict(doc_len=(5, 2)), dict(n_queries=0), dict(topic_len=(3, 50), doc_len=(10, 20))])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            SynthConfig(**bad)

    def test_unknown_kind_and_preset(self):
        with pytest.raises(ValueError):
            generate("semantic", SynthConfig(n_queries=1))
        with pytest.raises(ValueError):
            preset("huge")


class TestFiles:
    def test_round_trip(self, tmp_path, topic):
        topic.write(tmp_path)
        assert len(parse_triples(tmp_path / "triples.tsv")) == len(topic.triples)
        assert dict(parse_qrels(tmp_path / "qrels.txt")) == dict(topic.qrels)
        back = load_dataset(tmp_path)
        assert back.split == topic.split and back.config == topic.config
        q = next(iter(topic.queries))
        assert back.vocab.decode(back.queries[q].tokens) == topic.vocab.decode(topic.queries[q].tokens)
        words = [[topic.vocab.words[t] for t in s] for s in topic.topic_pool]
        assert [[back.vocab.words[t] for t in s] for s in back.topic_pool] == words
        assert back.docs_for(q) == topic.docs_for(q)

    def test_rewrite_is_byte_identical(self, tmp_path, density):
        density.write(tmp_path / "a")
        density.write(tmp_path / "b")
        for name in ("corpus.tsv", "topics.tsv", "qrels.txt", "triples.tsv", "annotations.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
