import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irlab.axioms import (
    AXIOMS,
    STRICT,
    ProbeContext,
    ProbeError,
    check,
    gen_probe,
    run_suite,
    verify_probe,
)
from irlab.diagnostics import PassageScorer, Truncated
from irlab.matchers import IntModel
from irlab.rankers import Bm25, CollectionStats, LmJm

V = 300


@pytest.fixture(scope="module")
def docs():
    rng = np.random.default_rng(0)
    return [rng.integers(1, V, size=int(rng.integers(40, 90))) for _ in range(80)]


@pytest.fixture(scope="module")
def ctx(docs):
    emb = np.random.default_rng(1).normal(size=(V, 8))
    return ProbeContext(docs, V, emb, "cosine")


@pytest.fixture(scope="module")
def bm25(docs):
    return Bm25(CollectionStats.from_documents(docs, V))


def count(doc, w):
    return int(np.count_nonzero(np.asarray(doc) == w))


class TestProbePremises:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(AXIOMS))
    def test_recorded_statistics_match_documents(self, ctx, docs, seed, axiom):
        rng = np.random.default_rng(seed)
        probe = gen_probe(axiom, docs[seed % len(docs)], ctx, rng)
        assert verify_probe(probe, ctx)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tfc1(self, ctx, docs, seed):
        p = gen_probe("TFC1", docs[seed % len(docs)], ctx, np.random.default_rng(seed))
        (w,) = p.query
        d1, d2 = p.docs
        assert len(d1) == len(d2) and count(d1, w) == count(d2, w) + 1
        assert np.count_nonzero(d1 != d2) == 1

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tdc(self, ctx, docs, seed):
        p = gen_probe("TDC", docs[seed % len(docs)], ctx, np.random.default_rng(seed))
        w1, w2 = p.query
        d1, d2 = p.docs
        assert ctx.df[w1] < ctx.df[w2]
        assert len(d1) == len(d2)
        assert count(d1, w1) + count(d1, w2) == count(d2, w1) + count(d2, w2)
        assert count(d1, w1) > count(d2, w1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_length_axioms(self, ctx, docs, seed):
        base = docs[seed % len(docs)]
        rng = np.random.default_rng(seed)
        p = gen_probe("LNC1", base, ctx, rng)
        (w,) = p.query
        assert len(p.docs[1]) == len(p.docs[0]) + 1 and count(p.docs[1], w) == count(p.docs[0], w)
        p = gen_probe("LNC2", base, ctx, rng)
        assert np.array_equal(p.docs[1], np.concatenate([p.docs[0], p.docs[0]]))
        p = gen_probe("TF-LNC", base, ctx, rng)
        (w,) = p.query
        extra = len(p.docs[1]) - len(p.docs[0])
        assert extra >= 1 and count(p.docs[1], w) == count(p.docs[0], w) + extra

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_tsfc_balances_semantic_sum(self, ctx, docs, seed):
        try:
            p = gen_probe("TSFC", docs[seed % len(docs)], ctx, np.random.default_rng(seed))
        except ProbeError:
            return  # skipped probes are counted by the suite
        (w,) = p.query
        d1, d2 = p.docs
        s1, s2 = p.meta["semantic"]
        assert abs(s1 - s2) <= 0.05 * abs(s1) + 1e-12
        assert count(d1, w) >= 1 and count(d2, w) == 0
        assert len(d1) == len(d2)

    def test_edit_start_respected(self, ctx):
        base = np.random.default_rng(5).integers(1, V, size=700)
        for seed in range(20):
            p = gen_probe("TFC1", base, ctx, np.random.default_rng(seed), edit_start=500)
            assert p.meta["edit_position"] >= 500

    def test_unknown_axiom(self, ctx, docs):
        with pytest.raises(ValueError):
            gen_probe("XYZ", docs[0], ctx, np.random.default_rng(0))

    def test_tsfc_without_embeddings(self, docs):
        with pytest.raises(ProbeError):
            gen_probe("TSFC", docs[0], ProbeContext(docs, V), np.random.default_rng(0))

    def test_candidate_terms_are_rare_but_seen(self, ctx):
        c = ctx.candidates()
        n = len(ctx.documents)
        assert len(c) and np.all(ctx.df[c] >= 1) and np.all(2 * ctx.df[c] < n) and 0 not in c


class TestCheck:
    def test_bm25_passes_tfc1(self, ctx, docs, bm25):
        for seed in range(30):
            p = gen_probe("TFC1", docs[seed], ctx, np.random.default_rng(seed))
            assert check(bm25, p).outcome == "pass"

    def test_constant_scorer(self, ctx, docs):
        rep = run_suite(lambda q, d: 0.0, ctx, n=10, seed=0)
        for a in AXIOMS:
            s = rep.stats[a]
            if a in STRICT:
                assert s.passed == 0 and s.ties == s.n
            else:
                assert s.pass_rate == 1.0

    def test_fail_outcome(self, ctx, docs):
        p = gen_probe("TFC1", docs[0], ctx, np.random.default_rng(0))
        res = check(lambda q, d: -float(np.isin(d, q).sum()), p)
        assert res.outcome == "fail" and res.margin == -1.0

    def test_scorer_error_carries_probe(self, ctx, docs):
        p = gen_probe("TFC1", docs[0], ctx, np.random.default_rng(0))

        def broken(q, d):
            raise RuntimeError("boom")

        with pytest.raises(ProbeError) as exc:
            check(broken, p)
        assert exc.value.probe is p


class TestSuite:
    def test_bm25_classical_axioms(self, ctx, bm25):
        rep = run_suite(bm25, ctx, n=100, seed=3, axioms=("TFC1", "TDC", "LNC1", "TF-LNC"))
        for a in ("TFC1", "TDC", "LNC1", "TF-LNC"):
            assert rep.pass_rate(a) == 1.0, a

    def test_lm_tfc1_lnc1(self, ctx, docs):
        lm = LmJm(CollectionStats.from_documents(docs, V))
        rep = run_suite(lm, ctx, n=100, seed=3, axioms=("TFC1", "LNC1"))
        assert rep.pass_rate("TFC1") == 1.0 and rep.pass_rate("LNC1") == 1.0

    def test_same_seed_same_report(self, ctx, bm25):
        a = run_suite(bm25, ctx, n=20, seed=9).to_dict()
        b = run_suite(bm25, ctx, n=20, seed=9).to_dict()
        assert a == b

    def test_workers_match_serial(self, ctx, bm25):
        serial = run_suite(bm25, ctx, n=20, seed=9, keep_details=True)
        parallel = run_suite(bm25, ctx, n=20, seed=9, workers=2, keep_details=True)
        assert serial.to_dict() == parallel.to_dict()
        assert serial.details == parallel.details

    def test_tsfc_skipped_without_embeddings(self, docs, bm25):
        rep = run_suite(bm25, ProbeContext(docs, V), n=5, seed=0, axioms=("TSFC",))
        assert rep.stats["TSFC"].skipped == 5 and rep.stats["TSFC"].n == 0

    def test_truncation_and_passages(self):
        rng = np.random.default_rng(2)
        big = 20_000  # large enough that many words sit in under half the documents
        long_docs = [rng.integers(1, big, size=int(rng.integers(600, 900))) for _ in range(60)]
        lctx = ProbeContext(long_docs, big)
        stats = CollectionStats.from_documents(long_docs, big)
        cut = Truncated(Bm25(stats), 500)
        rep = run_suite(cut, lctx, n=40, seed=0, axioms=("TFC1",), edit_start=500)
        assert rep.pass_rate("TFC1") == 0.0 and rep.stats["TFC1"].ties == 40
        rep = run_suite(PassageScorer(cut, 500), lctx, n=40, seed=0, axioms=("TFC1",), edit_start=500)
        assert rep.pass_rate("TFC1") == 1.0

    def test_model_context_uses_model_similarity(self, docs):
        m = IntModel(V, dim=8, similarity="gaussian", sigma=0.5, seed=0)
        c = ProbeContext.for_scorer(m, docs, V)
        assert c.similarity == "gaussian" and c.sigma == 0.5 and c.embeddings is m.embeddings

    def test_outputs(self, tmp_path, ctx, bm25):
        rep = run_suite(bm25, ctx, n=5, seed=0, axioms=("TFC1",), keep_details=True)
        rep.write_json(tmp_path / "a.json")
        rep.write_details(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "axiom,probe,outcome,margin" and len(lines) == 6
