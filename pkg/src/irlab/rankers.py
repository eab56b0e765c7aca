"""Hand-crafted scorers: TF-IDF, Okapi BM25, Jelinek-Mercer LM, and a feature vector.

All scorers share the call contract ``scorer(query_tokens, doc_tokens) -> float``
over token-id sequences, with collection statistics frozen at construction.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, Vocabulary


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 <= 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")


@dataclass(frozen=True)
class LmParams:
    lam: float = 0.4  # weight on the collection model

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")


@dataclass(frozen=True)
class CollectionStats:
    df: np.ndarray
    cf: np.ndarray
    n_docs: int
    total_tokens: int

    @property
    def avgdl(self) -> float:
        return self.total_tokens / self.n_docs

    @classmethod
    def from_vocabulary(cls, vocab: Vocabulary) -> "CollectionStats":
        return cls(vocab.df, vocab.cf, vocab.n_docs, vocab.total_tokens)

    @classmethod
    def from_documents(cls, docs: Iterable[Sequence[int] | Document], vocab_size: int) -> "CollectionStats":
        df = np.zeros(vocab_size, dtype=np.int64)
        cf = np.zeros(vocab_size, dtype=np.int64)
        n = 0
        for d in docs:
            toks = np.asarray(d.tokens if isinstance(d, Document) else d, dtype=np.int64)
            cf += np.bincount(toks, minlength=vocab_size)
            df[np.unique(toks)] += 1
            n += 1
        if n == 0:
            raise ValueError("no documents")
        return cls(df, cf, n, int(cf.sum()))

    def _get(self, arr, t):
        return int(arr[t]) if 0 <= t < len(arr) else 0

    def df_of(self, t: int) -> int:
        return self._get(self.df, t)

    def cf_of(self, t: int) -> int:
        return self._get(self.cf, t)


def _tokens(x):
    return x.tokens if hasattr(x, "tokens") else x


def _term_counts(doc) -> Counter:
    return Counter(int(t) for t in _tokens(doc))


def idf_tfidf(stats: CollectionStats, t: int) -> float:
    df = stats.df_of(t)
    return math.log(stats.n_docs / df) if df > 0 else 0.0


def idf_bm25(stats: CollectionStats, t: int) -> float:
    """Robertson-Sparck Jones idf, clamped at 0 for terms in over half the corpus."""
    df = stats.df_of(t)
    return max(0.0, math.log((stats.n_docs - df + 0.5) / (df + 0.5)))


def score_tfidf(q, d, stats: CollectionStats) -> float:
    tf = _term_counts(d)
    return sum(tf.get(int(t), 0) * idf_tfidf(stats, int(t)) for t in _tokens(q))


def score_bm25(q, d, stats: CollectionStats, params: Bm25Params = Bm25Params()) -> float:
    tf = _term_counts(d)
    dl = len(_tokens(d))
    norm = params.k1 * (1.0 - params.b + params.b * dl / stats.avgdl)
    total = 0.0
    for t in _tokens(q):
        f = tf.get(int(t), 0)
        if f:
            total += idf_bm25(stats, int(t)) * f * (params.k1 + 1.0) / (f + norm)
    return total


def score_lm_jm(q, d, stats: CollectionStats, params: LmParams = LmParams()) -> float:
    """Query log-likelihood under Jelinek-Mercer smoothing.

    Query terms absent from the collection (cf == 0) are skipped.
    """
    tf = _term_counts(d)
    dl = len(_tokens(d))
    lam = params.lam
    total = 0.0
    for t in _tokens(q):
        cf = stats.cf_of(int(t))
        if cf == 0:
            continue
        p_doc = tf.get(int(t), 0) / dl if dl else 0.0
        total += math.log((1.0 - lam) * p_doc + lam * cf / stats.total_tokens)
    return total


FEATURE_NAMES = (
    "tfidf",
    "bm25",
    "lm_jm",
    "coverage",
    "doc_length",
    "sum_tf",
    "max_tf",
    "idf_coverage",
)


def feature_vector(q, d, stats: CollectionStats) -> np.ndarray:
    """Classical relevance features for one pair, ordered as ``FEATURE_NAMES``."""
    tf = _term_counts(d)
    q_terms = sorted({int(t) for t in _tokens(q)})
    hits = [t for t in q_terms if tf.get(t, 0) > 0]
    tfs = [tf.get(int(t), 0) for t in _tokens(q)]
    idf_total = sum(idf_bm25(stats, t) for t in q_terms)
    idf_hit = sum(idf_bm25(stats, t) for t in hits)
    return np.array(
        [
            score_tfidf(q, d, stats),
            score_bm25(q, d, stats),
            score_lm_jm(q, d, stats),
            len(hits) / len(q_terms) if q_terms else 0.0,
            float(len(_tokens(d))),
            float(sum(tfs)),
            float(max(tfs, default=0)),
            idf_hit / idf_total if idf_total > 0 else 0.0,
        ]
    )


def write_features_csv(path, rows: Iterable[tuple[str, str, np.ndarray]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["qid", "docid", *FEATURE_NAMES])
        for qid, docid, vec in rows:
            w.writerow([qid, docid, *(f"{v:.6g}" for v in vec)])


class Bm25:
    name = "bm25"

    def __init__(self, stats: CollectionStats, params: Bm25Params = Bm25Params()):
        self.stats = stats
        self.params = params

    def __call__(self, q, d) -> float:
        return score_bm25(q, d, self.stats, self.params)


class LmJm:
    name = "lm"

    def __init__(self, stats: CollectionStats, params: LmParams = LmParams()):
        self.stats = stats
        self.params = params

    def __call__(self, q, d) -> float:
        return score_lm_jm(q, d, self.stats, self.params)


class TfIdf:
    name = "tfidf"

    def __init__(self, stats: CollectionStats):
        self.stats = stats

    def __call__(self, q, d) -> float:
        return score_tfidf(q, d, self.stats)


CLASSIC_SCORERS = {"bm25": Bm25, "lm": LmJm, "tfidf": TfIdf}
