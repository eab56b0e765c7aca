"""Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

The sweep kernel is compiled with numba; all randomness comes from uniforms
pre-drawn by a seeded numpy generator, so a fit is reproducible bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.special import gammaln

from .rng import make_rng


@numba.njit(cache=True)
def _sweep(words, docs, z, nkw, ndk, nk, alpha, beta, uniforms):
    K, V = nkw.shape
    vbeta = V * beta
    p = np.empty(K)
    for i in range(words.shape[0]):
        w, d, k = words[i], docs[i], z[i]
        nkw[k, w] -= 1
        ndk[d, k] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (nkw[t, w] + beta) / (nk[t] + vbeta) * (ndk[d, t] + alpha)
            p[t] = total
        u = uniforms[i] * total
        k = 0
        while k < K - 1 and p[k] <= u:
            k += 1
        z[i] = k
        nkw[k, w] += 1
        ndk[d, k] += 1
        nk[k] += 1


@dataclass
class TopicModel:
    K: int
    alpha: float
    beta: float
    iters: int
    seed: int
    nkw: np.ndarray  # (K, V) topic-word counts
    ndk: np.ndarray  # (D, K) document-topic counts
    z: np.ndarray  # topic of every token, corpus order
    loglik: list[float] = field(default_factory=list)

    @property
    def nk(self) -> np.ndarray:
        return self.nkw.sum(axis=1)

    def topic_word(self) -> np.ndarray:
        """Smoothed topic-word distributions, one row per topic."""
        V = self.nkw.shape[1]
        return (self.nkw + self.beta) / (self.nk[:, None] + V * self.beta)


def log_likelihood(nkw: np.ndarray, ndk: np.ndarray, alpha: float, beta: float) -> float:
    """Joint log p(w, z) with multinomials integrated out."""
    K, V = nkw.shape
    topic = K * (gammaln(V * beta) - V * gammaln(beta))
    topic += gammaln(nkw + beta).sum() - gammaln(nkw.sum(axis=1) + V * beta).sum()
    D = ndk.shape[0]
    doc = D * (gammaln(K * alpha) - K * gammaln(alpha))
    doc += gammaln(ndk + alpha).sum() - gammaln(ndk.sum(axis=1) + K * alpha).sum()
    return float(topic + doc)


def fit_lda(
    documents: Sequence,
    vocab_size: int,
    K: int = 50,
    alpha: float | None = None,
    beta: float = 0.01,
    iters: int = 500,
    seed: int = 0,
) -> TopicModel:
    """Collapsed Gibbs LDA; ``alpha`` defaults to 50/K. Final-state counts are the model."""
    if K < 1:
        raise ValueError("K must be >= 1")
    docs = [np.asarray(getattr(d, "tokens", d), dtype=np.int64) for d in documents]
    docs = [d for d in docs if d.size]
    if not docs:
        raise ValueError("fit_lda: empty corpus")
    alpha = 50.0 / K if alpha is None else float(alpha)
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    words = np.concatenate(docs)
    if words.max() >= vocab_size or words.min() < 0:
        raise ValueError("token id outside the vocabulary")
    doc_of = np.repeat(np.arange(len(docs)), [len(d) for d in docs])
    rng = make_rng(seed)
    z = rng.integers(0, K, size=words.size)
    nkw = np.zeros((K, vocab_size), dtype=np.int64)
    ndk = np.zeros((len(docs), K), dtype=np.int64)
    np.add.at(nkw, (z, words), 1)
    np.add.at(ndk, (doc_of, z), 1)
    nk = nkw.sum(axis=1)
    model = TopicModel(K, alpha, beta, iters, seed, nkw, ndk, z)
    for _ in range(iters):
        _sweep(words, doc_of, z, nkw, ndk, nk, alpha, beta, rng.random(words.size))
        model.loglik.append(log_likelihood(nkw, ndk, alpha, beta))
    return model


def top_words(model: TopicModel, per_topic: int = 50) -> list[list[int]]:
    """Per topic, word ids ranked by topic-word count (ties by id)."""
    if per_topic < 1:
        raise ValueError("per_topic must be >= 1")
    out = []
    for row in model.nkw:
        order = np.lexsort((np.arange(row.size), -row))
        out.append([int(w) for w in order[:per_topic]])
    return out


def top_word_union(model: TopicModel, per_topic: int = 50) -> set[int]:
    return {w for ws in top_words(model, per_topic) for w in ws}


def export_topics(path, model: TopicModel, words: Sequence[str], per_topic: int = 50):
    """Write ``{topic: [words]}`` JSON."""
    data = {str(k): [words[w] for w in ws] for k, ws in enumerate(top_words(model, per_topic))}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def planted_topic_corpus(
    n_docs: int = 200,
    vocab_per_topic: int = 50,
    doc_len: tuple[int, int] = (50, 100),
    seed: int = 0,
) -> tuple[list[np.ndarray], list[set[int]]]:
    """Two topics over disjoint vocabularies; each document mixes them.

    Returns documents and the two planted vocabularies (ids start at 1).
    """
    rng = make_rng(seed)
    vocabs = [np.arange(1, vocab_per_topic + 1), np.arange(vocab_per_topic + 1, 2 * vocab_per_topic + 1)]
    # Zipf-like word weights inside each topic so top words are well defined.
    weights = 1.0 / np.arange(1, vocab_per_topic + 1)
    weights /= weights.sum()
    docs = []
    for _ in range(n_docs):
        n = int(rng.integers(doc_len[0], doc_len[1] + 1))
        theta = rng.dirichlet([0.5, 0.5])
        topics = rng.choice(2, size=n, p=theta)
        docs.append(np.array([rng.choice(vocabs[t], p=weights) for t in topics], dtype=np.int64))
    return docs, [set(map(int, v)) for v in vocabs]
