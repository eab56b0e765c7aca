"""Planted-ground-truth ranking datasets.

Two generators, each producing one relevant and four irrelevant documents per
query over a random vocabulary:

* topic match: the relevant document contains a short contiguous word sequence
  (the query's topic, drawn from a small shared pool); no irrelevant document
  contains that sequence, and query words carry no signal.
* density match: the relevant document is seeded with query words at a high
  density, irrelevant documents at a low density.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import (
    OOV_TOKEN,
    Document,
    Qrels,
    Query,
    Vocabulary,
    load_collection,
    parse_qrels,
    parse_triples,
    write_qrels,
    write_tab_pairs,
    write_triples,
)
from .rng import make_rng

MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class SynthConfig:
    n_queries: int = 10_000
    vocab_size: int = 2000
    query_len: tuple[int, int] = (2, 8)
    doc_len: tuple[int, int] = (300, 700)
    n_relevant: int = 1
    n_irrelevant: int = 4
    seed: int = 0
    topic_len: tuple[int, int] = (2, 4)
    n_topics: int = 20
    density_relevant: float = 0.10
    density_irrelevant: float = 0.01
    test_fraction: float = 0.2

    def __post_init__(self):
        for name in ("query_len", "doc_len", "topic_len"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must be a nonempty range of positive ints, got {(lo, hi)}")
        if min(self.n_queries, self.vocab_size, self.n_relevant, self.n_irrelevant, self.n_topics) < 1:
            raise ValueError("all counts must be >= 1")
        if self.topic_len[1] > self.doc_len[0]:
            raise ValueError("topic sequences must fit in the shortest document")
        if self.query_len[1] >= self.vocab_size:
            raise ValueError("query length must be smaller than the vocabulary")


PRESETS = {
    "full": SynthConfig(),
    "desk": SynthConfig(n_queries=1000, doc_len=(100, 200)),
}


def preset(name: str, **overrides) -> SynthConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


@dataclass
class SyntheticDataset:
    kind: str
    config: SynthConfig | None
    vocab: Vocabulary
    queries: dict[str, Query]
    documents: dict[str, Document]
    qrels: Qrels
    triples: list[tuple[str, str, str]]
    annotations: dict[str, dict]
    split: dict[str, list[str]] = field(default_factory=dict)
    topic_pool: list[list[int]] = field(default_factory=list)

    def docs_for(self, qid: str) -> list[str]:
        return self.annotations[qid]["docs"]

    def relevant(self, qid: str) -> str:
        return next(d for d in self.docs_for(qid) if self.qrels.grade(qid, d) > 0)

    def token_triples(self, qids=None):
        qids = set(self.split.get("train", self.queries) if qids is None else qids)
        return [
            (self.queries[q].tokens, self.documents[p].tokens, self.documents[n].tokens)
            for q, p, n in self.triples
            if q in qids
        ]

    @property
    def topic_vocabulary(self) -> set[int]:
        return {t for seq in self.topic_pool for t in seq}

    def write(self, directory):
        """Write corpus/topics/qrels/triples plus a JSON annotation sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        words = self.vocab.words
        write_tab_pairs(
            directory / "corpus.tsv",
            ((d, " ".join(words[t] for t in doc.tokens)) for d, doc in self.documents.items()),
        )
        write_tab_pairs(
            directory / "topics.tsv",
            ((q, " ".join(words[t] for t in query.tokens)) for q, query in self.queries.items()),
        )
        write_qrels(directory / "qrels.txt", self.qrels)
        write_triples(directory / "triples.tsv", self.triples)
        sidecar = {
            "kind": self.kind,
            "config": asdict(self.config),
            "split": self.split,
            "topic_pool": [[words[t] for t in seq] for seq in self.topic_pool],
            "queries": {q: _jsonable(a, words) for q, a in self.annotations.items()},
        }
        (directory / "annotations.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def _jsonable(annotation: dict, words) -> dict:
    out = dict(annotation)
    if "sequence" in out:
        out["sequence"] = [words[t] for t in out["sequence"]]
    return out


def _vocab_words(n: int) -> list[str]:
    width = len(str(n))
    return [OOV_TOKEN] + [f"w{i:0{width}d}" for i in range(1, n + 1)]


def _occurrences(tokens: np.ndarray, seq: np.ndarray) -> np.ndarray:
    L = len(seq)
    if len(tokens) < L:
        return np.empty(0, dtype=np.int64)
    win = np.lib.stride_tricks.sliding_window_view(tokens, L)
    return np.flatnonzero((win == seq).all(axis=1))


def _finish(kind, config, queries, documents, qrels, triples, annotations, topic_pool) -> SyntheticDataset:
    V = config.vocab_size
    df = np.zeros(V + 1, dtype=np.int64)
    cf = np.zeros(V + 1, dtype=np.int64)
    for doc in documents.values():
        cf += np.bincount(doc.tokens, minlength=V + 1)
        df[np.unique(doc.tokens)] += 1
    vocab = Vocabulary(_vocab_words(V), df, cf, len(documents), int(cf.sum()))
    qids = list(queries)
    n_test = int(round(config.test_fraction * len(qids)))
    split = {"train": qids[: len(qids) - n_test], "test": qids[len(qids) - n_test :]}
    train = set(split["train"])
    triples = [t for t in triples if t[0] in train]
    return SyntheticDataset(kind, config, vocab, queries, documents, qrels, triples, annotations, split, topic_pool)


def _query_streams(config: SynthConfig):
    ss = np.random.SeedSequence(int(config.seed) & (2**64 - 1))
    children = ss.spawn(config.n_queries + 1)
    return make_rng(children[0]), [make_rng(c) for c in children[1:]]


def _doc_ids(qid: str, n: int, rng) -> list[str]:
    order = rng.permutation(n)
    return [f"{qid}-d{k}" for k in order]


def gen_topic_match(config: SynthConfig) -> SyntheticDataset:
    global_rng, streams = _query_streams(config)
    V = config.vocab_size
    t_lo, t_hi = config.topic_len
    pool = []
    for _ in range(config.n_topics):
        L = int(global_rng.integers(t_lo, t_hi + 1))
        pool.append(global_rng.choice(np.arange(1, V + 1), size=L, replace=False))
    topic_vocab = np.unique(np.concatenate(pool))
    query_vocab = np.setdiff1d(np.arange(1, V + 1), topic_vocab)
    if len(query_vocab) < config.query_len[1]:
        raise ValueError("topic pool leaves too few words for queries")

    n_docs = config.n_relevant + config.n_irrelevant
    queries, documents, qrels, triples, annotations = {}, {}, Qrels(), [], {}
    width = len(str(config.n_queries))
    for k, rng in enumerate(streams):
        qid = f"q{k:0{width}d}"
        m = int(rng.integers(config.query_len[0], config.query_len[1] + 1))
        queries[qid] = Query(qid, rng.choice(query_vocab, size=m, replace=False))
        topic = int(rng.integers(len(pool)))
        seq = pool[topic]
        ids = _doc_ids(qid, n_docs, rng)
        positions = {}
        for j, docid in enumerate(ids):
            relevant = j < config.n_relevant
            n = int(rng.integers(config.doc_len[0], config.doc_len[1] + 1))
            for _ in range(MAX_REJECTIONS):
                tokens = rng.integers(1, V + 1, size=n)
                if relevant:
                    p = int(rng.integers(0, n - len(seq) + 1))
                    tokens[p : p + len(seq)] = seq
                if len(_occurrences(tokens, seq)) == (1 if relevant else 0):
                    break
            else:
                raise RuntimeError(f"could not realise topic constraint for {docid}")
            if relevant:
                positions[docid] = p
            documents[docid] = Document(docid, tokens, n)
            qrels[(qid, docid)] = 1 if relevant else 0
        rel = ids[: config.n_relevant]
        triples += [(qid, r, i) for r in rel for i in ids[config.n_relevant :]]
        qset = queries[qid].tokens
        annotations[qid] = {
            "docs": sorted(ids),
            "topic": topic,
            "sequence": [int(t) for t in seq],
            "positions": positions,
            "query_term_counts": {d: int(np.isin(documents[d].tokens, qset).sum()) for d in sorted(ids)},
        }
    return _finish("topic", config, queries, documents, qrels, triples, annotations, [list(map(int, s)) for s in pool])


def gen_density_match(config: SynthConfig) -> SyntheticDataset:
    _, streams = _query_streams(config)
    V = config.vocab_size
    n_docs = config.n_relevant + config.n_irrelevant
    queries, documents, qrels, triples, annotations = {}, {}, Qrels(), [], {}
    width = len(str(config.n_queries))
    all_words = np.arange(1, V + 1)
    for k, rng in enumerate(streams):
        qid = f"q{k:0{width}d}"
        m = int(rng.integers(config.query_len[0], config.query_len[1] + 1))
        q = rng.choice(all_words, size=m, replace=False)
        queries[qid] = Query(qid, q)
        background = np.setdiff1d(all_words, q)
        ids = _doc_ids(qid, n_docs, rng)
        counts, planted = {}, {}
        for j, docid in enumerate(ids):
            relevant = j < config.n_relevant
            n = int(rng.integers(config.doc_len[0], config.doc_len[1] + 1))
            rate = config.density_relevant if relevant else config.density_irrelevant
            c = min(n, max(1, int(round(rate * n))))
            tokens = rng.choice(background, size=n)
            pos = np.sort(rng.choice(n, size=c, replace=False))
            tokens[pos] = rng.choice(q, size=c)
            documents[docid] = Document(docid, tokens, n)
            qrels[(qid, docid)] = 1 if relevant else 0
            counts[docid] = c
            planted[docid] = pos.tolist()
        rel = ids[: config.n_relevant]
        triples += [(qid, r, i) for r in rel for i in ids[config.n_relevant :]]
        annotations[qid] = {
            "docs": sorted(ids),
            "query_term_counts": {d: counts[d] for d in sorted(ids)},
            "positions": {d: planted[d] for d in sorted(ids)},
        }
    return _finish("density", config, queries, documents, qrels, triples, annotations, [])


GENERATORS = {"topic": gen_topic_match, "density": gen_density_match}


def generate(kind: str, config: SynthConfig) -> SyntheticDataset:
    try:
        return GENERATORS[kind](config)
    except KeyError:
        raise ValueError(f"unknown synthetic dataset {kind!r}") from None


def load_dataset(directory, vocab: Vocabulary | None = None) -> SyntheticDataset:
    """Read a dataset directory (corpus, topics, qrels, optional triples and
    annotation sidecar). Without a sidecar every query is a training query and
    its candidate documents are its judged ones."""
    directory = Path(directory)
    coll = load_collection(directory / "corpus.tsv", directory / "topics.tsv", vocab=vocab)
    qrels = parse_qrels(directory / "qrels.txt")
    triples_path = directory / "triples.tsv"
    triples = parse_triples(triples_path) if triples_path.exists() else []
    sidecar_path = directory / "annotations.json"
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    by_query = qrels.by_query()
    annotations = {}
    for q in coll.queries:
        ann = dict(sidecar.get("queries", {}).get(q, {}))
        ann["docs"] = sorted(d for d in ann.get("docs", by_query.get(q, {})) if d in coll.documents)
        annotations[q] = ann
    split = sidecar.get("split") or {"train": list(coll.queries), "test": []}
    pool = [[coll.vocab.id(w) for w in seq] for seq in sidecar.get("topic_pool", [])]
    config = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in sidecar["config"].items()}) if "config" in sidecar else None
    return SyntheticDataset(
        sidecar.get("kind", "text"), config, coll.vocab, coll.queries, coll.documents,
        qrels, triples, annotations, split, pool,
    )
