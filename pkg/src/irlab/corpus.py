"""Text ingestion, vocabulary statistics and TREC-style file formats."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

OOV_ID = 0
OOV_TOKEN = "<oov>"
DEFAULT_MAX_LEN = 500

# Compact English stop list; stands in for INQUERY.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can could did do does doing
    down during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves out
    over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up
    very was we were what when where which while who whom why will with would
    you your yours yourself yourselves also may might must shall upon within
    without us
    """.split()
)

_WORD = re.compile(r"[a-z0-9]+")


class FormatError(ValueError):
    """A retrieval file line does not match its documented grammar."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def stem(word: str) -> str:
    """Harman's "S" stemmer: strips plural suffixes only.

    >>> stem("fairies"), stem("fairy"), stem("museums"), stem("glass")
    ('fairy', 'fairy', 'museum', 'glass')
    """
    if len(word) <= 3:
        return word
    if word.endswith("ies") and not word.endswith(("eies", "aies")):
        return word[:-3] + "y"
    if word.endswith("es") and not word.endswith(("aes", "ees", "oes")):
        return word[:-1]
    if word.endswith("s") and not word.endswith(("us", "ss")):
        return word[:-1]
    return word


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    remove_stopwords: bool = False
    stem: bool = True
    stopwords: frozenset = STOPWORDS


DOC_ANALYZER = TokenizerConfig()
QUERY_ANALYZER = TokenizerConfig(remove_stopwords=True)


def tokenize(text: str, config: TokenizerConfig = DOC_ANALYZER) -> list[str]:
    if config.lowercase:
        text = text.lower()
    words = _WORD.findall(text) if config.lowercase else re.findall(r"[A-Za-z0-9]+", text)
    if config.remove_stopwords:
        words = [w for w in words if w.lower() not in config.stopwords]
    if config.stem:
        words = [stem(w) for w in words]
    return words


@dataclass(frozen=True, eq=False)
class Document:
    id: str
    tokens: np.ndarray
    raw_length: int

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def of(cls, id: str, tokens: Sequence[int]) -> "Document":
        return cls(id, np.asarray(tokens, dtype=np.int64), len(tokens))


@dataclass(frozen=True, eq=False)
class Query:
    id: str
    tokens: np.ndarray

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64)
        if tokens.size < 1:
            raise ValueError(f"query {self.id!r} has no tokens")
        tokens.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass
class Vocabulary:
    """Token string <-> id map plus collection statistics.

    Id 0 is reserved for out-of-vocabulary tokens; its ``cf`` counts every
    folded occurrence so that ``cf.sum() == total_tokens``.
    """

    words: list[str]
    df: np.ndarray
    cf: np.ndarray
    n_docs: int
    total_tokens: int
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, OOV_ID)

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.index.get(t, OOV_ID) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[int(i)] for i in ids]


def build_vocabulary(documents: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from tokenized documents.

    Words with collection frequency below ``min_count`` fold into the OOV id.
    Ids are assigned in sorted word order so they do not depend on input order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    documents = [list(d) for d in documents]
    if not documents:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    cf: Counter = Counter()
    df: Counter = Counter()
    for tokens in documents:
        cf.update(tokens)
        df.update(set(tokens))
    kept = sorted(w for w, c in cf.items() if c >= min_count)
    words = [OOV_TOKEN] + kept
    cf_arr = np.zeros(len(words), dtype=np.int64)
    df_arr = np.zeros(len(words), dtype=np.int64)
    for i, w in enumerate(kept, start=1):
        cf_arr[i] = cf[w]
        df_arr[i] = df[w]
    total = sum(cf.values())
    cf_arr[OOV_ID] = total - cf_arr.sum()
    if cf_arr[OOV_ID]:
        rare = {w for w, c in cf.items() if c < min_count}
        df_arr[OOV_ID] = sum(1 for doc in documents if rare.intersection(doc))
    return Vocabulary(words, df_arr, cf_arr, len(documents), total)


def truncate(document: Document, max_len: int = DEFAULT_MAX_LEN) -> Document:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return Document(document.id, document.tokens[:max_len], document.raw_length)


def split_passages(document: Document, passage_len: int, stride: int | None = None) -> list[Document]:
    """Sliding windows starting at 0, stride, 2*stride, ... while inside the document."""
    stride = passage_len if stride is None else stride
    if passage_len < 1 or not 1 <= stride <= passage_len:
        raise ValueError("need passage_len >= 1 and 1 <= stride <= passage_len")
    n = len(document.tokens)
    starts = range(0, max(n, 1), stride)
    out = []
    for k, s in enumerate(starts):
        piece = document.tokens[s : s + passage_len]
        out.append(Document(f"{document.id}#p{k}", piece, len(piece)))
    return out


# --- file formats -----------------------------------------------------------


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def _parse_tab_pairs(path) -> list[tuple[str, str]]:
    out = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0]:
            raise FormatError(path, lineno, "expected 'id<TAB>text'")
        out.append((parts[0], parts[1]))
    return out


def parse_corpus(path) -> list[tuple[str, str]]:
    """``docid<TAB>text`` per line."""
    return _parse_tab_pairs(path)


def parse_topics(path) -> list[tuple[str, str]]:
    """``qid<TAB>text`` per line."""
    return _parse_tab_pairs(path)


def write_tab_pairs(path, rows: Iterable[tuple[str, str]]):
    with open(path, "w", encoding="utf-8") as fh:
        for key, text in rows:
            fh.write(f"{key}\t{text}\n")


class Qrels(dict):
    """``(qid, docid) -> grade``; absent pairs have grade 0."""

    def grade(self, qid: str, docid: str) -> int:
        return self.get((qid, docid), 0)

    def for_query(self, qid: str) -> dict[str, int]:
        return {d: g for (q, d), g in self.items() if q == qid}

    def query_ids(self) -> list[str]:
        return sorted({q for q, _ in self})

    def by_query(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (q, d), g in self.items():
            out.setdefault(q, {})[d] = g
        return out


def parse_qrels(path) -> Qrels:
    qrels = Qrels()
    for lineno, line in _read_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(path, lineno, f"expected 4 fields 'qid 0 docid grade', got {len(parts)}")
        try:
            grade = int(parts[3])
        except ValueError:
            raise FormatError(path, lineno, f"grade {parts[3]!r} is not an integer") from None
        if grade < 0:
            raise FormatError(path, lineno, "grade must be >= 0")
        qrels[(parts[0], parts[2])] = grade
    return qrels


def write_qrels(path, qrels: Mapping[tuple[str, str], int]):
    with open(path, "w", encoding="utf-8") as fh:
        for (qid, docid), grade in qrels.items():
            fh.write(f"{qid} 0 {docid} {grade}\n")


@dataclass(frozen=True)
class RunEntry:
    qid: str
    docid: str
    rank: int
    score: float
    tag: str = "irlab"


def parse_run(path) -> list[RunEntry]:
    run = []
    for lineno, line in _read_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(path, lineno, f"expected 6 fields 'qid Q0 docid rank score tag', got {len(parts)}")
        try:
            run.append(RunEntry(parts[0], parts[2], int(parts[3]), float(parts[4]), parts[5]))
        except ValueError as exc:
            raise FormatError(path, lineno, str(exc)) from None
    return run


def write_run(path, run: Iterable[RunEntry]):
    with open(path, "w", encoding="utf-8") as fh:
        for e in run:
            fh.write(f"{e.qid} Q0 {e.docid} {e.rank} {e.score:.6g} {e.tag}\n")


def ranked_run(scores: Mapping[str, Mapping[str, float]], tag: str = "irlab") -> list[RunEntry]:
    """Turn ``{qid: {docid: score}}`` into run entries (score desc, docid asc)."""
    run = []
    for qid in sorted(scores):
        ordered = sorted(scores[qid].items(), key=lambda kv: (-kv[1], kv[0]))
        run.extend(RunEntry(qid, d, r, float(s), tag) for r, (d, s) in enumerate(ordered, start=1))
    return run


def parse_triples(path) -> list[tuple[str, str, str]]:
    out = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(path, lineno, "expected 'qid<TAB>docid_pos<TAB>docid_neg'")
        out.append((parts[0], parts[1], parts[2]))
    return out


def write_triples(path, triples: Iterable[tuple[str, str, str]]):
    with open(path, "w", encoding="utf-8") as fh:
        for q, p, n in triples:
            fh.write(f"{q}\t{p}\t{n}\n")


@dataclass
class TextCollection:
    """A corpus and topic set encoded against one vocabulary."""

    vocab: Vocabulary
    documents: dict[str, Document]
    queries: dict[str, Query]


def write_vocabulary(path, vocab: Vocabulary):
    """One ``word<TAB>df<TAB>cf`` line per id, plus a header with N and |C|."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#\t{vocab.n_docs}\t{vocab.total_tokens}\n")
        for w, df, cf in zip(vocab.words, vocab.df, vocab.cf):
            fh.write(f"{w}\t{df}\t{cf}\n")


def read_vocabulary(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    try:
        _, n_docs, total = lines[0].split("\t")
        rows = [line.split("\t") for line in lines[1:]]
        return Vocabulary(
            [r[0] for r in rows],
            np.array([int(r[1]) for r in rows], dtype=np.int64),
            np.array([int(r[2]) for r in rows], dtype=np.int64),
            int(n_docs),
            int(total),
        )
    except (ValueError, IndexError) as exc:
        raise FormatError(path, 1, f"malformed vocabulary file: {exc}") from None


def load_collection(
    corpus_path,
    topics_path=None,
    min_count: int = 1,
    doc_analyzer: TokenizerConfig = DOC_ANALYZER,
    query_analyzer: TokenizerConfig = QUERY_ANALYZER,
    vocab: Vocabulary | None = None,
) -> TextCollection:
    """Read corpus/topics files, tokenize with identical stemming on both sides.

    With ``vocab`` the texts are encoded against it instead of a fresh one.
    """
    raw = parse_corpus(corpus_path)
    tokenized = [(docid, tokenize(text, doc_analyzer)) for docid, text in raw]
    tokenized = [(d, t) for d, t in tokenized if t]
    if vocab is None:
        vocab = build_vocabulary([t for _, t in tokenized], min_count)
    docs = {d: Document(d, vocab.encode(t), len(t)) for d, t in tokenized}
    queries = {}
    if topics_path is not None:
        for qid, text in parse_topics(Path(topics_path)):
            toks = tokenize(text, query_analyzer)
            if toks:
                queries[qid] = Query(qid, vocab.encode(toks))
    return TextCollection(vocab, docs, queries)
