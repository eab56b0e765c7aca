"""Analysis procedures: feature-robustness ablation, pooling-word overlap,
last-match positions and passage-split scoring."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Document, Qrels, split_passages
from .metrics import mean_average_precision, RankedList
from .rng import make_rng


# --- curves ------------------------------------------------------------------


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    x_label: str = "x"
    y_label: str = "y"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("curve needs equal-length 1-D x and y")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("curve x values must be strictly increasing")

    def __len__(self):
        return len(self.x)

    def write(self, path):
        """``x,y`` CSV plus a JSON metadata file next to it."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.x_label, self.y_label])
            for x, y in zip(self.x, self.y):
                w.writerow([f"{x:.6g}", f"{y:.6g}"])
        meta = {"x_label": self.x_label, "y_label": self.y_label, "points": len(self), **self.meta}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serialisable: {type(x)}")


# --- feature robustness ------------------------------------------------------


@dataclass
class FeatureSet:
    matrix: np.ndarray
    labels: np.ndarray
    names: list[str]
    qids: list[str]
    docids: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        n, f = self.matrix.shape
        if len(self.labels) != n or len(self.qids) != n or len(self.docids) != n:
            raise ValueError("feature rows, labels, qids and docids must align")
        if len(self.names) != f:
            raise ValueError("one name per feature column")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.labels))):
            raise ValueError("feature set contains non-finite values")

    def rows(self, qids: Iterable[str]) -> np.ndarray:
        keep = set(qids)
        return np.array([i for i, q in enumerate(self.qids) if q in keep], dtype=np.int64)

    def qrels(self) -> Qrels:
        return Qrels({(q, d): int(g) for q, d, g in zip(self.qids, self.docids, self.labels)})

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["qid", "docid", "label", *self.names])
            for q, d, y, row in zip(self.qids, self.docids, self.labels, self.matrix):
                w.writerow([q, d, f"{y:.6g}", *(f"{v:.6g}" for v in row)])

    @classmethod
    def read_csv(cls, path) -> "FeatureSet":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:3] != ["qid", "docid", "label"]:
            raise ValueError(f"{path}: header must start with qid,docid,label")
        body = rows[1:]
        return cls(
            np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), len(rows[0]) - 3),
            np.array([float(r[2]) for r in body]),
            rows[0][3:],
            [r[0] for r in body],
            [r[1] for r in body],
        )


@dataclass(frozen=True)
class LinearFit:
    weights: np.ndarray
    intercept: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.intercept


def linear_probe(X, y, l2: float = 0.0, intercept: bool = True) -> LinearFit:
    """Ridge least squares: minimise ||Xw + c - y||^2 + l2 ||w||^2 (c unpenalised)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    if intercept:
        mx, my = X.mean(axis=0), y.mean()
        Xc, yc = X - mx, y - my
    else:
        Xc, yc = X, y
    A = Xc.T @ Xc + l2 * np.eye(X.shape[1])
    if l2 == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("singular normal equations; use l2 > 0")
    w = np.linalg.solve(A, Xc.T @ yc)
    c = float(my - mx @ w) if intercept else 0.0
    return LinearFit(w, c)


def _map_of(scores: np.ndarray, fs: FeatureSet, rows: np.ndarray) -> float:
    per_query: dict[str, dict[str, float]] = {}
    for i in rows:
        per_query.setdefault(fs.qids[i], {})[fs.docids[i]] = float(scores[i])
    ranked = {q: RankedList.from_scores(q, s) for q, s in per_query.items()}
    return mean_average_precision(ranked, fs.qrels())


def importance_order(fit: LinearFit, X: np.ndarray) -> np.ndarray:
    """Feature indices by decreasing |weight| * std (ties by index)."""
    imp = np.abs(fit.weights) * X.std(axis=0)
    return np.lexsort((np.arange(len(imp)), -imp))


def robustness_curve(
    fs: FeatureSet,
    train_qids: Sequence[str],
    test_qids: Sequence[str],
    l2: float = 1e-3,
    refit: bool = False,
) -> Curve:
    """Test MAP of the linear probe as features are removed in importance order.

    By default removed features are zeroed and the fitted weights kept; with
    ``refit`` the probe is refitted on the remaining features at every step.
    """
    tr, te = fs.rows(train_qids), fs.rows(test_qids)
    if len(tr) == 0 or len(te) == 0:
        raise ValueError("robustness_curve: empty train or test split")
    fit = linear_probe(fs.matrix[tr], fs.labels[tr], l2)
    order = importance_order(fit, fs.matrix[tr])
    n_feat = fs.matrix.shape[1]
    ys = []
    for removed in range(n_feat + 1):
        gone = order[:removed]
        if refit and 0 < removed < n_feat:
            keep = np.setdiff1d(np.arange(n_feat), gone)
            f2 = linear_probe(fs.matrix[tr][:, keep], fs.labels[tr], l2)
            scores = fs.matrix[:, keep] @ f2.weights + f2.intercept
        else:
            w = fit.weights.copy()
            w[gone] = 0.0
            scores = fs.matrix @ w + fit.intercept
        ys.append(_map_of(scores, fs, te))
    meta = {
        "removal_order": [fs.names[i] for i in order],
        "weights": fit.weights,
        "intercept": fit.intercept,
        "l2": l2,
        "refit": refit,
        "fit_on": "train split",
    }
    return Curve(np.arange(n_feat + 1), np.array(ys), "features_removed", "MAP", meta)


def planted_feature_set(kind: str, n_queries: int = 1000, docs_per_query: int = 5, seed: int = 0) -> FeatureSet:
    """Synthetic 1-relevant-in-``docs_per_query`` feature sets.

    ``concentrated``: one label copy plus nine Gaussian noise columns.
    ``redundant``: ten copies of the label.
    """
    rng = make_rng(seed)
    n = n_queries * docs_per_query
    labels = np.zeros(n)
    qids, docids = [], []
    for q in range(n_queries):
        rel = int(rng.integers(docs_per_query))
        labels[q * docs_per_query + rel] = 1.0
        order = rng.permutation(docs_per_query)
        for k in range(docs_per_query):
            qids.append(f"q{q}")
            docids.append(f"q{q}-d{order[k]}")
    if kind == "concentrated":
        X = np.column_stack([labels, rng.normal(size=(n, 9))])
        names = ["label"] + [f"noise{i}" for i in range(1, 10)]
    elif kind == "redundant":
        X = np.repeat(labels[:, None], 10, axis=1)
        names = [f"label{i}" for i in range(10)]
    else:
        raise ValueError(f"unknown planted feature set {kind!r}")
    return FeatureSet(X, labels, names, qids, docids)


def split_queries(qids: Iterable[str], test_fraction: float = 0.2, seed: int = 0) -> tuple[list[str], list[str]]:
    uniq = sorted(set(qids))
    perm = make_rng(seed).permutation(len(uniq))
    n_test = int(round(test_fraction * len(uniq)))
    test = sorted(uniq[i] for i in perm[:n_test])
    train = sorted(uniq[i] for i in perm[n_test:])
    return train, test


def learned_features(model, pairs: Iterable[tuple[str, str, np.ndarray, np.ndarray, int]]) -> FeatureSet:
    """Final hidden activations of a matcher for ``(qid, docid, q, d, grade)`` pairs."""
    qids, docids, rows, labels = [], [], [], []
    for qid, docid, q, d, g in pairs:
        qids.append(qid)
        docids.append(docid)
        rows.append(model.hidden(q, d))
        labels.append(g)
    names = [f"h{i}" for i in range(len(rows[0]))]
    return FeatureSet(np.array(rows), np.array(labels), names, qids, docids)


def classic_features(stats, pairs) -> FeatureSet:
    from .rankers import FEATURE_NAMES, feature_vector

    qids, docids, rows, labels = [], [], [], []
    for qid, docid, q, d, g in pairs:
        qids.append(qid)
        docids.append(docid)
        rows.append(feature_vector(q, d, stats))
        labels.append(g)
    return FeatureSet(np.array(rows), np.array(labels), list(FEATURE_NAMES), qids, docids)


# --- pooling words -----------------------------------------------------------


def overlap_curve(ranked_words: Sequence, reference: Iterable, max_n: int) -> Curve:
    """y(n) = |top-n ranked words ∩ reference| / n for n = 1..min(max_n, len)."""
    ref = set(reference)
    n = min(max_n, len(ranked_words))
    hits = np.cumsum([w in ref for w in ranked_words[:n]])
    xs = np.arange(1, n + 1)
    return Curve(xs, hits / xs if n else np.empty(0), "top_n", "overlap")


def collect_pooling_words(model, pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> list[tuple[int, int]]:
    """Pooled document words over many pairs, ranked by count (ties by id)."""
    counts: Counter = Counter()
    for q, d in pairs:
        model.score(q, d)
        rec = model.last_record
        counts.update(int(t) for t in rec.document[rec.doc_positions])
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass
class PoolingReport:
    ranked: list[tuple[int, int]]
    top_n: int
    query_overlap: float
    topic_overlap: float | None
    chance_query_overlap: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "top_n": self.top_n,
            "n_queries": self.n_queries,
            "query_overlap": self.query_overlap,
            "topic_overlap": self.topic_overlap,
            "chance_query_overlap": self.chance_query_overlap,
        }


def pooling_report(model, dataset, qids: Sequence[str], top_n: int = 50) -> PoolingReport:
    """Top pooled words over every judged pair of ``qids``, compared with the
    union of those queries' terms and (if any) the planted topic vocabulary."""
    pairs, query_words = [], set()
    for q in qids:
        qt = dataset.queries[q].tokens
        query_words.update(int(t) for t in qt)
        pairs += [(qt, dataset.documents[d].tokens) for d in dataset.docs_for(q)]
    ranked = collect_pooling_words(model, pairs)
    top = [w for w, _ in ranked[:top_n]]
    topic_vocab = dataset.topic_vocabulary
    return PoolingReport(
        ranked,
        top_n,
        sum(w in query_words for w in top) / len(top),
        sum(w in topic_vocab for w in top) / len(top) if topic_vocab else None,
        len(query_words) / (len(dataset.vocab) - 1),
        len(qids),
    )


# --- truncation and passages -------------------------------------------------


@dataclass
class PositionReport:
    histogram: Curve
    positions: np.ndarray
    no_match: int
    threshold: int
    fraction_beyond: float


def last_match_positions(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]],
    threshold: int = 500,
    bin_width: int = 100,
) -> PositionReport:
    """1-based position of the last query-term occurrence in each untruncated document."""
    positions, no_match, seen = [], 0, 0
    for q, d in pairs:
        seen += 1
        d = np.asarray(getattr(d, "tokens", d))
        hits = np.flatnonzero(np.isin(d, np.asarray(getattr(q, "tokens", q))))
        if hits.size == 0:
            no_match += 1
        else:
            positions.append(int(hits[-1]) + 1)
    if seen == 0:
        raise ValueError("last_match_positions: no pairs")
    pos = np.array(positions, dtype=np.int64)
    top = int(pos.max()) if pos.size else bin_width
    edges = np.arange(0, top + bin_width, bin_width)
    edges = edges if edges[-1] >= top else np.append(edges, edges[-1] + bin_width)
    counts, _ = np.histogram(pos, bins=edges) if pos.size else (np.zeros(len(edges) - 1), None)
    hist = Curve(edges[1:], counts, "position_upper_edge", "count", {"bin_width": bin_width})
    frac = float(np.mean(pos > threshold)) if pos.size else 0.0
    hist.meta.update({"threshold": threshold, "fraction_beyond": frac, "no_match": no_match})
    return PositionReport(hist, pos, no_match, threshold, frac)


class Truncated:
    """Scorer that only sees the first ``max_len`` document tokens."""

    def __init__(self, scorer: Callable, max_len: int = 500):
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.scorer = scorer
        self.max_len = max_len
        self.name = f"{getattr(scorer, 'name', 'scorer')}@{max_len}"

    def __call__(self, q, d) -> float:
        d = np.asarray(getattr(d, "tokens", d))
        return self.scorer(q, d[: self.max_len])


def passage_score(scorer: Callable, q, d, passage_len: int = 500, stride: int | None = None, agg: str = "max") -> float:
    """Aggregate ``scorer`` over sliding passages of ``d``."""
    tokens = np.asarray(getattr(d, "tokens", d))
    if tokens.size == 0:
        raise ValueError("passage_score: empty document")
    passages = split_passages(Document.of("d", tokens), passage_len, stride)
    scores = [scorer(q, p.tokens) for p in passages]
    if agg == "max":
        return float(max(scores))
    if agg == "mean":
        return float(np.mean(scores))
    raise ValueError(f"unknown aggregation {agg!r}")


class PassageScorer:
    def __init__(self, scorer: Callable, passage_len: int = 500, stride: int | None = None, agg: str = "max"):
        self.scorer = scorer
        self.passage_len = passage_len
        self.stride = stride
        self.agg = agg
        self.name = f"{getattr(scorer, 'name', 'scorer')}/passages{passage_len}"

    def __call__(self, q, d) -> float:
        return passage_score(self.scorer, q, d, self.passage_len, self.stride, self.agg)


def positions_from_qrels(queries: Mapping, documents: Mapping, qrels: Qrels, relevant_only: bool = True):
    """(q, d) token pairs for judged pairs present in both maps."""
    for (qid, docid), g in sorted(qrels.items()):
        if relevant_only and g <= 0:
            continue
        if qid in queries and docid in documents:
            yield queries[qid].tokens, documents[docid].tokens
