"""Representation-focused and interaction-focused neural matchers.

``RepModel`` encodes query and document with one shared CNN tower and scores
the concatenated encodings with an MLP. ``IntModel`` builds a word-by-word
similarity matrix, convolves it, pools it onto a fixed grid and scores the grid
with an MLP. Both are callables ``model(query_tokens, doc_tokens) -> float``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import OOV_ID, Vocabulary
from .rng import make_rng

SIMILARITIES = ("dot", "cosine", "gaussian")


def _tokens(x) -> np.ndarray:
    return np.asarray(x.tokens if hasattr(x, "tokens") else x, dtype=np.int64)


def similarity(u, v, kind: str = "cosine", sigma: float = 1.0) -> float:
    """Similarity of two vectors; cosine with a zero vector is 0."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"similarity: dimension mismatch {u.shape} vs {v.shape}")
    if kind == "dot":
        return float(u @ v)
    if kind == "cosine":
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        return float(u @ v / (nu * nv)) if nu > 0 and nv > 0 else 0.0
    if kind == "gaussian":
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return float(np.exp(-np.sum((u - v) ** 2) / (2.0 * sigma * sigma)))
    raise ValueError(f"unknown similarity {kind!r}")


def _sim_tensor(A: T.Tensor, B: T.Tensor, kind: str, sigma: float) -> T.Tensor:
    if kind == "dot":
        return T.dot_matrix(A, B)
    if kind == "cosine":
        return T.cosine_matrix(A, B)
    if kind == "gaussian":
        return T.gaussian_matrix(A, B, sigma)
    raise ValueError(f"unknown similarity {kind!r}")


def interaction_matrix(q, d, embeddings: np.ndarray, kind: str = "cosine", sigma: float = 1.0) -> np.ndarray:
    """(len(q), len(d)) matrix of word-pair similarities."""
    q, d = _tokens(q), _tokens(d)
    if q.size == 0 or d.size == 0:
        raise ValueError("interaction_matrix: empty text")
    E = T.Tensor(embeddings)
    return _sim_tensor(T.embedding(E, q), T.embedding(E, d), kind, sigma).value


def similarity_to(word: int, tokens, embeddings: np.ndarray, kind: str = "cosine", sigma: float = 1.0) -> np.ndarray:
    """Similarity of one word to every token in ``tokens``."""
    return interaction_matrix([word], tokens, embeddings, kind, sigma)[0]


@dataclass
class PoolingRecord:
    """Where max pooling landed for the last scored pair."""

    query: np.ndarray
    document: np.ndarray
    doc_positions: np.ndarray  # document token position of every pooled selection
    cells: np.ndarray | None = None  # IntModel: (..., 2) argmax (row, col) cells
    row_records: int = 0  # IntModel with row pooling: one record per query row
    query_positions: np.ndarray | None = None


def _glorot(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class _Matcher:
    kind = "?"
    config: dict

    def __init__(self, vocab_size: int, dim: int, seed: int, max_len: int, train_embeddings: bool):
        self.vocab_size = vocab_size
        self.dim = dim
        self.seed = seed
        self.max_len = max_len
        self.train_embeddings = train_embeddings
        self.rng = make_rng(seed)
        table = self.rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
        table[OOV_ID] = 0.0
        self.embedding = T.Parameter("embedding", table)
        self.last_record: PoolingRecord | None = None

    @property
    def embeddings(self) -> np.ndarray:
        return self.embedding.value

    def parameters(self) -> list[T.Parameter]:
        raise NotImplementedError

    def trainable(self) -> list[T.Parameter]:
        ps = self.parameters()
        return ps if self.train_embeddings else [p for p in ps if p is not self.embedding]

    def _inputs(self, q, d):
        q, d = _tokens(q), _tokens(d)
        if q.size == 0 or d.size == 0:
            raise ValueError(f"{type(self).__name__}: empty query or document")
        return q, d[: self.max_len]

    def forward(self, q, d) -> T.Tensor:
        return self._forward(q, d)[0]

    def score(self, q, d) -> float:
        return self.forward(q, d).item()

    __call__ = score

    def hidden(self, q, d) -> np.ndarray:
        """Final hidden layer activations (the learned features)."""
        return self._forward(q, d)[1].value.copy()

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        T.save_checkpoint(directory / "model.ckpt", self.parameters())
        meta = {"kind": self.kind, **self.config}
        (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


class RepModel(_Matcher):
    """Siamese CNN towers (shared weights) with an MLP over the concatenated codes."""

    kind = "rep"

    def __init__(
        self,
        vocab_size: int,
        dim: int = 50,
        widths: Sequence[int] = (2, 3),
        channels: int = 32,
        hidden: int = 20,
        max_len: int = 500,
        seed: int = 0,
        train_embeddings: bool = True,
    ):
        super().__init__(vocab_size, dim, seed, max_len, train_embeddings)
        self.widths = tuple(widths)
        self.channels = channels
        self.n_hidden = hidden
        self.config = dict(
            vocab_size=vocab_size, dim=dim, widths=list(self.widths), channels=channels,
            hidden=hidden, max_len=max_len, seed=seed, train_embeddings=train_embeddings,
        )
        rng = self.rng
        self.convs = []
        for w in self.widths:
            K = T.Parameter(f"conv{w}.K", _glorot(rng, (w, dim, channels), w * dim, channels))
            b = T.Parameter(f"conv{w}.b", np.zeros(channels))
            self.convs.append((w, K, b))
        code = 2 * channels * len(self.widths)
        self.W1 = T.Parameter("mlp.W1", _glorot(rng, (code, hidden), code, hidden))
        self.b1 = T.Parameter("mlp.b1", np.zeros(hidden))
        self.W2 = T.Parameter("mlp.W2", _glorot(rng, (hidden, 1), hidden, 1))
        self.b2 = T.Parameter("mlp.b2", np.zeros(1))

    def parameters(self):
        ps = [self.embedding]
        for _, K, b in self.convs:
            ps += [K, b]
        return ps + [self.W1, self.b1, self.W2, self.b2]

    def encode(self, tokens) -> tuple[T.Tensor, list[np.ndarray]]:
        """Tower: returns the text code and, per width, the window start of each channel's max."""
        tokens = _tokens(tokens)
        n = len(tokens)
        widest = max(self.widths)
        if n < widest:
            tokens = np.concatenate([tokens, np.full(widest - n, OOV_ID)])
        x = T.embedding(self.embedding, tokens)
        parts, starts = [], []
        for _, K, b in self.convs:
            pooled, arg = T.maxpool1d(T.conv1d(x, K, b))
            parts.append(T.relu(T.flatten(pooled)))
            starts.append(arg[0])
        return T.concat(parts), starts

    def _forward(self, q, d):
        q, d = self._inputs(q, d)
        q_code, q_starts = self.encode(q)
        d_code, d_starts = self.encode(d)
        h = T.tanh(T.dense(T.concat([q_code, d_code]), self.W1, self.b1))
        out = T.reshape(T.dense(h, self.W2, self.b2), ())
        self.last_record = PoolingRecord(
            q, d, self._window_positions(d_starts, len(d)),
            query_positions=self._window_positions(q_starts, len(q)),
        )
        return out, h

    def _window_positions(self, starts, n) -> np.ndarray:
        pos = []
        for (w, _, _), s in zip(self.convs, starts):
            for k in range(w):
                pos.append(s + k)
        pos = np.concatenate(pos)
        return pos[pos < n]


class IntModel(_Matcher):
    """Interaction matrix -> 3x3 conv -> dynamic max pooling -> MLP.

    With ``row_pooling`` every query row is pooled separately along the
    document and the rows are then averaged, so each query term contributes
    on its own.
    """

    kind = "int"

    def __init__(
        self,
        vocab_size: int,
        dim: int = 50,
        similarity: str = "cosine",
        sigma: float = 1.0,
        channels: int = 8,
        kernel: tuple[int, int] = (3, 3),
        pool: tuple[int, int] = (3, 10),
        hidden: int = 20,
        row_pooling: bool = False,
        max_len: int = 500,
        seed: int = 0,
        train_embeddings: bool = True,
    ):
        if similarity not in SIMILARITIES:
            raise ValueError(f"unknown similarity {similarity!r}")
        if kernel[0] % 2 == 0 or kernel[1] % 2 == 0:
            raise ValueError("kernel sides must be odd so cells stay aligned with tokens")
        super().__init__(vocab_size, dim, seed, max_len, train_embeddings)
        self.similarity = similarity
        self.sigma = sigma
        self.channels = channels
        self.kernel = tuple(kernel)
        self.pool = tuple(pool)
        self.n_hidden = hidden
        self.row_pooling = row_pooling
        self.config = dict(
            vocab_size=vocab_size, dim=dim, similarity=similarity, sigma=sigma, channels=channels,
            kernel=list(self.kernel), pool=list(self.pool), hidden=hidden, row_pooling=row_pooling,
            max_len=max_len, seed=seed, train_embeddings=train_embeddings,
        )
        rng = self.rng
        kh, kw = self.kernel
        self.K = T.Parameter("conv.K", _glorot(rng, (kh, kw, 1, channels), kh * kw, channels))
        self.b = T.Parameter("conv.b", np.zeros(channels))
        grid = pool[1] * channels if row_pooling else pool[0] * pool[1] * channels
        self.W1 = T.Parameter("mlp.W1", _glorot(rng, (grid, hidden), grid, hidden))
        self.b1 = T.Parameter("mlp.b1", np.zeros(hidden))
        self.W2 = T.Parameter("mlp.W2", _glorot(rng, (hidden, 1), hidden, 1))
        self.b2 = T.Parameter("mlp.b2", np.zeros(1))

    def parameters(self):
        return [self.embedding, self.K, self.b, self.W1, self.b1, self.W2, self.b2]

    def interactions(self, q, d) -> T.Tensor:
        q, d = self._inputs(q, d)
        Q = T.embedding(self.embedding, q)
        D = T.embedding(self.embedding, d)
        return _sim_tensor(Q, D, self.similarity, self.sigma)

    def _forward(self, q, d):
        q, d = self._inputs(q, d)
        S = self.interactions(q, d)
        m, n = S.shape
        kh, kw = self.kernel
        X = T.pad2d(T.reshape(S, (m, n, 1)), kh // 2, kw // 2)
        fmap = T.conv2d(X, self.K, self.b)  # (m, n, C), cell (i, j) centred on (q_i, d_j)
        col_bins = T.pool_bins(n, self.pool[1])
        if self.row_pooling:
            pooled, arg = T.binned_max2d(fmap, [(i, i + 1) for i in range(m)], col_bins)
            grid = T.mean_rows(T.relu(pooled))
            rows = m
        else:
            pooled, arg = T.binned_max2d(fmap, T.pool_bins(m, self.pool[0]), col_bins)
            grid = T.relu(pooled)
            rows = 0
        h = T.tanh(T.dense(T.flatten(grid), self.W1, self.b1))
        out = T.reshape(T.dense(h, self.W2, self.b2), ())
        self.last_record = PoolingRecord(q, d, arg[..., 1].reshape(-1), cells=arg, row_records=rows)
        return out, h


def pooling_words(model: _Matcher, q=None, d=None, vocab: Vocabulary | None = None) -> list[tuple]:
    """Document words selected by max pooling, ranked by selection count.

    Uses the record of the last scored pair; when ``q``/``d`` are given and
    differ from it, that pair is scored first. Ties rank by token id.
    """
    rec = model.last_record
    if q is not None and d is not None:
        qq, dd = model._inputs(q, d)
        if rec is None or not (np.array_equal(qq, rec.query) and np.array_equal(dd, rec.document)):
            model.score(q, d)
            rec = model.last_record
    if rec is None:
        raise RuntimeError("pooling_words: the model has not scored any pair yet")
    counts = Counter(int(t) for t in rec.document[rec.doc_positions])
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if vocab is not None:
        return [(vocab.words[t], c) for t, c in ranked]
    return ranked


# --- training ----------------------------------------------------------------


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    rate: float = 0.001
    margin: float = 1.0
    batch: int = 16
    seed: int = 0
    optimizer: str = "adam"


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)


def train_pairwise(model: _Matcher, triples, config: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Mini-batch pairwise hinge training over ``(q, d_pos, d_neg)`` token triples.

    Each epoch visits the triples in a seeded random order; the loss trace
    holds the mean hinge loss of every epoch.
    """
    triples = list(triples)
    if not triples:
        raise ValueError("train_pairwise: no training triples")
    params = model.trainable()
    opt = T.make_optimizer(params, config.optimizer, config.rate)
    rng = make_rng(config.seed)
    result = TrainResult()
    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch):
            batch = order[start : start + config.batch]
            opt.zero_grad()
            for k in batch:
                q, dp, dn = triples[k]
                loss = T.hinge(model.forward(q, dp), model.forward(q, dn), config.margin)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, triple {k}: {value}")
                total += value
                if value > 0:
                    T.backward(T.scale(loss, 1.0 / len(batch)))
            if model.train_embeddings:
                model.embedding.grad[OOV_ID] = 0.0
            opt.step()
        result.loss_trace.append(total / len(triples))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}: loss {result.loss_trace[-1]:.6f}")
    for p in params:
        if not np.all(np.isfinite(p.value)):
            raise TrainingError(f"parameter {p.name} became non-finite")
    return result


MODEL_KINDS = {"rep": RepModel, "int": IntModel}


def build_model(kind: str, **kwargs) -> _Matcher:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls(**kwargs)


def load_model(directory) -> _Matcher:
    directory = Path(directory)
    meta = json.loads((directory / "model.json").read_text())
    kind = meta.pop("kind")
    for key in ("widths", "kernel", "pool"):
        if key in meta:
            meta[key] = tuple(meta[key])
    model = build_model(kind, **meta)
    T.load_checkpoint(directory / "model.ckpt", model.parameters())
    return model
