"""Finite-difference verification of every differentiable op and both matchers.

Each fragment builds a scalar from one op (contracted with a fixed random
weight tensor so no gradient is trivially uniform). Evaluation points that
land within ``kink_tol`` of a relu/pooling kink are resampled.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .matchers import build_model
from .rng import make_rng

EPS = 1e-5
KINK_TOL = 1e-4
MAX_RESAMPLES = 50


def _param(rng, name, *shape, scale=1.0):
    return T.Parameter(name, rng.normal(0.0, scale, size=shape))


def _fixed_contract(shape_rng):
    cache = {}

    def contract(out: T.Tensor) -> T.Tensor:
        if "w" not in cache:
            cache["w"] = T.Tensor(shape_rng.normal(size=out.shape))
        return T.sum_all(T.mul(out, cache["w"]))

    return contract


def _fragment(build):
    def make(rng):
        contract = _fixed_contract(np.random.default_rng(int(rng.integers(2**32))))
        fn, params = build(rng)
        return (lambda: contract(fn())), params

    return make


@_fragment
def frag_dense(rng):
    x, W, b = _param(rng, "x", 5), _param(rng, "W", 5, 4), _param(rng, "b", 4)
    return (lambda: T.dense(x, W, b)), [x, W, b]


@_fragment
def frag_dense_batch(rng):
    x, W, b = _param(rng, "x", 3, 5), _param(rng, "W", 5, 4), _param(rng, "b", 4)
    return (lambda: T.dense(x, W, b)), [x, W, b]


@_fragment
def frag_matmul(rng):
    a, b = _param(rng, "a", 3, 4), _param(rng, "b", 4, 2)
    return (lambda: T.matmul(a, b)), [a, b]


@_fragment
def frag_elementwise(rng):
    a, b = _param(rng, "a", 6), _param(rng, "b", 6)
    return (lambda: T.mul(T.sub(T.add(a, b), T.scale(b, 0.3)), a)), [a, b]


@_fragment
def frag_relu(rng):
    a = _param(rng, "a", 8)
    return (lambda: T.relu(a)), [a]


@_fragment
def frag_tanh(rng):
    a = _param(rng, "a", 8)
    return (lambda: T.tanh(a)), [a]


@_fragment
def frag_concat_transpose(rng):
    a, b = _param(rng, "a", 2, 3), _param(rng, "b", 2, 3)
    return (lambda: T.transpose(T.concat([a, b], axis=0))), [a, b]


@_fragment
def frag_embedding_mean(rng):
    E = _param(rng, "E", 6, 4)
    ids = rng.integers(0, 6, size=5)
    return (lambda: T.mean_rows(T.embedding(E, ids))), [E]


@_fragment
def frag_conv1d(rng):
    x, K, b = _param(rng, "x", 7, 3), _param(rng, "K", 2, 3, 4), _param(rng, "b", 4)
    return (lambda: T.conv1d(T.pad1d(x, 1, 1), K, b)), [x, K, b]


@_fragment
def frag_conv2d(rng):
    X, K, b = _param(rng, "X", 5, 6, 2), _param(rng, "K", 3, 3, 2, 3), _param(rng, "b", 3)
    return (lambda: T.conv2d(T.pad2d(X, 1, 1), K, b)), [X, K, b]


@_fragment
def frag_maxpool1d(rng):
    x = _param(rng, "x", 8, 3)
    return (lambda: T.maxpool1d(x, 2)[0]), [x]


@_fragment
def frag_maxpool2d(rng):
    X = _param(rng, "X", 4, 6, 2)
    return (lambda: T.maxpool2d(X, (2, 3))[0]), [X]


@_fragment
def frag_dynamic_pool(rng):
    X = _param(rng, "X", 5, 13, 2)
    return (lambda: T.dynamic_maxpool2d(X, 3, 10)[0]), [X]


@_fragment
def frag_conv_pool_tanh(rng):
    X, K, b = _param(rng, "X", 4, 9, 1), _param(rng, "K", 3, 3, 1, 2), _param(rng, "b", 2)
    return (lambda: T.tanh(T.dynamic_maxpool2d(T.conv2d(X, K, b), 2, 3)[0])), [X, K, b]


@_fragment
def frag_cosine(rng):
    u, v = _param(rng, "u", 5), _param(rng, "v", 5)
    return (lambda: T.reshape(T.cosine(u, v), (1,))), [u, v]


@_fragment
def frag_dot_matrix(rng):
    A, B = _param(rng, "A", 3, 4), _param(rng, "B", 5, 4)
    return (lambda: T.dot_matrix(A, B)), [A, B]


@_fragment
def frag_cosine_matrix(rng):
    A, B = _param(rng, "A", 3, 4), _param(rng, "B", 5, 4)
    return (lambda: T.cosine_matrix(A, B)), [A, B]


@_fragment
def frag_gaussian_matrix(rng):
    A, B = _param(rng, "A", 3, 4, scale=0.5), _param(rng, "B", 5, 4, scale=0.5)
    return (lambda: T.gaussian_matrix(A, B, 1.0)), [A, B]


def frag_hinge(rng):
    p, n = _param(rng, "p", 1), _param(rng, "n", 1)
    return (lambda: T.hinge(T.reshape(p, ()), T.reshape(n, ()), 5.0)), [p, n]


OP_FRAGMENTS: dict[str, Callable] = {
    "dense": frag_dense,
    "dense_batch": frag_dense_batch,
    "matmul": frag_matmul,
    "add_sub_mul_scale": frag_elementwise,
    "relu": frag_relu,
    "tanh": frag_tanh,
    "concat_transpose": frag_concat_transpose,
    "embedding_mean_rows": frag_embedding_mean,
    "conv1d": frag_conv1d,
    "conv2d": frag_conv2d,
    "maxpool1d": frag_maxpool1d,
    "maxpool2d": frag_maxpool2d,
    "dynamic_maxpool2d": frag_dynamic_pool,
    "conv2d_pool_tanh": frag_conv_pool_tanh,
    "cosine": frag_cosine,
    "dot_matrix": frag_dot_matrix,
    "cosine_matrix": frag_cosine_matrix,
    "gaussian_matrix": frag_gaussian_matrix,
    "hinge": frag_hinge,
}

MATCHER_VARIANTS = {
    "rep": ("rep", {"channels": 4}),
    "int_cosine": ("int", {"similarity": "cosine"}),
    "int_dot": ("int", {"similarity": "dot"}),
    "int_gaussian": ("int", {"similarity": "gaussian"}),
    "int_row_pooling": ("int", {"row_pooling": True}),
}


def _matcher_fragment(kind, kwargs):
    def build(rng):
        model = build_model(kind, vocab_size=30, dim=8, seed=int(rng.integers(2**31)), **kwargs)
        # Unit-scale embeddings keep interaction values away from pooling ties.
        model.embedding.value[1:] = rng.uniform(-1.0, 1.0, size=(29, 8))
        words = rng.permutation(np.arange(1, 30))
        q = words[:3]
        d = rng.permutation(np.concatenate([words[3:15], q[:1]]))
        return (lambda: model.forward(q, d)), model.parameters()

    return build


def check_fragment(build, seed: int, eps: float = EPS, max_components: int | None = 40) -> tuple[float, int]:
    """Max relative error for one seed; returns ``(error, resamples)``."""
    rng = make_rng(seed)
    for attempt in range(MAX_RESAMPLES):
        fn, params = build(rng)
        try:
            return T.grad_check(fn, params, eps, max_components, rng, kink_tol=KINK_TOL), attempt
        except T.TieError:
            continue
    raise T.TieError(f"no kink-free evaluation point after {MAX_RESAMPLES} draws")


def run_all(seeds=range(10), include_ops=True, include_matchers=True) -> dict[str, float]:
    """``{fragment name: max relative error over seeds}``."""
    targets = {}
    if include_ops:
        targets.update(OP_FRAGMENTS)
    if include_matchers:
        targets.update({name: _matcher_fragment(k, kw) for name, (k, kw) in MATCHER_VARIANTS.items()})
    return {name: max(check_fragment(build, s)[0] for s in seeds) for name, build in targets.items()}
