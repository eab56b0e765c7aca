"""Minimal reverse-mode autodiff on numpy arrays.

Only the operations the two neural matchers need are provided. Convolutions are
valid-mode (pad explicitly with :func:`pad2d` / :func:`pad1d`) and pooling is
non-overlapping unless bins are given. Max pooling returns the argmax positions
next to the pooled tensor; ties go to the lowest (row-major) index.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class TieError(RuntimeError):
    """The evaluation point sits within tolerance of a relu kink or pooling tie."""


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, parents: tuple = (), backward_fn=None, requires_grad=False, op="leaf"):
        self.value = np.asarray(value, dtype=DTYPE)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self.grad = np.zeros_like(self.value) if (requires_grad and not parents) else None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn, op) -> Tensor:
    return Tensor(value, tuple(parents), backward_fn, op=op)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaf gradients accumulate across calls (two calls without ``zero_grad``
    double them); intermediate adjoints are not stored.
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward expects the Tensor produced by a forward pass")
    if not loss.parents and loss.backward_fn is None:
        raise GradientError("backward called on a leaf: run a forward pass first")
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    adjoint = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo(loss)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


# --- kink monitoring for gradient checks -------------------------------------

_kink_log: list[float] | None = None


@contextmanager
def kink_monitor():
    """Collect the distance to the nearest relu kink / pooling tie of each op."""
    global _kink_log
    saved, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = saved


def _report_kink(distance: float):
    if _kink_log is not None:
        _kink_log.append(float(distance))


# --- elementwise and linear ops ----------------------------------------------


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same("add", a, b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same("sub", a, b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    shape = a.shape
    return _node(a.value.mean(), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (-1,))


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got {a.shape}")
    return _node(a.value.T, (a,), lambda g: (g.T,), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n,) or (batch, n)."""
    xv, Wv = x.value, W.value
    if Wv.ndim != 2 or xv.shape[-1] != Wv.shape[0] or b.shape != (Wv.shape[1],):
        raise ShapeError(f"dense: x{x.shape} W{W.shape} b{b.shape}")

    def bw(g):
        if xv.ndim == 1:
            return g @ Wv.T, np.outer(xv, g), g
        return g @ Wv.T, xv.T @ g, g.sum(axis=0)

    return _node(xv @ Wv + b.value, (x, W, b), bw, "dense")


def relu(a: Tensor) -> Tensor:
    """Rectifier; the subgradient at exactly 0 is 0."""
    av = a.value
    if _kink_log is not None and av.size:
        _report_kink(np.abs(av).min())
    mask = av > 0
    return _node(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    values = [t.value for t in tensors]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[v.shape for v in values]} along axis {axis}") from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), bw, "concat")


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, ids, g)
        return (out,)

    return _node(table.value[ids], (table,), bw, "embedding")


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0."""
    n = a.shape[0]
    shape = a.shape
    return _node(a.value.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean_rows")


def pad1d(x: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad along axis 0."""
    widths = [(before, after)] + [(0, 0)] * (x.value.ndim - 1)
    n = x.shape[0]
    return _node(np.pad(x.value, widths), (x,), lambda g: (g[before : before + n],), "pad1d")


def pad2d(x: Tensor, ph: int, pw: int) -> Tensor:
    """Zero-pad the first two axes symmetrically."""
    widths = [(ph, ph), (pw, pw)] + [(0, 0)] * (x.value.ndim - 2)
    h, w = x.shape[:2]
    return _node(np.pad(x.value, widths), (x,), lambda g: (g[ph : ph + h, pw : pw + w],), "pad2d")


# --- convolutions ------------------------------------------------------------


def conv1d(x: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """Valid 1-d convolution: x (L, Cin), K (width, Cin, Cout), b (Cout,) -> (L-width+1, Cout)."""
    xv, Kv = x.value, K.value
    if xv.ndim != 2 or Kv.ndim != 3 or xv.shape[1] != Kv.shape[1] or b.shape != (Kv.shape[2],):
        raise ShapeError(f"conv1d: x{x.shape} K{K.shape} b{b.shape}")
    width, cin, cout = Kv.shape
    L = xv.shape[0]
    if L < width:
        raise ShapeError(f"conv1d: input length {L} shorter than kernel width {width}")
    n_out = L - width + 1
    # patches[t] = x[t:t+width].ravel()
    patches = np.lib.stride_tricks.sliding_window_view(xv, width, axis=0)  # (n_out, cin, width)
    patches = patches.transpose(0, 2, 1).reshape(n_out, width * cin)
    Kmat = Kv.reshape(width * cin, cout)
    out = patches @ Kmat + b.value

    def bw(g):
        dK = (patches.T @ g).reshape(Kv.shape)
        dpatch = (g @ Kmat.T).reshape(n_out, width, cin)
        dx = np.zeros_like(xv)
        for k in range(width):
            dx[k : k + n_out] += dpatch[:, k, :]
        return dx, dK, g.sum(axis=0)

    return _node(out, (x, K, b), bw, "conv1d")


def conv2d(X: Tensor, K: Tensor, b: Tensor) -> Tensor:
    """Valid 2-d convolution: X (H, W) or (H, W, Cin), K (kh, kw, Cin, Cout) -> (H-kh+1, W-kw+1, Cout)."""
    Xv = X.value
    squeeze = Xv.ndim == 2
    if squeeze:
        Xv = Xv[:, :, None]
    Kv = K.value
    if Xv.ndim != 3 or Kv.ndim != 4 or Xv.shape[2] != Kv.shape[2] or b.shape != (Kv.shape[3],):
        raise ShapeError(f"conv2d: X{X.shape} K{K.shape} b{b.shape}")
    kh, kw, cin, cout = Kv.shape
    H, W = Xv.shape[:2]
    if H < kh or W < kw:
        raise ShapeError(f"conv2d: input {X.shape} smaller than kernel {(kh, kw)}")
    oh, ow = H - kh + 1, W - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(Xv, (kh, kw), axis=(0, 1))  # (oh, ow, cin, kh, kw)
    patches = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    Kmat = Kv.reshape(kh * kw * cin, cout)
    out = (patches @ Kmat + b.value).reshape(oh, ow, cout)

    def bw(g):
        g2 = g.reshape(oh * ow, cout)
        dK = (patches.T @ g2).reshape(Kv.shape)
        dpatch = (g2 @ Kmat.T).reshape(oh, ow, kh, kw, cin)
        dX = np.zeros_like(Xv)
        for i in range(kh):
            for j in range(kw):
                dX[i : i + oh, j : j + ow] += dpatch[:, :, i, j, :]
        return (dX[:, :, 0] if squeeze else dX), dK, g2.sum(axis=0)

    return _node(out, (X, K, b), bw, "conv2d")


# --- pooling -------------------------------------------------------------------


def _top_gap(block: np.ndarray) -> float:
    """Smallest gap between the best and runner-up along axis 0."""
    if block.shape[0] < 2:
        return math.inf
    part = -np.partition(-block, 1, axis=0)
    # exact-zero maxima come from relu clamps or zero vectors, whose gradient is 0 anyway
    live = part[0] != 0.0
    if not live.any():
        return math.inf
    return float((part[0] - part[1])[live].min())


def maxpool1d(x: Tensor, window: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping max pooling along axis 0.

    ``x`` is (L,) or (L, C); ``window=None`` pools globally. A trailing
    remainder shorter than ``window`` is dropped. Returns ``(pooled, argmax)``
    where ``argmax`` holds absolute indices along axis 0.
    """
    xv = x.value
    squeeze = xv.ndim == 1
    if squeeze:
        xv = xv[:, None]
    L, C = xv.shape
    window = L if window is None else window
    if window < 1 or L < window:
        raise ShapeError(f"maxpool1d: window {window} for input {x.shape}")
    nb = L // window
    blocks = xv[: nb * window].reshape(nb, window, C)
    local = blocks.argmax(axis=1)  # (nb, C)
    arg = local + (np.arange(nb) * window)[:, None]
    out = np.take_along_axis(blocks, local[:, None, :], axis=1)[:, 0, :]
    if _kink_log is not None:
        _report_kink(min(_top_gap(blocks[k]) for k in range(nb)))
    cols = np.broadcast_to(np.arange(C), arg.shape)

    def bw(g):
        g2 = g[:, None] if squeeze else g
        dx = np.zeros_like(x.value if not squeeze else x.value[:, None])
        np.add.at(dx, (arg, cols), g2)
        return (dx[:, 0] if squeeze else dx,)

    if squeeze:
        return _node(out[:, 0], (x,), bw, "maxpool1d"), arg[:, 0]
    return _node(out, (x,), bw, "maxpool1d"), arg


def pool_bins(n: int, n_bins: int) -> list[tuple[int, int]]:
    """Dynamic pooling ranges: ``n_bins`` nonempty, covering ``[0, n)``.

    When ``n < n_bins`` neighbouring bins share positions, so no bin is ever
    empty.
    """
    if n < 1 or n_bins < 1:
        raise ShapeError(f"pool_bins: n={n}, n_bins={n_bins}")
    out = []
    for k in range(n_bins):
        lo = (k * n) // n_bins
        hi = -((-(k + 1) * n) // n_bins)  # ceil
        out.append((lo, max(hi, lo + 1)))
    return out


def binned_max2d(X: Tensor, row_bins, col_bins) -> tuple[Tensor, np.ndarray]:
    """Max over rectangular bins of X (H, W, C) -> (R, Cb, C) plus argmax (R, Cb, C, 2)."""
    Xv = X.value
    if Xv.ndim != 3:
        raise ShapeError(f"binned_max2d: expected (H, W, C), got {X.shape}")
    C = Xv.shape[2]
    R, Cb = len(row_bins), len(col_bins)
    out = np.empty((R, Cb, C), dtype=DTYPE)
    arg = np.empty((R, Cb, C, 2), dtype=np.int64)
    gap = math.inf
    track = _kink_log is not None
    for r, (r0, r1) in enumerate(row_bins):
        band = Xv[r0:r1]
        for c, (c0, c1) in enumerate(col_bins):
            block = band[:, c0:c1].reshape(-1, C)
            local = block.argmax(axis=0)
            out[r, c] = block[local, np.arange(C)]
            w = c1 - c0
            arg[r, c, :, 0] = r0 + local // w
            arg[r, c, :, 1] = c0 + local % w
            if track:
                gap = min(gap, _top_gap(block))
    if track:
        _report_kink(gap)
    ii, jj = arg[..., 0], arg[..., 1]
    cc = np.broadcast_to(np.arange(C), ii.shape)

    def bw(g):
        dX = np.zeros_like(Xv)
        np.add.at(dX, (ii, jj, cc), g)
        return (dX,)

    return _node(out, (X,), bw, "binned_max2d"), arg


def maxpool2d(X: Tensor, window: tuple[int, int]) -> tuple[Tensor, np.ndarray]:
    """Non-overlapping 2-d max pooling over (H, W) or (H, W, C)."""
    squeeze = X.value.ndim == 2
    Xc = reshape(X, X.shape + (1,)) if squeeze else X
    H, W = Xc.shape[:2]
    wh, ww = window
    if wh < 1 or ww < 1 or H < wh or W < ww:
        raise ShapeError(f"maxpool2d: window {window} for input {X.shape}")
    rows = [(k * wh, (k + 1) * wh) for k in range(H // wh)]
    cols = [(k * ww, (k + 1) * ww) for k in range(W // ww)]
    out, arg = binned_max2d(Xc, rows, cols)
    if squeeze:
        return reshape(out, out.shape[:2]), arg[:, :, 0, :]
    return out, arg


def dynamic_maxpool2d(X: Tensor, out_h: int, out_w: int) -> tuple[Tensor, np.ndarray]:
    """Pool an (H, W, C) map of any size onto a fixed (out_h, out_w) grid."""
    H, W = X.shape[:2]
    return binned_max2d(X, pool_bins(H, out_h), pool_bins(W, out_w))


# --- similarities and loss ---------------------------------------------------


def _unit_rows(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(A, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, A / safe, 0.0), safe


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine of two vectors; 0 when either is the zero vector."""
    if u.value.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine: {u.shape} vs {v.shape}")
    out = cosine_matrix(reshape(u, (1, -1)), reshape(v, (1, -1)))
    return reshape(out, ())


def dot_matrix(A: Tensor, B: Tensor) -> Tensor:
    """Pairwise dot products of rows: (m, k) x (n, k) -> (m, n)."""
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"dot_matrix: {A.shape} vs {B.shape}")
    return matmul(A, transpose(B))


def cosine_matrix(A: Tensor, B: Tensor) -> Tensor:
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"cosine_matrix: {A.shape} vs {B.shape}")
    Ah, An = _unit_rows(A.value)
    Bh, Bn = _unit_rows(B.value)
    S = Ah @ Bh.T

    def bw(g):
        dAh = g @ Bh
        dBh = g.T @ Ah
        dA = (dAh - Ah * (dAh * Ah).sum(axis=1, keepdims=True)) / An
        dB = (dBh - Bh * (dBh * Bh).sum(axis=1, keepdims=True)) / Bn
        return dA, dB

    return _node(S, (A, B), bw, "cosine_matrix")


def gaussian_matrix(A: Tensor, B: Tensor, sigma: float) -> Tensor:
    """``exp(-|a_i - b_j|^2 / (2 sigma^2))`` for all row pairs."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if A.value.ndim != 2 or B.value.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ShapeError(f"gaussian_matrix: {A.shape} vs {B.shape}")
    Av, Bv = A.value, B.value
    diff = Av[:, None, :] - Bv[None, :, :]
    S = np.exp(-(diff * diff).sum(axis=2) / (2.0 * sigma * sigma))
    inv = 1.0 / (sigma * sigma)

    def bw(g):
        GS = g * S
        dA = -inv * (GS.sum(axis=1, keepdims=True) * Av - GS @ Bv)
        dB = inv * (GS.T @ Av - GS.sum(axis=0)[:, None] * Bv)
        return dA, dB

    return _node(S, (A, B), bw, "gaussian_matrix")


def hinge(s_pos: Tensor, s_neg: Tensor, margin: float = 1.0) -> Tensor:
    """``max(0, margin - s_pos + s_neg)`` for scalar scores."""
    gap = margin - s_pos.value + s_neg.value
    active = float(gap > 0)
    out = np.maximum(gap, 0.0)
    return _node(out, (s_pos, s_neg), lambda g: (-g * active, g * active), "hinge")


# --- gradient check ----------------------------------------------------------


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_components: int | None = None,
    rng: np.random.Generator | None = None,
    kink_tol: float | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar output from the current values of ``params``.
    Relative error per component is ``|a - n| / max(|a|, |n|, 1e-8)``. With
    ``max_components`` only that many randomly chosen entries per parameter
    are probed. With ``kink_tol``, a :class:`TieError` is raised when the
    evaluation point lies that close to a non-differentiable point.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    for p in params:
        p.zero_grad()
    with kink_monitor() as log:
        out = fn()
    if out.value.size != 1:
        raise ShapeError(f"grad_check: output must be scalar, got {out.shape}")
    if kink_tol is not None and log and min(log) < kink_tol:
        raise TieError(f"nearest kink at distance {min(log):.3g} < {kink_tol:g}")
    backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_components, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            f_plus = fn().item()
            flat[k] = orig - eps
            f_minus = fn().item()
            flat[k] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic.reshape(-1)[k]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
        p.zero_grad()
    return worst


# --- optimizers --------------------------------------------------------------


class Optimizer:
    def __init__(self, params: Iterable[Parameter], rate: float):
        self.params = list(params)
        self.rate = rate

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def _check(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise GradientError(f"non-finite gradient in parameter {getattr(p, 'name', '?')!r}")

    def step(self):
        raise NotImplementedError


class Sgd(Optimizer):
    def step(self):
        self._check()
        for p in self.params:
            p.value -= self.rate * p.grad


class Adam(Optimizer):
    def __init__(self, params, rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, rate)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self._check()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.value -= self.rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"sgd": Sgd, "adam": Adam}


def make_optimizer(params, kind: str = "adam", rate: float = 1e-3) -> Optimizer:
    try:
        return OPTIMIZERS[kind](params, rate=rate)
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}") from None


# --- checkpoints -------------------------------------------------------------


def save_checkpoint(path, params: Iterable[Parameter]):
    """One line per parameter: ``name<TAB>shape<TAB>values`` (9 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in params:
            shape = ",".join(str(s) for s in p.shape)
            values = " ".join(f"{v:.9g}" for v in p.value.reshape(-1))
            fh.write(f"{p.name}\t{shape}\t{values}\n")


def load_checkpoint(path, params: Iterable[Parameter]):
    by_name = {p.name: p for p in params}
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected name<TAB>shape<TAB>values")
            name, shape_s, values_s = parts
            if name not in by_name:
                raise ValueError(f"{path}:{lineno}: unknown parameter {name!r}")
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            p = by_name[name]
            if shape != p.shape:
                raise ShapeError(f"{path}:{lineno}: {name} has shape {shape}, model expects {p.shape}")
            values = np.array(values_s.split(), dtype=DTYPE)
            if values.size != p.value.size:
                raise ShapeError(f"{path}:{lineno}: {name} lists {values.size} values for shape {shape}")
            p.value[...] = values.reshape(shape)
            seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"{path}: missing parameters {sorted(missing)}")
