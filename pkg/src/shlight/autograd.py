"""A small reverse-mode autodiff engine over numpy arrays.

Only the operators the lighting network needs are provided.  Image tensors
are NHWC; convolution weights are (kh, kw, C_in, C_out).  Each op records its
parents and a closure that pushes the output gradient back to them; the
recorded nodes form the computation graph that :func:`backward` walks in
reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, InvalidState, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other, self), -1.0))

    def __rsub__(self, other):
        return add(_lift(other, self), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _lift(x, like: Tensor) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, fn, name=None) -> Tensor:
    out = Tensor(data, name=name)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = fn
    return out


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``t.grad``.  ``owned`` marks a fresh array that may be
    adopted without copying."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if owned and g.dtype == t.dtype and g.flags.writeable and g.base is None:
            t.grad = g
        else:
            t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def topological_order(output: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, grad: np.ndarray | None = None) -> None:
    """Reverse-mode sweep from ``output``; gradients are reset first."""
    if not output.requires_grad:
        raise InvalidState("backward() called on a tensor with no recorded graph; run a forward pass "
                           "with requires_grad parameters first")
    if grad is None:
        if output.data.size != 1:
            raise InvalidArgument("backward() without grad needs a scalar output")
        grad = np.ones_like(output.data)
    nodes = topological_order(output)
    for node in nodes:
        node.grad = None
    output.grad = np.asarray(grad, dtype=output.dtype).copy()
    for node in reversed(nodes):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def _check(cond: bool, op: str, name: str | None, msg: str) -> None:
    if not cond:
        label = f"{op}[{name}]" if name else op
        raise ShapeError(f"{label}: {msg}")


# --------------------------------------------------------------------------
# Elementwise


def add(a: Tensor, b: Tensor, name=None) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        _check(False, "add", name, f"cannot broadcast {a.shape} with {b.shape}")

    def fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), "add", fn, name)


def mul(a: Tensor, b: Tensor, name=None) -> Tensor:
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError:
        _check(False, "mul", name, f"cannot broadcast {a.shape} with {b.shape}")

    def fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), "mul", fn, name)


def scale(x: Tensor, c: float, name=None) -> Tensor:
    c = x.dtype.type(c)
    return _make(x.data * c, (x,), "scale", lambda g: _accum(x, g * c), name)


def relu(x: Tensor, name=None) -> Tensor:
    out = np.maximum(x.data, 0)
    return _make(out, (x,), "relu", lambda g: _accum(x, g * (out > 0), owned=True), name)


def softsign(x: Tensor, name=None) -> Tensor:
    denom = 1.0 + np.abs(x.data)
    return _make(x.data / denom, (x,), "softsign", lambda g: _accum(x, g / (denom * denom)), name)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None,
            name=None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p)."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise InvalidArgument(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise InvalidArgument("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _make(x.data * mask, (x,), "dropout", lambda g: _accum(x, g * mask), name)


# --------------------------------------------------------------------------
# Shape


def reshape(x: Tensor, shape: tuple[int, ...], name=None) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        _check(False, "reshape", name, f"cannot reshape {x.shape} to {shape}")
    return _make(out, (x,), "reshape", lambda g: _accum(x, g.reshape(x.shape)), name)


def concat(xs: Sequence[Tensor], axis: int = -1, name=None) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    ref = xs[0].shape
    ax = axis % len(ref)
    for t in xs[1:]:
        _check(len(t.shape) == len(ref) and all(a == b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax),
               "concat", name, f"incompatible shapes {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in xs])

    def fn(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out, xs, "concat", fn, name)


# --------------------------------------------------------------------------
# Reductions and losses


def sum_all(x: Tensor, name=None) -> Tensor:
    return _make(np.asarray(x.data.sum(), dtype=x.dtype), (x,), "sum",
                 lambda g: _accum(x, np.broadcast_to(g, x.shape)), name)


def mean_all(x: Tensor, name=None) -> Tensor:
    n = x.data.size
    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), "mean",
                 lambda g: _accum(x, np.broadcast_to(g / n, x.shape)), name)


def mse(a: Tensor, b: Tensor, name=None) -> Tensor:
    b = _lift(b, a)
    _check(a.shape == b.shape, "mse", name, f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def fn(g):
        d = diff * (2.0 * g / n)
        _accum(a, d)
        _accum(b, -d)

    return _make(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b), "mse", fn, name)


def global_avg_pool(x: Tensor, name=None) -> Tensor:
    _check(x.data.ndim == 4, "global_avg_pool", name, f"expected NHWC input, got {x.shape}")
    n, h, w, c = x.shape
    return _make(x.data.mean(axis=(1, 2)), (x,), "gap",
                 lambda g: _accum(x, np.broadcast_to(g[:, None, None, :] / (h * w), x.shape)), name)


# --------------------------------------------------------------------------
# Dense


def matmul(a: Tensor, b: Tensor, name=None) -> Tensor:
    _check(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
           "matmul", name, f"cannot multiply {a.shape} by {b.shape}")

    def fn(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", fn, name)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None, name=None) -> Tensor:
    """Fully-connected layer: x (N, in) @ w (in, out) + b (out,)."""
    _check(x.data.ndim == 2 and w.data.ndim == 2 and x.shape[1] == w.shape[0],
           "linear", name, f"input {x.shape} does not match weight {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=0))

    return _make(out, parents, "linear", fn, name)


# --------------------------------------------------------------------------
# Convolution and pooling


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, Ho, Wo, kh, kw, C) view of sliding windows."""
    v = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return v.transpose(0, 1, 2, 4, 5, 3)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           name=None) -> Tensor:
    _check(x.data.ndim == 4, "conv2d", name, f"expected NHWC input, got {x.shape}")
    kh, kw, cin, cout = w.shape
    _check(x.shape[3] == cin, "conv2d", name, f"input has {x.shape[3]} channels, kernel expects {cin}")
    n, h, wd, _ = x.shape
    _check(h + 2 * pad >= kh and wd + 2 * pad >= kw, "conv2d", name,
           f"input {h}x{wd} smaller than kernel {kh}x{kw}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    if kh == kw == 1 and stride == 1:
        ho, wo = h + 2 * pad, wd + 2 * pad
        cols = xp.reshape(-1, cin)
    else:
        win = _windows(xp, kh, kw, stride)
        ho, wo = win.shape[1:3]
        cols = win.reshape(-1, kh * kw * cin)
    w2 = w.data.reshape(-1, cout)
    out = cols @ w2
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)
    parents = (x, w) if b is None else (x, w, b)

    def fn(g):
        g2 = g.reshape(-1, cout)
        if w.requires_grad:
            _accum(w, (cols.T @ g2).reshape(w.shape))
        if b is not None:
            _accum(b, g2.sum(axis=0))
        if not x.requires_grad:
            return
        dcols = g2 @ w2.T
        if kh == kw == 1 and stride == 1:
            dxp = dcols.reshape(xp.shape)
        else:
            dcols = dcols.reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
        if pad:
            dxp = dxp[:, pad:pad + h, pad:pad + wd, :]
        _accum(x, dxp, owned=not pad)

    return _make(out, parents, "conv2d", fn, name)


def maxpool2d(x: Tensor, kernel: int = 2, stride: int | None = None, name=None) -> Tensor:
    stride = stride or kernel
    _check(x.data.ndim == 4, "maxpool2d", name, f"expected NHWC input, got {x.shape}")
    _check(x.shape[1] >= kernel and x.shape[2] >= kernel, "maxpool2d", name,
           f"input {x.shape[1]}x{x.shape[2]} smaller than pool {kernel}")
    if kernel == stride == 2:
        return _maxpool2x2(x, name)
    ho = (x.shape[1] - kernel) // stride + 1
    wo = (x.shape[2] - kernel) // stride + 1

    def tap(arr, k):
        i, j = divmod(k, kernel)
        return arr[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

    # running max over the kernel taps; ties go to the first tap
    out = tap(x.data, 0).copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for k in range(1, kernel * kernel):
        cand = tap(x.data, k)
        better = cand > out
        np.copyto(out, cand, where=better)
        idx[better] = k

    def fn(g):
        dx = np.zeros(x.shape, dtype=x.dtype)
        for k in range(kernel * kernel):
            tap(dx, k)[...] += g * (idx == k)
        _accum(x, dx, owned=True)

    return _make(out, (x,), "maxpool2d", fn, name)


def _maxpool2x2(x: Tensor, name=None) -> Tensor:
    # max over row pairs, then over column pairs, on contiguous reshapes
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    xe = x.data[:, :2 * ho, :2 * wo, :]
    rows = xe.reshape(n, ho, 2, 2 * wo * c)
    pick_row = rows[:, :, 1] > rows[:, :, 0]
    m = np.maximum(rows[:, :, 0], rows[:, :, 1]).reshape(n, ho, wo, 2, c)
    pick_col = m[:, :, :, 1] > m[:, :, :, 0]
    out = np.maximum(m[:, :, :, 0], m[:, :, :, 1])

    def fn(g):
        col_sel = np.stack([~pick_col, pick_col], axis=3)
        gc = (col_sel * g[:, :, :, None, :]).reshape(n, ho, 1, 2 * wo * c)
        row_sel = np.stack([~pick_row, pick_row], axis=2)
        gr = (row_sel * gc).astype(x.dtype, copy=False).reshape(n, 2 * ho, 2 * wo, c)
        if (2 * ho, 2 * wo) != (h, w):
            full = np.zeros(x.shape, dtype=x.dtype)
            full[:, :2 * ho, :2 * wo] = gr
            gr = full
        _accum(x, gr, owned=gr.base is None)

    return _make(out, (x,), "maxpool2d", fn, name)


def resample_matrix(n_in: int, n_out: int, dtype=np.float64, antialias: bool = False) -> np.ndarray:
    """(n_out, n_in) linear resampling weights with half-pixel centers.

    Bilinear by default; with ``antialias`` and n_out < n_in, each output
    sample averages the input interval it covers (area resampling).
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if antialias and n_out < n_in:
        edges = np.arange(n_out + 1) * (n_in / n_out)
        for o in range(n_out):
            lo, hi = edges[o], edges[o + 1]
            for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
                m[o, i] = min(hi, i + 1) - max(lo, i)
        m /= m.sum(axis=1, keepdims=True)
        return m.astype(dtype)
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    f = pos - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - f)
    np.add.at(m, (rows, hi), f)
    return m.astype(dtype)


def resize_bilinear(x: Tensor, out_h: int, out_w: int, name=None) -> Tensor:
    _check(x.data.ndim == 4, "resize_bilinear", name, f"expected NHWC input, got {x.shape}")
    _, h, w, _ = x.shape
    ry = resample_matrix(h, out_h, x.dtype)
    rx = resample_matrix(w, out_w, x.dtype)
    out = np.einsum("ah,nhwc,bw->nabc", ry, x.data, rx, optimize=True)
    return _make(out, (x,), "resize_bilinear",
                 lambda g: _accum(x, np.einsum("ah,nabc,bw->nhwc", ry, g, rx, optimize=True)), name)


# --------------------------------------------------------------------------
# Finite-difference oracle


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps)."""
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = float(f(x))
        flat[i] = old - eps
        fm = float(f(x))
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)
