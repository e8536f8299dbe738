"""Minimal reverse-mode differentiation over ``(c, h, w)`` grids.

Only the operators the rendering network and its losses need are provided.
Every op records its parents and a backward rule; :func:`backward` replays
those records in exact reverse creation order.  There is no broadcasting
except the per-channel bias in :func:`conv2d`.

Summation order is fixed per op (``numpy.matmul`` for convolutions, pairwise
``numpy.sum`` elsewhere), so results are reproducible at a fixed BLAS thread
count.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import NumericalError, ValidationError

_ids = itertools.count()
_debug = False


def set_debug(flag: bool) -> None:
    """When on, every op output is checked for NaN/Inf."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "_id")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "leaf"):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite values produced by {op}")
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"{op}: shape mismatch, expected {a.shape}, got {b.shape}")


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes, seen, stack = [], {loss._id}, [loss]
    while stack:
        node = stack.pop()
        nodes.append(node)
        for p in node.parents:
            if p.requires_grad and p._id not in seen:
                seen.add(p._id)
                stack.append(p)
    nodes.sort(key=lambda n: n._id, reverse=True)
    grads = {loss._id: np.ones_like(loss.data)}
    for node in nodes:
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


# -- pointwise ---------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def elu(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    return _make(out, (a,), lambda g: (g * np.where(x > 0, 1, out + 1).astype(x.dtype),), "elu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def absolute(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, (a,), lambda g: (g * 2 * x,), "square")


def log10(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log10(x), (a,), lambda g: (g / (x * np.log(10.0)),), "log10")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _make(a.data + a.data.dtype.type(s), (a,), lambda g: (g,), "add_scalar")


# -- reductions --------------------------------------------------------------

def total(a: Tensor) -> Tensor:
    shape, dtype = a.shape, a.data.dtype
    return _make(np.sum(a.data).reshape(()), (a,), lambda g: (np.full(shape, g, dtype=dtype),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, dtype, n = a.shape, a.data.dtype, a.data.size
    out = (np.sum(a.data) / n).reshape(()).astype(dtype)
    return _make(out, (a,), lambda g: (np.full(shape, g / n, dtype=dtype),), "mean")


# -- structural --------------------------------------------------------------

def concat_channels(xs) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ValidationError("concat_channels needs at least one tensor")
    hw = xs[0].shape[1:]
    for x in xs[1:]:
        if x.shape[1:] != hw:
            raise ValidationError(f"concat_channels: spatial size {x.shape[1:]} != {hw}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([x.data for x in xs], axis=0), tuple(xs), back, "concat")


def avg_pool2(a: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; a trailing odd row/column is dropped."""
    c, h, w = a.shape
    if h < 2 or w < 2:
        raise ValidationError(f"avg_pool2 needs h, w >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    x = a.data[:, : 2 * h2, : 2 * w2]
    out = x.reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))

    def back(g):
        gx = np.zeros_like(a.data)
        quarter = g * g.dtype.type(0.25)
        gx[:, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(quarter, 2, axis=1), 2, axis=2)
        return (gx,)

    return _make(out, (a,), back, "avg_pool2")


def upsample_matrix(n: int, m: int, dtype=np.float64) -> np.ndarray:
    """``(m, n)`` linear-interpolation matrix for a fixed 2x scale.

    Output sample ``j`` reads source coordinate ``(j + 0.5) / 2 - 0.5``
    (half-pixel centers, align-corners off), clamped to the valid range.
    ``m`` may exceed ``2 n`` by one to reach an odd target size.
    """
    A = np.zeros((m, n), dtype=dtype)
    for j in range(m):
        src = max((j + 0.5) / 2 - 0.5, 0.0)
        i0 = min(int(src), n - 1)
        i1 = i0 + 1 if i0 < n - 1 else i0
        lam = src - i0 if i1 != i0 else 0.0
        A[j, i0] += 1 - lam
        A[j, i1] += lam
    return A


def bilinear_up2(a: Tensor, size=None) -> Tensor:
    """Bilinear 2x upsampling.

    ``size=(H, W)`` selects the target size; each side must be ``2n`` or
    ``2n + 1`` so odd pyramid levels line up with their parent.
    """
    c, h, w = a.shape
    H, W = (2 * h, 2 * w) if size is None else size
    if H not in (2 * h, 2 * h + 1) or W not in (2 * w, 2 * w + 1):
        raise ValidationError(f"bilinear_up2: cannot map {h}x{w} to {H}x{W}")
    dtype = a.data.dtype
    Ah = upsample_matrix(h, H, dtype)
    Aw = upsample_matrix(w, W, dtype)
    out = np.matmul(np.matmul(Ah, a.data), Aw.T)
    return _make(out, (a,), lambda g: (np.matmul(np.matmul(Ah.T, g), Aw),), "bilinear_up2")


def _im2col3(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 9, h, w), dtype=x.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, k] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * 9, h * w)


def _col2im3(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    cols = cols.reshape(c, 9, h, w)
    xp = np.zeros((c, h + 2, w + 2), dtype=cols.dtype)
    for k in range(9):
        dy, dx = divmod(k, 3)
        xp[:, dy:dy + h, dx:dx + w] += cols[:, k]
    return xp[:, 1:-1, 1:-1]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 'same' cross-correlation with a 1x1 or 3x3 kernel."""
    if x.data.ndim != 3:
        raise ValidationError(f"conv2d input must be (c, h, w), got {x.shape}")
    c_out, c_in, k, k2 = weight.shape
    if k != k2 or k not in (1, 3):
        raise ValidationError(f"conv2d kernel must be 1x1 or 3x3, got {k}x{k2}")
    if x.shape[0] != c_in:
        raise ValidationError(f"conv2d: expected {c_in} input channels, got {x.shape[0]}")
    if bias.shape != (c_out,):
        raise ValidationError(f"conv2d: expected bias shape {(c_out,)}, got {bias.shape}")
    _, h, w = x.shape
    cols = x.data.reshape(c_in, h * w) if k == 1 else _im2col3(x.data)
    Wm = weight.data.reshape(c_out, c_in * k * k)
    out = (np.matmul(Wm, cols) + bias.data[:, None]).reshape(c_out, h, w)

    def back(g):
        gm = g.reshape(c_out, h * w)
        gW = np.matmul(gm, cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = gm.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(Wm.T, gm)
            gx = gcols.reshape(c_in, h, w) if k == 1 else _col2im3(gcols, c_in, h, w)
        return gx, gW, gb

    return _make(out, (x, weight, bias), back, "conv2d")


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both vanish."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)
