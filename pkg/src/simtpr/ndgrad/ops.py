"""Differentiable primitives over `Tensor`.

Each primitive validates shapes, computes the forward value with numpy,
and (when tracing is on) attaches a backward closure. Reductions
accumulate in float64 even when the working precision is float32, which
stabilizes the decorrelation statistics.

Beyond the core arithmetic/NN set, a handful of extra elementwise
primitives (log, sigmoid, tanh, div, clip-min) exist because the GRU
gates, the action likelihood, and the normalization floors need them.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    accumulate_into,
    debug_enabled,
    record,
)

_NEG_MASK_FILL = -1e9  # additive-mask convention: large negative, finite


def _check_finite(op_id: str, *arrays) -> None:
    if debug_enabled():
        for a in arrays:
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(op_id)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _reduced(x: np.ndarray, fn, axis, keepdims) -> np.ndarray:
    """Reduce with float64 accumulation, casting back to the input dtype."""
    out = fn(x, axis=axis, keepdims=keepdims, dtype=np.float64)
    return np.asarray(out, dtype=x.dtype)


def _broadcastable(a: tuple, b: tuple) -> bool:
    try:
        np.broadcast_shapes(a, b)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError("add", a.shape, b.shape)
    _check_finite("add", a.data, b.data)
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        accumulate_into(a, _unbroadcast(g, a.shape))
        accumulate_into(b, _unbroadcast(g, b.shape))

    return record(out, "add", (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError("sub", a.shape, b.shape)
    _check_finite("sub", a.data, b.data)
    out = Tensor(a.data - b.data)

    def backward_fn(g):
        accumulate_into(a, _unbroadcast(g, a.shape))
        accumulate_into(b, _unbroadcast(-g, b.shape))

    return record(out, "sub", (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError("elementwise-mul", a.shape, b.shape)
    _check_finite("elementwise-mul", a.data, b.data)
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        accumulate_into(a, _unbroadcast(g * b.data, a.shape))
        accumulate_into(b, _unbroadcast(g * a.data, b.shape))

    return record(out, "elementwise-mul", (a, b), backward_fn)


def smul(a: Tensor, s: float) -> Tensor:
    _check_finite("scalar-mul", a.data)
    s = float(s)
    out = Tensor(a.data * np.asarray(s, dtype=a.dtype))

    def backward_fn(g):
        accumulate_into(a, g * s)

    return record(out, "scalar-mul", (a,), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError("div", a.shape, b.shape)
    _check_finite("div", a.data, b.data)
    out = Tensor(a.data / b.data)

    def backward_fn(g):
        accumulate_into(a, _unbroadcast(g / b.data, a.shape))
        accumulate_into(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return record(out, "div", (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    if not _broadcastable(a.shape[:-2], b.shape[:-2]):
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    _check_finite("matmul", a.data, b.data)
    out = Tensor(a.data @ b.data)

    def backward_fn(g):
        accumulate_into(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        accumulate_into(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return record(out, "matmul", (a, b), backward_fn)


def power(a: Tensor, p: float) -> Tensor:
    _check_finite("power", a.data)
    p = float(p)
    out = Tensor(a.data ** p)

    def backward_fn(g):
        accumulate_into(a, g * p * a.data ** (p - 1.0))

    return record(out, "power", (a,), backward_fn)


def sqrt(a: Tensor) -> Tensor:
    _check_finite("sqrt", a.data)
    root = np.sqrt(a.data)
    out = Tensor(root)

    def backward_fn(g):
        accumulate_into(a, g * 0.5 / root)

    return record(out, "sqrt", (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    _check_finite("log", a.data)
    out = Tensor(np.log(a.data))

    def backward_fn(g):
        accumulate_into(a, g / a.data)

    return record(out, "log", (a,), backward_fn)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); subgradient 0 on the clipped region."""
    _check_finite("clip-min", a.data)
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data > floor

    def backward_fn(g):
        accumulate_into(a, g * mask)

    return record(out, "clip-min", (a,), backward_fn)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    _check_finite("relu", a.data)
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0

    def backward_fn(g):
        accumulate_into(a, g * mask)

    return record(out, "relu", (a,), backward_fn)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    _check_finite("gelu", a.data)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + th))

    def backward_fn(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * dinner
        accumulate_into(a, g * d.astype(x.dtype))

    return record(out, "gelu", (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    _check_finite("sigmoid", a.data)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)

    def backward_fn(g):
        accumulate_into(a, g * s * (1.0 - s))

    return record(out, "sigmoid", (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    _check_finite("tanh", a.data)
    t = np.tanh(a.data)
    out = Tensor(t)

    def backward_fn(g):
        accumulate_into(a, g * (1.0 - t * t))

    return record(out, "tanh", (a,), backward_fn)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, with an optional additive mask.

    The mask is a constant array broadcastable to `a`; blocked positions
    should carry a large negative value (use `causal_mask`).
    """
    _check_finite("softmax-with-additive-mask", a.data)
    logits = a.data if mask is None else a.data + np.asarray(mask, dtype=a.dtype)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s.astype(a.dtype))

    def backward_fn(g):
        dot = np.sum(g * s, axis=-1, keepdims=True)
        accumulate_into(a, (s * (g - dot)).astype(a.dtype))

    return record(out, "softmax-with-additive-mask", (a,), backward_fn)


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """[t, t] additive mask: position i may attend to positions <= i."""
    m = np.zeros((t, t), dtype=dtype)
    m[np.triu_indices(t, k=1)] = _NEG_MASK_FILL
    return m


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    _check_finite("layer-norm", a.data)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(xhat.astype(x.dtype))

    def backward_fn(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        accumulate_into(a, (inv * (g - gm - xhat * gx)).astype(x.dtype))

    return record(out, "layer-norm", (a,), backward_fn)


def batch_norm(a: Tensor, running: tuple[np.ndarray, np.ndarray] | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize each column of an [M, F] batch (no affine).

    Training mode (``running is None``) uses per-batch statistics and
    differentiates through them; evaluation mode normalizes with the given
    (mean, var) constants.
    """
    if a.ndim != 2:
        raise ShapeMismatchError("batch-norm", a.shape)
    _check_finite("batch-norm", a.data)
    x = a.data
    if running is not None:
        mu, var = running
        inv = 1.0 / np.sqrt(var + eps)
        out = Tensor(((x - mu) * inv).astype(x.dtype))

        def backward_fn(g):
            accumulate_into(a, (g * inv).astype(x.dtype))

        return record(out, "batch-norm", (a,), backward_fn)

    m = x.shape[0]
    if m < 2:
        raise ShapeMismatchError("batch-norm", a.shape)
    mu = x.mean(axis=0, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = Tensor(xhat.astype(x.dtype))

    def backward_fn(g):
        gm = g.mean(axis=0, keepdims=True)
        gx = (g * xhat).mean(axis=0, keepdims=True)
        accumulate_into(a, (inv * (g - gm - xhat * gx)).astype(x.dtype))

    return record(out, "batch-norm", (a,), backward_fn)


def batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column (mean, population variance) of an [M, F] array."""
    mu = x.mean(axis=0)
    var = ((x - mu) ** 2).mean(axis=0)
    return mu, var


def l2_normalize(a: Tensor, axis: int = -1, floor: float = 1e-12) -> Tensor:
    """Scale each slice along `axis` to unit Euclidean norm.

    Slices with norm below `floor` are divided by `floor` instead, so a
    degenerate all-zero representation stays zero rather than NaN. The
    clip happens on the squared norm, before the sqrt, so the backward
    pass never divides by zero.
    """
    sq = sum(power(a, 2.0), axis=axis, keepdims=True)
    norm = sqrt(clip_min(sq, floor * floor))
    return div(a, norm)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    _check_finite("sum", a.data)
    out = Tensor(_reduced(a.data, np.sum, axis, keepdims))
    in_shape = a.shape

    def backward_fn(g):
        accumulate_into(a, _spread(g, in_shape, axis, keepdims))

    return record(out, "sum", (a,), backward_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_finite("mean", a.data)
    out = Tensor(_reduced(a.data, np.mean, axis, keepdims))
    in_shape = a.shape
    count = a.size if axis is None else np.prod(
        [in_shape[ax] for ax in _axes_tuple(axis, a.ndim)], dtype=np.int64)

    def backward_fn(g):
        accumulate_into(a, _spread(g, in_shape, axis, keepdims) / count)

    return record(out, "mean", (a,), backward_fn)


def _axes_tuple(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def _spread(g: np.ndarray, in_shape: tuple, axis, keepdims: bool) -> np.ndarray:
    """Broadcast a reduced gradient back to the input shape."""
    if axis is not None and not keepdims:
        for ax in sorted(_axes_tuple(axis, len(in_shape))):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, in_shape)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    in_shape = a.shape

    def backward_fn(g):
        accumulate_into(a, g.reshape(in_shape))

    return record(out, "reshape", (a,), backward_fn)


def transpose(a: Tensor, axes: tuple | None = None) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def backward_fn(g):
        accumulate_into(a, g.transpose(inv))

    return record(out, "transpose", (a,), backward_fn)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeMismatchError("concat")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            accumulate_into(t, g[tuple(idx)])

    return record(out, "concat", tuple(tensors), backward_fn)


def slice_(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; backward scatters into a zero array."""
    out = Tensor(a.data[key])
    in_shape = a.shape
    in_dtype = a.dtype

    def backward_fn(g):
        gx = np.zeros(in_shape, dtype=in_dtype)
        gx[key] += g
        accumulate_into(a, gx)

    return record(out, "slice", (a,), backward_fn)


# ---------------------------------------------------------------------------
# conv / embedding
# ---------------------------------------------------------------------------

def _pad_maps(h: int, w: int, pad: int, mode: str):
    rows = np.arange(h + 2 * pad) - pad
    cols = np.arange(w + 2 * pad) - pad
    if mode == "replicate":
        return np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)
    if mode == "zeros":
        return rows, cols
    raise ValueError(f"conv2d: unknown pad mode {mode!r}")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0,
           pad_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation: x [N,C,H,W], w [F,C,kh,kw] -> [N,F,Ho,Wo]."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv2d", x.shape, w.shape)
    _check_finite("conv2d", x.data, w.data)
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    if h + 2 * pad < kh or wd + 2 * pad < kw:
        raise ShapeMismatchError("conv2d", x.shape, w.shape)

    if pad > 0:
        rmap, cmap = _pad_maps(h, wd, pad, pad_mode)
        if pad_mode == "replicate":
            xp = x.data[:, :, rmap][:, :, :, cmap]
        else:
            xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
            xp[:, :, pad:pad + h, pad:pad + wd] = x.data
    else:
        xp = x.data

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [N, C, Ho, Wo, kh, kw]
    # contract (c, u, v) against the kernel via BLAS
    out_data = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))  # [N,Ho,Wo,F]
    out = Tensor(np.ascontiguousarray(out_data.transpose(0, 3, 1, 2)).astype(x.dtype))
    ho, wo = out_data.shape[1], out_data.shape[2]

    def backward_fn(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # [F,C,kh,kw]
        accumulate_into(w, gw.astype(w.dtype))
        if not x.requires_grad:
            return
        hp, wp = xp.shape[2], xp.shape[3]
        gxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # [N,Ho,Wo,F]
        for u in range(kh):
            for v in range(kw):
                contrib = gt @ w.data[:, :, u, v]  # [N,Ho,Wo,C]
                gxp[:, :, u:u + stride * ho:stride,
                    v:v + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
        if pad > 0:
            if pad_mode == "replicate":
                tmp = np.zeros((n, c, h, wp), dtype=x.dtype)
                np.add.at(tmp.transpose(2, 0, 1, 3), rmap, gxp.transpose(2, 0, 1, 3))
                gx = np.zeros((n, c, h, wd), dtype=x.dtype)
                np.add.at(gx.transpose(3, 0, 1, 2), cmap, tmp.transpose(3, 0, 1, 2))
            else:
                gx = gxp[:, :, pad:pad + h, pad:pad + wd]
        else:
            gx = gxp
        accumulate_into(x, gx)

    return record(out, "conv2d", (x, w), backward_fn)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup: table [V, d], integer indices [...] -> [..., d]."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatchError("embedding-lookup", table.shape, idx.shape)
    out = Tensor(table.data[idx])

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        accumulate_into(table, gt)

    return record(out, "embedding-lookup", (table,), backward_fn)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

PRIMITIVE_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": smul,
    "relu": relu,
    "gelu": gelu,
    "softmax-with-additive-mask": softmax,
    "layer-norm": layer_norm,
    "batch-norm": batch_norm,
    "conv2d": conv2d,
    "mean": mean,
    "sum": sum,
    "power": power,
    "sqrt": sqrt,
    "concat": concat,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "embedding-lookup": embedding_lookup,
    # extensions required by the GRU gates, log-likelihoods, and floors
    "log": log,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "div": div,
    "clip-min": clip_min,
}


def primitive_forward(op_id: str, inputs, **attributes) -> Tensor:
    """Dispatch a primitive by id (`PRIMITIVE_OPS` keys)."""
    try:
        fn = PRIMITIVE_OPS[op_id]
    except KeyError:
        raise KeyError(f"unknown primitive op id: {op_id!r}") from None
    if op_id == "concat":
        return fn(list(inputs), **attributes)
    return fn(*inputs, **attributes)
