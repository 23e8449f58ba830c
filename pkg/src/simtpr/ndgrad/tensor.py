"""Tensor container and the reverse-mode tape.

A `Tensor` is both the value (a row-major numpy array) and, when it was
produced by a traced operation, the tape record for that operation: the
parent tensors, the op id, and a backward closure. Leaf tensors created
with ``requires_grad=True`` accumulate gradients in ``.grad``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator

import numpy as np

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = True
_DEBUG = False


class GradientError(RuntimeError):
    """Base class for autodiff usage errors."""


class ShapeMismatchError(ValueError):
    """Raised when an op receives incompatible shapes."""

    def __init__(self, op_id: str, *shapes):
        self.op_id = op_id
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op_id}: incompatible shapes {self.shapes}")


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op sees a non-finite input."""

    def __init__(self, op_id: str, which: str = "input"):
        self.op_id = op_id
        super().__init__(f"{op_id}: non-finite {which} detected")


class TapeFreedError(GradientError):
    """Raised when backward is called on an already-consumed tape."""


def set_debug(enabled: bool) -> None:
    """Toggle non-finite input checking inside every primitive."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class DebugMode:
    """Context manager that enables non-finite checking."""

    def __enter__(self):
        global _DEBUG
        self._prev = _DEBUG
        _DEBUG = True
        return self

    def __exit__(self, *exc):
        global _DEBUG
        _DEBUG = self._prev
        return False


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (evaluation paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense n-dimensional real array plus its tape record.

    ``data`` is a C-contiguous numpy array (float32 by default, float64 for
    verification runs). ``parents``/``op_id``/``grad`` realize the tape:
    the graph is acyclic by construction and ``backward`` visits each node
    exactly once.
    """

    __slots__ = ("data", "requires_grad", "grad", "op_id", "parents", "_backward_fn", "_freed")

    def __init__(self, data, requires_grad: bool = False, op_id: str | None = None,
                 parents: tuple = ()):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op_id = op_id
        self.parents = parents
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._freed = False

    # -- value accessors ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a size-1 tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    def __repr__(self) -> str:
        grad = ", grad" if self.grad is not None else ""
        op = f", op={self.op_id}" if self.op_id else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{op}{grad})"

    # -- operator sugar (wired to ops to avoid an import cycle) -------------

    def __add__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add(self, tensor(np.asarray(other, dtype=self.dtype)))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        if not isinstance(other, Tensor):
            other = tensor(np.asarray(other, dtype=self.dtype))
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        if not isinstance(other, Tensor):
            other = tensor(np.asarray(other, dtype=self.dtype))
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.smul(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.smul(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.smul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, float(p))

    def __getitem__(self, key):
        from . import ops
        return ops.slice_(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Create a leaf tensor; float32 unless a dtype is given."""
    arr = np.asarray(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=requires_grad)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity on values; the backward pass propagates exactly zero.

    The returned tensor shares the underlying array (no copy) but is cut
    from the tape entirely, so blocked gradients are bitwise zero rather
    than approximately zero.
    """
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.requires_grad = False
    out.grad = None
    out.op_id = "stop-gradient"
    out.parents = ()
    out._backward_fn = None
    out._freed = False
    return out


def record(out: Tensor, op_id: str, parents: tuple, backward_fn) -> Tensor:
    """Attach a tape record to `out` if tracing is active."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op_id = op_id
        out.parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(root: Tensor) -> dict:
    """Reverse-mode sweep from a scalar root.

    Returns a map ``{leaf tensor: gradient array}`` over every reachable
    leaf with ``requires_grad``. Gradients accumulate as sums over all
    paths. The tape is consumed: calling backward on the same root again
    raises `TapeFreedError`.
    """
    if root.data.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    if root._freed:
        raise TapeFreedError("backward called on a freed tape")

    # Iterative post-order DFS so deep graphs do not hit the recursion cap.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in visited:
                if p._freed:
                    raise TapeFreedError("backward reached a freed tape node")
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn(node.grad)
        if node.parents:
            # Internal node: release the closure and mark the tape consumed.
            node._backward_fn = None
            node._freed = True
        elif node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            leaves[node] = node.grad
    return leaves


def accumulate_into(t: Tensor, g: np.ndarray) -> None:
    """Public hook for ops' backward closures."""
    _accumulate(t, g)
