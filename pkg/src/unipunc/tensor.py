"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op records its inputs and a closure that pushes the output gradient
back to them.  Nodes carry a global creation counter, so sorting the
ancestors of a loss by that counter recovers execution order exactly and
``backward`` can sweep them once in reverse.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_counter = itertools.count()


class DimensionError(ValueError):
    pass


class InputTooShortError(ValueError):
    def __init__(self, length: int, kernel: int):
        super().__init__(f"input of length {length} is shorter than kernel {kernel}")
        self.length = length
        self.kernel = kernel


class NonFiniteError(FloatingPointError):
    pass


class BackwardError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_counter)
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    _check_finite(data, op)
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", back)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", back)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        x._accumulate(g * c)

    return _make(x.data * c, (x,), "scale", back)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0

    def back(g):
        x._accumulate(g * keep)

    return _make(np.where(keep, x.data, 0.0), (x,), "relu", back)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def back(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), (x,), "sum", back)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity (same object) when not training or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def back(g):
        x._accumulate(g * keep)

    return _make(x.data * keep, (x,), "dropout", back)


# ------------------------------------------------------------------ structure

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), "matmul", back)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    if axes is None:
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        x._accumulate(np.transpose(g, inverse))

    return _make(np.transpose(x.data, axes), (x,), "transpose", back)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def back(g):
        x._accumulate(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), "reshape", back)


def concat_rows(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows: nothing to concatenate")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
            i != axis % len(ref) and p.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise DimensionError(f"concat_rows: incompatible shapes {ref} and {p.shape}")
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def back(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, "concat", back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    n = x.shape[0]
    if not 0 <= start <= stop <= n:
        raise DimensionError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")

    def back(g):
        full = np.zeros(x.shape)
        full[start:stop] = g
        x._accumulate(full)

    return _make(x.data[start:stop], (x,), "slice", back)


def pad_stack(parts: Sequence[Tensor], length: int | None = None) -> tuple[Tensor, np.ndarray]:
    """Stack ``[m_i x d]`` tensors into ``[B x M x d]`` with zero rows after each.

    Returns the stacked tensor and a boolean ``[B x M]`` mask of real rows.
    """
    width = parts[0].shape[1]
    for p in parts:
        if p.ndim != 2 or p.shape[1] != width:
            raise DimensionError(f"pad_stack: incompatible shapes {parts[0].shape} and {p.shape}")
    longest = max(p.shape[0] for p in parts) if length is None else length
    out = np.zeros((len(parts), longest, width))
    mask = np.zeros((len(parts), longest), dtype=bool)
    for i, p in enumerate(parts):
        out[i, : p.shape[0]] = p.data
        mask[i, : p.shape[0]] = True

    def back(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p._accumulate(g[i, : p.shape[0]])

    return _make(out, parts, "pad_stack", back), mask


# ------------------------------------------------------------- neural pieces

def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` (broadcastable to ``x``) marks allowed entries; disallowed ones
    get exactly zero weight.  A row with no allowed entry is an error.
    """
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=-1).all():
            raise DimensionError("softmax_rows: a row has every entry masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        x._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), "softmax", back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            x._accumulate(
                inv * (gh - gh.mean(axis=-1, keepdims=True)
                       - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
            )

    return _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    bad = np.flatnonzero((ids < 0) | (ids >= vocab))
    if bad.size:
        pos = np.unravel_index(bad[0], ids.shape)
        raise IndexError(
            f"embedding_lookup: id {ids[pos]} at position {tuple(int(p) for p in pos)} "
            f"outside [0, {vocab})"
        )

    def back(g):
        full = np.zeros(table.shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)

    return _make(table.data[ids], (table,), "embedding", back)


def cross_entropy(logits: Tensor, targets, mask) -> Tensor:
    """Mean negative log-likelihood over positions where ``mask`` is true.

    ``logits`` is ``[..., C]``; ``targets`` and ``mask`` match its leading shape.
    """
    C = logits.shape[-1]
    z = logits.data.reshape(-1, C)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if t.shape[0] != z.shape[0] or m.shape[0] != z.shape[0]:
        raise DimensionError(
            f"cross_entropy: {z.shape[0]} positions but {t.shape[0]} targets, {m.shape[0]} mask entries"
        )
    if ((t < 0) | (t >= C)).any():
        raise IndexError(f"cross_entropy: target outside [0, {C})")
    count = int(m.sum())
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(z.shape[0])
    loss = -(logp[rows, t] * m).sum() / count if count else 0.0

    def back(g):
        if not count:
            logits._accumulate(np.zeros(logits.shape))
            return
        p = np.exp(logp)
        p[rows, t] -= 1.0
        p *= (m / count)[:, None]
        logits._accumulate((g * p).reshape(logits.shape))

    return _make(np.asarray(loss), (logits,), "cross_entropy", back)


def conv_output_length(m: int, kernel: int, stride: int) -> int:
    return (m - kernel) // stride + 1


def conv1d(x: Tensor, w: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid 1-D convolution: ``x [m x c_in]``, ``w [kernel x c_in x c_out]``."""
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    m, c_in = x.shape
    kernel, w_in, c_out = w.shape
    if w_in != c_in or bias.shape != (c_out,):
        raise DimensionError(f"conv1d: input {x.shape}, weight {w.shape}, bias {bias.shape}")
    if m < kernel:
        raise InputTooShortError(m, kernel)
    m_out = conv_output_length(m, kernel, stride)
    windows = np.lib.stride_tricks.sliding_window_view(x.data, kernel, axis=0)[::stride]
    # windows: [m_out, c_in, kernel] -> columns ordered (kernel, c_in) to match w
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(m_out, kernel * c_in)
    wmat = w.data.reshape(kernel * c_in, c_out)
    out = cols @ wmat + bias.data

    def back(g):
        if w.requires_grad:
            w._accumulate((cols.T @ g).reshape(w.shape))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            dcols = (g @ wmat.T).reshape(m_out, kernel, c_in)
            dx = np.zeros(x.shape)
            span = stride * (m_out - 1) + 1
            for k in range(kernel):
                dx[k:k + span:stride] += dcols[:, k, :]
            x._accumulate(dx)

    return _make(out, (x, w, bias), "conv1d", back)


# ------------------------------------------------------------------ backward

class Graph:
    """Ancestors of a tensor in execution order."""

    def __init__(self, root: Tensor):
        seen: dict[int, Tensor] = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen[id(t)] = t
            stack.extend(t._parents)
        self.nodes = sorted(seen.values(), key=lambda t: t._seq)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t._backward is None]


def backward(loss: Tensor) -> int:
    """Fill ``grad`` on every ``requires_grad`` ancestor of a scalar loss.

    Returns the number of graph nodes visited.  Leaves must have been reset
    with :func:`zero_grads` since the previous sweep.
    """
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise BackwardError("loss does not depend on any tensor that requires grad")
    graph = Graph(loss)
    stale = [t for t in graph.leaves if t.grad is not None]
    if stale:
        raise BackwardError(
            f"{len(stale)} leaf tensor(s) still hold gradients from an earlier backward; "
            "call zero_grads first"
        )
    for t in graph.nodes:
        if t._backward is not None:
            t.grad = None
    loss.grad = np.ones(loss.shape)
    visited = 0
    for t in reversed(graph.nodes):
        visited += 1
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
    return visited


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
