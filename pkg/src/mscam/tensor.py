"""Small float64 tensor engine with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (if any) when at
least one input requires a gradient. Typical use::

    with Tape() as tape:
        loss = some_function_of(params)
    backward(loss, tape)
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

_state = threading.local()


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = fn


class Tape:
    """Ordered record of differentiable operations, confined to one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


def active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn: Callable) -> Tensor:
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(_Node(out, inputs, fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients of leaves are added to whatever they already hold, so call
    ``zero_grad`` between optimizer steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(n.out) for n in tape.nodes}
    if id(loss) not in produced:
        raise ValueError("loss was not produced on this tape")
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            leaf.grad = leaf.grad + g


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(x.data.sum(axis=axis))

    def grad(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record(out, (x,), grad)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    out = Tensor(np.maximum(x.data, lo))
    return _record(out, (x,), lambda g: (g * (x.data > lo),))


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so neither branch overflows exp
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor(s)
    return _record(out, (x,), lambda g: (g * s * (1.0 - s),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def grad(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), grad)


def softmax_vec(x: Tensor) -> Tensor:
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError(f"softmax_vec expects a non-empty vector, got shape {x.shape}")
    return softmax(x, axis=0)


def stack(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    out = Tensor(np.stack([t.data for t in xs], axis=axis))

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(xs)))

    return _record(out, xs, grad)


# ---------------------------------------------------------------------------
# network layers
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over a batch x channel x height x width input."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, ci, h, w = x.shape
    co, kci, kh, kw = kernel.shape
    if kci != ci:
        raise ShapeError(f"conv2d channel mismatch: input has {ci} channels, kernel expects {kci}")
    if bias.shape != (co,):
        raise ShapeError(f"conv2d bias must have shape ({co},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding nonnegative")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _kernels.im2col(xp, kh, kw, stride, oh, ow)
    wmat = kernel.data.reshape(co, -1)
    y = cols @ wmat.T + bias.data
    out = Tensor(y.reshape(b, oh, ow, co).transpose(0, 3, 1, 2))

    def grad(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gk = (g2.T @ cols).reshape(kernel.shape)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            gxp = _kernels.col2im(g2 @ wmat, (b, ci, hp, wp), kh, kw, stride, oh, ow)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        return gx, gk, gb

    return _record(out, (x, kernel, bias), grad)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = tuple(xs)
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for t in xs:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: shape {t.shape} does not match batch/spatial extents of {ref}")
    out = Tensor(np.concatenate([t.data for t in xs], axis=1))
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def grad(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _record(out, xs, grad)


def avg_pool2d(x: Tensor, window: int) -> Tensor:
    if window < 1:
        raise ValueError("window must be positive")
    b, c, h, w = x.shape
    if h % window:
        raise ShapeError(f"avg_pool2d: height {h} is not divisible by window {window}")
    if w % window:
        raise ShapeError(f"avg_pool2d: width {w} is not divisible by window {window}")
    oh, ow = h // window, w // window
    out = Tensor(x.data.reshape(b, c, oh, window, ow, window).mean(axis=(3, 5)))
    scale = 1.0 / (window * window)

    def grad(g):
        gx = np.repeat(np.repeat(g * scale, window, axis=2), window, axis=3)
        return (gx,)

    return _record(out, (x,), grad)


def global_avg_pool(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    scale = 1.0 / (h * w)

    def grad(g):
        return (np.broadcast_to((g * scale)[:, :, None, None], x.shape).copy(),)

    return _record(out, (x,), grad)


def rms_normalize(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Divide each sample by the root-mean-square of all its entries."""
    axes = tuple(range(1, x.ndim))
    shape = (-1,) + (1,) * (x.ndim - 1)
    s = np.sqrt((x.data * x.data).mean(axis=axes) + eps).reshape(shape)
    y = x.data / s
    out = Tensor(y)

    def grad(g):
        return ((g - y * (g * y).mean(axis=axes).reshape(shape)) / s,)

    return _record(out, (x,), grad)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"fully_connected: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"fully_connected: bias {bias.shape} does not match weight rows {weight.shape[0]}")
    out = Tensor(x.data @ weight.data.T + bias.data)
    return _record(out, (x, weight, bias), lambda g: (g @ weight.data, g.T @ x.data, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# inference-only
# ---------------------------------------------------------------------------


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def bilinear_resize(grid: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-D array (first/last samples coincide)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or min(grid.shape) < 1:
        raise ShapeError(f"bilinear_resize expects a non-empty 2-d grid, got {grid.shape}")
    H, W = target
    if H < 1 or W < 1:
        raise ValueError(f"target extent must be positive, got {target}")
    if grid.shape == (H, W):
        return grid.copy()
    y0, y1, fy = _axis_coords(grid.shape[0], H)
    x0, x1, fx = _axis_coords(grid.shape[1], W)
    # lerp form a + (b - a) * f reproduces constant grids exactly
    rows0, rows1 = grid[y0], grid[y1]
    top = rows0[:, x0] + (rows0[:, x1] - rows0[:, x0]) * fx
    bot = rows1[:, x0] + (rows1[:, x1] - rows1[:, x0]) * fx
    out = top + (bot - top) * fy[:, None]
    return out
