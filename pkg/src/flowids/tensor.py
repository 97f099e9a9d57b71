"""Dense float64 tensors with a reverse-mode gradient tape.

Operations executed inside an active :class:`Tape` are recorded when at least
one input requires a gradient. Outside a tape the same functions just compute
values, which is what inference uses.

    with Tape() as tape:
        loss = reduce_sum(square(x))
    tape.backward(loss)          # x.grad now holds 2 * x
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteOutput, NonScalarLoss, NotOnTape, ShapeMismatch

__all__ = [
    "Tensor", "Tape", "tensor", "add", "sub", "mul", "matmul", "conv1d",
    "maxpool1d", "relu", "sigmoid", "tanh", "exp", "log", "dropout", "concat",
    "reshape", "transpose", "slice_", "reduce_sum", "reduce_mean", "square",
    "max_with_scalar", "grad_check",
]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return slice_(self, index)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives.

    Nodes are appended as operations run, so the record is already in
    topological order. A tape belongs to the thread that entered it.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def _propagate(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss has shape {loss.shape}")
        node = loss._node
        if node is None or not any(n is node for n in self.nodes):
            raise NotOnTape("loss was not produced by an operation on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for n in reversed(self.nodes):
            g = grads.pop(id(n.output), None)
            if g is None:
                continue
            for inp, gi in zip(n.inputs, n.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return grads

    def gradients(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` w.r.t. ``wrt`` without touching ``.grad``."""
        grads = self._propagate(loss)
        return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reached leaf."""
        grads = self._propagate(loss)
        seen = {}
        for n in self.nodes:
            for inp in n.inputs:
                if inp.is_leaf and inp.requires_grad and id(inp) in grads:
                    seen[id(inp)] = inp
        for key, leaf in seen.items():
            g = grads[key]
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        return {k: grads[k] for k in seen}


def _record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
            backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _Node(op, tuple(inputs), out, backward)
        tape.nodes.append(out._node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# elementwise binary

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _record("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _record("mul", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), a.data @ b.data, backward)


# convolution / pooling

def _pad_amounts(kernel: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        left = (kernel - 1) // 2
        return left, kernel - 1 - left
    raise ValueError(f"unknown padding {padding!r}")


def conv1d(x, weight, bias=None, padding: str = "valid") -> Tensor:
    """Stride-1 cross-correlation.

    x: (batch, in_channels, length); weight: (out_channels, in_channels, kernel);
    bias: (out_channels,) or None.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch("conv1d", x.shape, weight.shape)
    b, cin, length = x.shape
    cout, _, k = weight.shape
    left, right = _pad_amounts(k, padding)
    if length + left + right < k:
        raise ShapeMismatch("conv1d", x.shape, weight.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right))) if left or right else x.data
    lout = xp.shape[2] - k + 1
    # (b, lout, cin*k)
    cols = sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3).reshape(b * lout, cin * k)
    w2 = weight.data.reshape(cout, cin * k)
    out = (cols @ w2.T).reshape(b, lout, cout).transpose(0, 2, 1)
    inputs = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatch("conv1d", weight.shape, bias.shape)
        out = out + bias.data[None, :, None]
        inputs.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(b * lout, cout)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ w2).reshape(b, lout, cin, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + lout] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, left:left + length]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return _record("conv1d", inputs, out, backward)


def maxpool1d(x, width: int, stride: int | None = None) -> Tensor:
    """Max over windows of the last axis; ties go to the first maximum."""
    x = _as_tensor(x)
    stride = width if stride is None else stride
    if width < 1 or stride < 1 or x.shape[-1] < width:
        raise ShapeMismatch("maxpool1d", x.shape, (width, stride))
    windows = sliding_window_view(x.data, width, axis=-1)[..., ::stride, :]
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    lout = out.shape[-1]
    starts = stride * np.arange(lout)

    def backward(g):
        gx = np.zeros_like(x.data)
        for j in range(width):
            gx[..., starts + j] += np.where(idx == j, g, 0.0)
        return (gx,)

    return _record("maxpool1d", (x,), out, backward)


# elementwise unary

def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _record("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    s = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.data)
    return _record("exp", (x,), e, lambda g: (g * e,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return _record("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def square(x) -> Tensor:
    x = _as_tensor(x)
    return _record("square", (x,), x.data * x.data, lambda g: (2.0 * x.data * g,))


def max_with_scalar(x, c: float) -> Tensor:
    """Elementwise max(x, c); the gradient flows only where x > c."""
    x = _as_tensor(x)
    mask = x.data > c
    return _record("max_with_scalar", (x,), np.where(mask, x.data, c), lambda g: (g * mask,))


def dropout(x, rate: float, train: bool, seed: int = 0) -> Tensor:
    """Inverted dropout. Identity unless ``train``.

    The mask comes from a Philox generator keyed by ``seed`` alone, so the
    same seed always drops the same positions.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1], got {rate}")
    if not train or rate == 0.0:
        return x
    if rate == 1.0:
        scale = np.zeros_like(x.data)
    else:
        rng = np.random.Generator(np.random.Philox(key=int(seed) % (1 << 128)))
        keep = rng.random(x.shape) >= rate
        scale = keep / (1.0 - rate)
    return _record("dropout", (x,), x.data * scale, lambda g: (g * scale,))


# structural

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[t.shape for t in ts]) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _record("concat", ts, out, backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, tuple(shape)) from None
    return _record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeMismatch("transpose", x.shape, axes)
    inverse = tuple(np.argsort(axes))
    return _record("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inverse),))


def slice_(x, index) -> Tensor:
    """Basic indexing (ints and slices only)."""
    x = _as_tensor(x)
    try:
        out = x.data[index]
    except IndexError:
        raise ShapeMismatch("slice", x.shape, index) from None

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return _record("slice", (x,), np.array(out), backward)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("reduce_sum", (x,), np.asarray(out), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _record("reduce_mean", (x,), np.asarray(out), backward)


def grad_check(f: Callable[..., Tensor], x, eps: float = 1e-5,
               max_entries: int | None = None, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    ``x`` is a tensor or a sequence of tensors; ``f`` is called with the same
    structure and must return a scalar tensor. The error for one entry is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    ``max_entries`` limits the probe to that many entries per tensor: the one
    with the largest analytic gradient plus a seeded random sample. Without it
    every entry is perturbed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    single = isinstance(x, Tensor)
    xs = [x] if single else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True

    def call():
        return f(xs[0]) if single else f(xs)

    try:
        with Tape() as tape:
            out = call()
        if not np.all(np.isfinite(out.data)):
            raise NonFiniteOutput("f returned a non-finite value")
        analytic = tape.gradients(out, xs)
        del tape
        worst = 0.0
        for t, ga in zip(xs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            probe = range(flat.size)
            if max_entries is not None and flat.size > max_entries:
                picked = np.random.default_rng(seed).choice(flat.size, max_entries - 1, replace=False)
                probe = sorted({int(np.abs(gflat).argmax()), *picked.tolist()})
            for i in probe:
                orig = flat[i]
                flat[i] = orig + eps
                up = float(call().data)
                flat[i] = orig - eps
                down = float(call().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NonFiniteOutput(f"f is non-finite near entry {i}")
                num = (up - down) / (2.0 * eps)
                err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]), abs(num))
                worst = max(worst, err)
        return worst
    finally:
        for t, flag in zip(xs, saved):
            t.requires_grad = flag
