"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a dynamic graph of ``Tensor`` nodes; calling
``Graph.backward`` on a scalar loss walks the graph once in reverse
topological order and accumulates gradients into every node that
requires them. All arithmetic is float64 and fully deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = [
    "Tensor",
    "Graph",
    "constant",
    "matmul",
    "einsum",
    "softmax_last",
    "layer_norm",
    "conv1d",
    "avg_pool_last",
    "relu",
    "tanh",
    "sigmoid",
    "concat",
    "huber_loss",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- graph bookkeeping -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.power(-1.0)
        return self * (1.0 / float(other))

    def power(self, exponent: float):
        data = np.power(self.data, exponent)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * np.power(self.data, exponent - 1.0))

        return Tensor._result(data, (self,), backward)

    def __getitem__(self, key):
        data = self.data[key]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[key] = g
                self._accumulate(full)

        return Tensor._result(data, (self,), backward)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old))

        return Tensor._result(data, (self,), backward)

    def transpose(self, axes):
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        data = self.data.transpose(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))

        return Tensor._result(data, (self,), backward)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / n


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data, name=None) -> Tensor:
    """A non-learnable graph input."""
    return Tensor(data, requires_grad=False, name=name)


# -- free functions --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading axes like ``np.matmul``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul: trailing extent of {a.shape} does not match leading extent of {b.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._result(data, (a, b), backward)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with reverse-mode gradients.

    Restricted to specs where no index repeats within one operand and
    every operand index appears in the other operand or the output,
    which covers all contractions used by the model.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    data = np.einsum(subscripts, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out_sub},{sb}->{sa}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out_sub},{sa}->{sb}", g, a.data))

    return Tensor._result(data, (a, b), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._result(data, tuple(tensors), backward)


def relu(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    mask = t.data > 0
    data = np.where(mask, t.data, 0.0)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g * mask)

    return Tensor._result(data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = np.tanh(t.data)

    def backward(g):
        if t.requires_grad:
            t._accumulate(g * (1.0 - data * data))

    return Tensor._result(data, (t,), backward)


def sigmoid(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    data = 1.0 / (1.0 + np.exp(-t.data))

    def backward(g):
        if t.requires_grad:
            t._accumulate(g * data * (1.0 - data))

    return Tensor._result(data, (t,), backward)


def softmax_last(t: Tensor) -> Tensor:
    """Softmax along the last axis, max-shifted for stability."""
    t = _as_tensor(t)
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if t.requires_grad:
            dot = (g * data).sum(axis=-1, keepdims=True)
            t._accumulate(data * (g - dot))

    return Tensor._result(data, (t,), backward)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
    t, gain, bias = _as_tensor(t), _as_tensor(gain), _as_tensor(bias)
    centered = t - t.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps).power(-0.5)
    return centered * inv * gain + bias


def conv1d(t: Tensor, kernel: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid (no-padding) convolution along the last axis.

    ``t`` has shape (..., C_in, T), ``kernel`` (C_out, C_in, s); the
    output is (..., C_out, T_out) with T_out = (T - s) // stride + 1.
    Taps are applied in cross-correlation order.
    """
    t, kernel = _as_tensor(t), _as_tensor(kernel)
    if stride < 1:
        raise ParameterError(f"conv1d: stride must be >= 1, got {stride}")
    c_out, c_in, s = kernel.shape
    if t.shape[-2] != c_in:
        raise DimensionError(
            f"conv1d: input channels {t.shape[-2]} != kernel channels {c_in}"
        )
    length = t.shape[-1]
    if s > length:
        raise DimensionError(f"conv1d: kernel size {s} exceeds input length {length}")
    windows = np.lib.stride_tricks.sliding_window_view(t.data, s, axis=-1)
    windows = windows[..., ::stride, :]  # (..., C_in, T_out, s)
    data = np.einsum("ocl,...ctl->...ot", kernel.data, windows)
    if bias is not None:
        bias = _as_tensor(bias)
        data = data + bias.data[:, None]
    t_out = data.shape[-1]

    def backward(g):
        if kernel.requires_grad:
            gb = g.reshape(-1, c_out, t_out)
            wb = windows.reshape(-1, c_in, t_out, s)
            kernel._accumulate(np.einsum("bot,bctl->ocl", gb, wb))
        if t.requires_grad:
            gx = np.zeros_like(t.data)
            for l in range(s):
                # position of tap l in the input for each output step
                contrib = np.einsum("oc,...ot->...ct", kernel.data[:, :, l], g)
                gx[..., l : l + stride * t_out : stride] += contrib
            t._accumulate(gx)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,)))

    parents = (t, kernel) if bias is None else (t, kernel, bias)
    return Tensor._result(data, parents, backward)


def avg_pool_last(t: Tensor, window: int) -> Tensor:
    """Non-overlapping mean pooling along the last axis (remainder dropped)."""
    t = _as_tensor(t)
    if window < 1:
        raise ParameterError(f"avg_pool_last: window must be >= 1, got {window}")
    length = t.shape[-1]
    t_out = length // window
    trimmed = t.data[..., : t_out * window]
    data = trimmed.reshape(t.shape[:-1] + (t_out, window)).mean(axis=-1)

    def backward(g):
        if t.requires_grad:
            gx = np.zeros_like(t.data)
            expanded = np.repeat(g[..., None], window, axis=-1) / window
            gx[..., : t_out * window] = expanded.reshape(t.shape[:-1] + (t_out * window,))
            t._accumulate(gx)

    return Tensor._result(data, (t,), backward)


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: quadratic within ``delta``, linear outside."""
    pred = _as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"huber_loss: shapes {pred.shape} and {target.shape} differ")
    if delta <= 0:
        raise ParameterError(f"huber_loss: delta must be positive, got {delta}")
    err = pred.data - target
    abs_err = np.abs(err)
    quad = abs_err <= delta
    elementwise = np.where(quad, 0.5 * err * err, delta * (abs_err - 0.5 * delta))
    data = elementwise.mean()
    n = err.size

    def backward(g):
        if pred.requires_grad:
            pred._accumulate(g * np.clip(err, -delta, delta) / n)

    return Tensor._result(data, (pred,), backward)


class Graph:
    """Parameter registry plus the reverse pass over a recorded forward.

    Parameters are named ``Tensor``s with ``requires_grad=True``; after
    ``backward`` the gradient store maps each registered name to an
    array of the parameter's shape.
    """

    def __init__(self):
        self.parameters: dict[str, Tensor] = {}
        self.gradients: dict[str, np.ndarray] = {}

    def parameter(self, name: str, data) -> Tensor:
        if name in self.parameters:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.parameters[name] = t
        return t

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None
        self.gradients = {}

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.size != 1:
            raise DimensionError(f"backward: loss must be scalar, got shape {loss.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        loss.grad = np.ones_like(loss.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        self.gradients = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.parameters.items()
        }
        return self.gradients

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for name, value in state.items():
            p = self.parameters[name]
            if p.data.shape != np.asarray(value).shape:
                raise DimensionError(
                    f"load_state: shape mismatch for {name!r}: "
                    f"{p.data.shape} vs {np.asarray(value).shape}"
                )
            p.data = np.asarray(value, dtype=np.float64).copy()
