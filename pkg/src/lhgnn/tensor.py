"""Dense-array storage and reverse-mode differentiation.

A ``Tensor`` wraps a numpy array (float32 in production, float64 for
gradient checks) together with an optional record of the op that produced
it.  Running ops with recording enabled builds the graph; ``backward``
walks it once in reverse topological order and returns one gradient per
requires-grad parameter.

Conventions shared by every op here:

* outputs are freshly allocated and never mutated afterwards, so tensors
  are safe to share read-only;
* non-differentiable selection points (max ties) route the subgradient to
  the lowest index, which is what ``np.argmax`` does;
* with finite checks enabled (the default), any op that produces a NaN or
  Inf raises ``NumericsError`` instead of propagating it.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import DimensionError, NumericsError, ParameterError, StateError

_GRAD_ENABLED = True
_FINITE_CHECKS = True

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))  # python float: keeps float32 inputs float32
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference/data paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf guard on op outputs (on by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """A numpy array plus the autodiff record of the op that made it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the module-level functions are the real ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def backward(self, params: "ParamStore | None" = None, free_graph: bool = True):
        return backward(self, params, free_graph)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_along(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean_along(self, axis=axis, keepdims=keepdims)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def constant(value, dtype=None) -> Tensor:
    """A leaf that never takes gradients (detached data entering the graph)."""
    return Tensor(value, requires_grad=False, dtype=dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _sum_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _node(data, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(-g, b.shape)

    return _node(data, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return _sum_to_shape(g * b.data, a.shape), _sum_to_shape(g * a.data, b.shape)

    return _node(data, "mul", (a, b), vjp)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _node(data, "exp", (a,), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _node(data, "log", (a,), vjp)


def gelu(a) -> Tensor:
    """Exact error-function GELU, x * Phi(x), elementwise."""
    a = as_tensor(a)
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * phi

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    return _node(data, "gelu", (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrix-like operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _sum_to_shape(ga, a.shape), _sum_to_shape(gb, b.shape)

    return _node(data, "matmul", (a, b), vjp)


def affine(x, weight, bias=None) -> Tensor:
    """x @ weight (+ bias), the last-axis linear map."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0, depthwise: bool = False) -> Tensor:
    """2-D convolution over NHWC input (a rank-3 HWC input is treated as batch 1).

    ``w`` is (kh, kw, Cin, Cout), or (kh, kw, C) when ``depthwise`` (one
    kernel per channel, Cout == Cin).  Output extents follow
    floor((H + 2p - kh)/stride) + 1.
    """
    x = as_tensor(x)
    if x.ndim == 3:
        out = conv2d(reshape(x, (1,) + x.shape), w, bias, stride, padding, depthwise)
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects (B,H,W,C) input, got shape {x.shape}")
    w = as_tensor(w)
    if bias is not None:
        bias = as_tensor(bias)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be >= 0, got {padding}")

    B, H, W, C = x.shape
    if depthwise:
        if w.ndim != 3:
            raise DimensionError(f"depthwise kernel must be (kh,kw,C), got {w.shape}")
        kh, kw, cin = w.shape
        cout = cin
    else:
        if w.ndim != 4:
            raise DimensionError(f"kernel must be (kh,kw,Cin,Cout), got {w.shape}")
        kh, kw, cin, cout = w.shape
    if cin != C:
        raise DimensionError(f"kernel expects {cin} input channels, input has {C}")

    h_out = (H + 2 * padding - kh) // stride + 1
    w_out = (W + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d output extent non-positive: input {H}x{W}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: (B, h_out, w_out, C, kh, kw)
    if depthwise:
        data = np.einsum("bhwcij,ijc->bhwc", win, w.data)
    else:
        data = np.einsum("bhwcij,ijco->bhwo", win, w.data)
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"bias must be ({cout},), got {bias.shape}")
        data = data + bias.data

    parents = (x, w) if bias is None else (x, w, bias)

    def vjp(g):
        if depthwise:
            gw = np.einsum("bhwcij,bhwc->ijc", win, g)
        else:
            gw = np.einsum("bhwcij,bhwo->ijco", win, g)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                if depthwise:
                    patch = g * w.data[i, j]
                else:
                    patch = np.einsum("bhwo,co->bhwc", g, w.data[i, j])
                gxp[:, i : i + stride * h_out : stride, j : j + stride * w_out : stride, :] += patch
        if padding:
            gx = gxp[:, padding : padding + H, padding : padding + W, :]
        else:
            gx = gxp
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1, 2))

    return _node(data, "conv2d", parents, vjp)


# ---------------------------------------------------------------------------
# shape / indexing
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _node(data, "reshape", (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    widths = [p.shape[axis] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, "concat", tuple(parts), vjp)


def gather_nodes(x, indices: np.ndarray) -> Tensor:
    """Select node vectors: x (B,N,C) gathered by indices (B,N,J) -> (B,N,J,C).

    Indices are data, not graph nodes; gradients scatter-add back into x.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"gather_nodes expects (B,N,C) input, got {x.shape}")
    idx = np.asarray(indices)
    if idx.ndim != 3 or idx.shape[0] != x.shape[0]:
        raise DimensionError(f"indices must be (B,N,J), got {idx.shape} for input {x.shape}")
    batch = np.arange(x.shape[0])[:, None, None]
    data = x.data[batch, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch, idx), g)
        return (gx,)

    return _node(data, "gather_nodes", (x,), vjp)


def max_along(a, axis: int) -> Tensor:
    """Max over one axis; ties send the subgradient to the lowest index."""
    a = as_tensor(a)
    data = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def vjp(g):
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _node(data, "max", (a,), vjp)


def sum_along(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(data, "sum", (a,), vjp)


def mean_along(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    scale = np.asarray(1.0 / count, dtype=a.data.dtype)  # keep the input dtype
    return mul(sum_along(a, axis=axis, keepdims=keepdims), scale)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def batch_norm_train(x, gamma, beta, eps: float = 1e-5):
    """Channel-wise standardization with batch statistics.

    Reduces over every axis but the last.  Returns (out, batch_mean,
    batch_var) with the biased variance, so the caller can maintain
    running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    n = int(np.prod([x.shape[ax] for ax in axes])) if axes else 1
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = gamma.data * xhat + beta.data

    def vjp(g):
        g_sum = g.sum(axis=axes)
        gx_sum = (g * xhat).sum(axis=axes)
        gx = (gamma.data * inv / n) * (n * g - g_sum - xhat * gx_sum)
        return gx, gx_sum, g_sum

    out = _node(data, "batch_norm", (x, gamma, beta), vjp)
    return out, mu, var


def batch_norm_eval(x, gamma, beta, running_mean, running_var, eps: float = 1e-5) -> Tensor:
    """Channel-wise standardization with fixed (running) statistics."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    rm = np.asarray(running_mean)
    rv = np.asarray(running_var)
    inv = 1.0 / np.sqrt(rv + eps)
    xhat = (x.data - rm) * inv
    data = gamma.data * xhat + beta.data
    axes = tuple(range(x.ndim - 1))

    def vjp(g):
        return g * (gamma.data * inv), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(data, "batch_norm_eval", (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def bce_with_logits(logits, targets) -> Tensor:
    """Mean binary cross-entropy with logits; log-sum-exp stabilized."""
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"targets shape {y.shape} != logits shape {logits.shape}")
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray(per.mean(), dtype=logits.dtype)

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        return (g * (sig - y) / z.size,)

    return _node(data, "bce_with_logits", (logits,), vjp)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy over integer class labels."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (B, classes), got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"labels must be (B,), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DimensionError("label index outside the class range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    data = np.asarray((lse - picked).mean(), dtype=logits.dtype)

    def vjp(g):
        soft = np.exp(z - zmax)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(z.shape[0]), labels] -= 1.0
        return (g * soft / z.shape[0],)

    return _node(data, "softmax_cross_entropy", (logits,), vjp)


# ---------------------------------------------------------------------------
# parameters and backward
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered name -> Tensor map with per-entry requires-grad flags.

    Entries with ``requires_grad=False`` are buffers (e.g. running norm
    statistics): saved, loaded, and averaged with the rest but never
    receiving gradients.
    """

    def __init__(self):
        self._entries: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True, dtype=np.float32) -> Tensor:
        if name in self._entries:
            raise ParameterError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(value, dtype=dtype), requires_grad=requires_grad)
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._entries.items())

    def trainable(self) -> Iterator[tuple[str, Tensor]]:
        return ((n, t) for n, t in self._entries.items() if t.requires_grad)

    def num_parameters(self, trainable_only: bool = True) -> int:
        return sum(
            t.size for t in self._entries.values() if t.requires_grad or not trainable_only
        )

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._entries.items():
            out.add(name, t.data.copy(), requires_grad=t.requires_grad, dtype=dtype)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._entries.items():
            out.add(name, t.data.copy(), requires_grad=t.requires_grad, dtype=t.dtype)
        return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: ParamStore | None = None, free_graph: bool = True):
    """Reverse-mode pass from a scalar loss.

    Returns a gradient record: ``{name: ndarray}`` covering every
    requires-grad entry of ``params`` (zeros for parameters the loss does
    not depend on).  With ``params=None`` the gradients are left on the
    leaf tensors' ``.grad`` instead.
    """
    if not isinstance(loss, Tensor):
        raise StateError("backward expects the Tensor produced by a recorded forward")
    if loss.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    if loss._vjp is None and not loss._parents:
        raise StateError("backward called without a recorded forward pass")

    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=parent.dtype, copy=True)
            else:
                parent.grad = parent.grad + g

    record = None
    if params is not None:
        record = {}
        for name, t in params.trainable():
            record[name] = t.grad if t.grad is not None else np.zeros_like(t.data)

    if free_graph:
        for node in order:
            if node._vjp is not None:
                node._parents = ()
                node._vjp = None
                node.grad = None
            elif params is not None:
                node.grad = None
    return record


def zero_grads(params: ParamStore) -> None:
    for _, t in params.items():
        t.grad = None
