"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` carrying a
:class:`Node` that records the operation tag, its inputs and a closure mapping
the output gradient to input gradients. Tensors receive a monotonically
increasing ``tape_id`` at creation, so creation order is a valid topological
order and :func:`backward` simply replays reachable nodes in decreasing id.

Broadcasting is deliberately narrow: elementwise binary ops accept operands
of equal shape, or where one shape is a trailing suffix of the other (leading
batch dims), or a scalar. Everything else must be reshaped by the caller.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ContractError, GeometryError, ShapeError

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """N-dimensional float array with an optional gradient and backward node."""

    __slots__ = ("data", "grad", "requires_grad", "node", "tape_id", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None
        self.tape_id = next(_ids)

    @property
    def shape(self) -> tuple:
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

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the value buffer."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a tensor is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def op_result(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of a recorded operation.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per input.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.tape_id = next(_ids)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn)
    else:
        out.requires_grad = False
        out.node = None
    return out


def backward(loss: Tensor, grad=None):
    """Populate ``.grad`` on every tensor reachable from ``loss`` that requires grad.

    Gradients accumulate across calls; call ``zero_grad`` on parameters between
    optimisation steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")

    order = []
    seen = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        order.append(t)
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    seen.add(id(inp))
                    stack.append(inp)
    order.sort(key=lambda t: t.tape_id, reverse=True)

    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    pending = {id(loss): seed}
    for t in order:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            g = np.asarray(g, dtype=t.dtype)
            t.grad = np.array(g, copy=True) if t.grad is None else t.grad + g
            continue
        t.grad = g if t.grad is None else t.grad + g
        for inp, gi in zip(t.node.inputs, t.node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            k = id(inp)
            pending[k] = gi if k not in pending else pending[k] + gi


# ---------------------------------------------------------------- elementwise


def _check_elementwise(a: tuple, b: tuple, op: str):
    if a == b or len(a) == 0 or len(b) == 0:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: shapes {a} and {b} differ beyond leading batch dims")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(as_tensor(a), float(b))
    if not isinstance(a, Tensor):
        return _add_scalar(b, float(a))
    _check_elementwise(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return op_result(a.data + b.data, "add", (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def _add_scalar(a: Tensor, c: float) -> Tensor:
    return op_result(a.data + a.dtype.type(c), "add_scalar", (a,), lambda g: (g,))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _add_scalar(as_tensor(a), -float(b))
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    return op_result(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _check_elementwise(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return op_result(ad * bd, "mul", (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return op_result(a.data * c, "scale", (a,), lambda g: (g * c,))


def mul_const(a: Tensor, m: np.ndarray) -> Tensor:
    """Multiply by a constant array (no gradient flows into ``m``)."""
    _check_elementwise(a.shape, np.shape(m), "mul_const")
    m = np.asarray(m, dtype=a.dtype)
    return op_result(a.data * m, "mul_const", (a,), lambda g: (_unbroadcast(g * m, a.shape),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    c = np.sqrt(2.0 / np.pi)
    xd = x.data
    inner = c * (xd + 0.044715 * xd ** 3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1 + th)

    def bwd(g):
        dinner = c * (1 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1 + th) + 0.5 * xd * (1 - th * th) * dinner),)

    return op_result(out.astype(x.dtype, copy=False), "gelu", (x,), bwd)


# ---------------------------------------------------------------- reductions & shape


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(_norm_axis(a, x.ndim) for a in axes)
    else:
        axes = tuple(range(x.ndim))
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return op_result(np.asarray(out, dtype=x.dtype), "sum", (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {shape}") from exc
    return op_result(out, "reshape", (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(_norm_axis(a, x.ndim) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute axes {axes} invalid for {x.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return op_result(np.ascontiguousarray(x.data.transpose(axes)), "permute", (x,),
                     lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty list")
    axis = _norm_axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat: ragged shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return op_result(out, "concat", tuple(tensors),
                     lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list:
    axis = _norm_axis(axis, x.ndim)
    if any(s <= 0 for s in sizes) or int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to dim {x.shape[axis]}")
    outs = []
    start = 0
    for s in sizes:
        outs.append(_slice_axis(x, axis, start, start + s))
        start += s
    return outs


def _slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = x.shape, x.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return op_result(np.ascontiguousarray(x.data[idx]), "slice", (x,), bwd)


def stack_repeat(x: Tensor, n: int) -> Tensor:
    """Replicate ``x`` along a new leading axis of length ``n``."""
    if n < 1:
        raise ContractError(f"repeat count must be >= 1, got {n}")
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return op_result(out, "stack_repeat", (x,), lambda g: (g.sum(axis=0),))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast_batch(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast_batch(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return op_result(ad @ bd, "matmul", (a, b), bwd)


def _unbroadcast_batch(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape[:-2]) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., d_in] @ w[d_out, d_in].T + b[d_out]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[1])
    out = x2 @ w.data.T
    if b is not None:
        out = out + b.data
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w.data).reshape(x.shape)
        gw = g2.T @ x2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return op_result(out.reshape(lead + (w.shape[0],)), "linear", inputs, bwd)


# ---------------------------------------------------------------- convolution


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """2-D cross-correlation over ``x[N, C, H, W]`` with ``w[O, C/groups, kh, kw]``.

    ``groups`` must be 1 or equal to ``C`` (depthwise, stride 1).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if groups not in (1, C):
        raise ShapeError(f"conv2d supports groups=1 or groups=C, got {groups} for C={C}")
    if Cg * groups != C or (groups > 1 and O != C):
        raise ShapeError(f"conv2d: weight {w.shape} incompatible with input {x.shape}, groups={groups}")
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    if Ho < 1 or Wo < 1 or kh > H + 2 * padding or kw > W + 2 * padding:
        raise GeometryError(f"conv2d: kernel {kh}x{kw} stride {stride} pad {padding} on {H}x{W} gives no output")
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv2d: bias shape {b.shape}, expected {(O,)}")

    if groups == C and C > 1:
        if stride != 1:
            raise GeometryError("depthwise conv2d supports stride 1 only")
        out, bwd = _conv_depthwise(x, w, padding)
    elif kh == kw == 1 and stride == 1 and padding == 0:
        out, bwd = _conv_pointwise(x, w)
    else:
        out, bwd = _conv_im2col(x, w, stride, padding, Ho, Wo)

    inputs = (x, w)
    if b is not None:
        out += b.data[None, :, None, None]
        inputs = (x, w, b)

        def bwd_b(g, _inner=bwd):
            gx, gw = _inner(g)
            return gx, gw, g.sum(axis=(0, 2, 3))

        return op_result(out, "conv2d", inputs, bwd_b)
    return op_result(out, "conv2d", inputs, bwd)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_pointwise(x: Tensor, w: Tensor):
    N, C, H, W = x.shape
    O = w.shape[0]
    wm = w.data.reshape(O, C)
    x3 = x.data.reshape(N, C, H * W)
    out = np.matmul(wm, x3).reshape(N, O, H, W)

    def bwd(g):
        g3 = g.reshape(N, O, H * W)
        gx = np.matmul(wm.T, g3).reshape(x.shape)
        gw = np.tensordot(g3, x3, axes=([0, 2], [0, 2])).reshape(w.shape)
        return gx, gw

    return out, bwd


def _conv_im2col(x: Tensor, w: Tensor, stride: int, padding: int, Ho: int, Wo: int):
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = _pad(x.data, padding)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * Ho * Wo, C * kh * kw)
    wm = w.data.reshape(O, -1)
    out = np.ascontiguousarray((cols @ wm.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wm).reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros(xp.shape, dtype=xp.dtype)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + hs:stride, j:j + ws:stride] += gcols[..., i, j]
        return gxp[:, :, padding:padding + H, padding:padding + W], gw

    return out, bwd


def _conv_depthwise(x: Tensor, w: Tensor, padding: int):
    H, W = x.shape[2:]
    C, _, kh, kw = w.shape
    dt = np.result_type(x.dtype, w.dtype)
    xp = np.ascontiguousarray(_pad(x.data, padding), dtype=dt)
    wk = np.ascontiguousarray(w.data.reshape(C, kh, kw), dtype=dt)
    out = kernels.dwconv_forward(xp, wk)

    def bwd(g):
        gxp, gw = kernels.dwconv_backward(xp, wk, np.ascontiguousarray(g, dtype=dt))
        return gxp[:, :, padding:padding + H, padding:padding + W], gw.reshape(w.shape)

    return out, bwd


# ---------------------------------------------------------------- normalisation & pooling


def layernorm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, axis: int = -1,
              eps: float = 1e-5) -> Tensor:
    """Normalise over one axis: ``(x - mean) / sqrt(var + eps) * gain + bias``."""
    axis = _norm_axis(axis, x.ndim)
    C = x.shape[axis]
    bshape = [1] * x.ndim
    bshape[axis] = C
    for p in (gain, bias):
        if p is not None and p.shape != (C,):
            raise ShapeError(f"layernorm: parameter shape {p.shape}, expected {(C,)}")
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    rstd = 1 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    gb = gain.data.reshape(bshape) if gain is not None else None
    if gain is not None:
        out = out * gb
    if bias is not None:
        out = out + bias.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)
    inputs = tuple(t for t in (x, gain, bias) if t is not None)

    def bwd(g):
        dxhat = g * gb if gain is not None else g
        gx = rstd * (dxhat - dxhat.mean(axis=axis, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=axis, keepdims=True))
        grads = [gx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=red))
        if bias is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return op_result(np.asarray(out, dtype=x.dtype), "layernorm", inputs, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the last two (spatial) axes: ``[..., C, H, W] -> [..., C]``."""
    if x.ndim < 3:
        raise ShapeError(f"global_avg_pool needs [..., C, H, W], got {x.shape}")
    return mean(x, axis=(x.ndim - 2, x.ndim - 1))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return op_result(s, "softmax", (x,),
                     lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return op_result(out, "log_softmax", (x,),
                     lambda g: (g - s * g.sum(axis=axis, keepdims=True),))
