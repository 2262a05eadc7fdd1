"""Dense float64 tensors with tape-based reverse-mode differentiation.

Layout is channels-last and row-major: 2D data is ``[batch, height, width,
channels]``, 1D data is ``[batch, length, channels]``. Every differentiable
operation records a :class:`Node` on the current thread's :class:`Tape`;
:func:`backward` replays the tape in reverse and then clears it.
"""
import contextlib
import threading

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError


class Tape:
    """Ordered record of executed operations.

    ``generation`` is bumped on every :meth:`clear`, which invalidates the
    nodes of outputs computed before the clear.
    """

    def __init__(self):
        self.nodes = []
        self.generation = 0

    def __len__(self):
        return len(self.nodes)

    def record(self, node):
        node.index = len(self.nodes)
        node.generation = self.generation
        self.nodes.append(node)

    def clear(self):
        for node in self.nodes:
            node.release()
        self.nodes = []
        self.generation += 1


class Node:
    __slots__ = ("tape", "inputs", "backward", "index", "generation")

    def __init__(self, tape, inputs, backward):
        self.tape = tape
        self.inputs = inputs
        self.backward = backward
        self.index = -1
        self.generation = -1

    def live(self):
        return self.generation == self.tape.generation

    def release(self):
        self.inputs = ()
        self.backward = None


_local = threading.local()


def current_tape():
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def using_tape(tape):
    """Record operations on ``tape`` inside the block (per thread)."""
    prev = getattr(_local, "tape", None)
    _local.tape = tape
    try:
        yield tape
    finally:
        _local.tape = prev


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.values) if requires_grad else None
        self._node = None

    @classmethod
    def _wrap(cls, values):
        t = cls.__new__(cls)
        t.values = values
        t.requires_grad = False
        t.name = None
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def numpy(self):
        return self.values

    def item(self):
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else self.values.item()

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def detach(self):
        return Tensor._wrap(self.values)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def apply_op(values, inputs, backward):
    """Wrap ``values`` as an op output, taping ``backward`` if any input needs grad.

    ``backward(gout)`` must return one gradient (or None) per input, each with
    that input's shape.
    """
    out = Tensor._wrap(values)
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        tape = current_tape()
        node = Node(tape, tuple(inputs), backward)
        tape.record(node)
        out.requires_grad = True
        out._node = node
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The tape is cleared afterwards, so a second call without a fresh
    forward pass raises :class:`ContractError`.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        if loss.requires_grad:
            loss.grad = loss.grad + 1.0 if loss.grad is not None else np.ones_like(loss.values)
            return
        raise ContractError("loss was not produced by taped operations")
    if not node.live():
        raise ContractError("tape already consumed; run the forward pass again before backward")
    tape = node.tape
    pending = {node.index: np.ones_like(loss.values)}
    for n in reversed(tape.nodes[: node.index + 1]):
        gout = pending.pop(n.index, None)
        if gout is None:
            continue
        for t, g in zip(n.inputs, n.backward(gout)):
            if g is None or not t.requires_grad:
                continue
            src = t._node
            if src is not None and src.tape is tape and src.live():
                prev = pending.get(src.index)
                pending[src.index] = g if prev is None else prev + g
            else:
                t.grad = g.copy() if t.grad is None else t.grad + g
    tape.clear()


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead > 0 else g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_batch_broadcast(a, b, op):
    """``b`` must equal ``a`` or match it with the batch axis dropped or set to 1."""
    if a.shape == b.shape:
        return
    if b.shape == a.shape[1:] or (b.ndim == a.ndim and b.shape[0] == 1 and b.shape[1:] == a.shape[1:]):
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast over the batch axis")


def add(a, b):
    _check_batch_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return apply_op(a.values + b.values, (a, b), lambda g: (g, _unbroadcast(g, sb)))


def scale(a, s):
    return apply_op(a.values * s, (a,), lambda g: (g * s,))


def hadamard(a, b):
    """Elementwise product; ``b`` may omit (or have size 1 on) the batch axis."""
    _check_batch_broadcast(a, b, "hadamard")
    av, bv = a.values, b.values
    sb = b.shape

    def back(g):
        return (g * bv if a.requires_grad else None,
                _unbroadcast(g * av, sb) if b.requires_grad else None)

    return apply_op(av * bv, (a, b), back)


def sum_all(a):
    shape = a.shape
    return apply_op(np.array(a.values.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def index(a, key):
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return apply_op(np.array(a.values[key]), (a,), back)


def reshape(a, shape):
    old = a.shape
    return apply_op(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def relu(x):
    mask = x.values > 0
    return apply_op(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.values - target.values
    n = diff.size

    def back(g):
        gp = diff * (2.0 * float(g) / n)
        return (gp, -gp)

    return apply_op(np.array(np.mean(diff * diff)), (pred, target), back)


def matmul_channels(x, weights, bias):
    """Affine map over the last (channel) axis at every position; a 1x1 convolution."""
    cin, cout = weights.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"matmul_channels: input has {x.shape[-1]} channels, weights expect {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"matmul_channels: bias shape {bias.shape}, expected ({cout},)")
    xv, wv = x.values, weights.values
    x2 = xv.reshape(-1, cin)
    out = (x2 @ wv + bias.values).reshape(xv.shape[:-1] + (cout,))

    def back(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ wv.T).reshape(xv.shape) if x.requires_grad else None
        return gx, x2.T @ g2, g2.sum(axis=0)

    return apply_op(out, (x, weights, bias), back)


def _conv_pads(kshape, padding):
    if padding == "same_zero":
        return tuple(k // 2 for k in kshape)
    if padding == "valid":
        return (0,) * len(kshape)
    raise ValueError(f"unknown padding {padding!r}")


def _conv_core(x4, w4, bias, padding, inputs, out_shape_fn, grad_shape_fns):
    kh, kw, cin, cout = w4.shape
    for k in (kh, kw):
        if k % 2 == 0:
            raise ShapeError(f"kernel extent must be odd, got {k}")
    if x4.shape[-1] != cin:
        raise ShapeError(f"conv: input has {x4.shape[-1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv: bias shape {bias.shape}, expected ({cout},)")
    ph, pw = _conv_pads((kh, kw), padding)
    if padding == "valid" and (x4.shape[1] < kh or x4.shape[2] < kw):
        raise ShapeError("conv: input smaller than kernel under valid padding")
    be = kernels.active
    x4 = np.ascontiguousarray(x4)
    out, cols = be.conv2d_forward(x4, np.ascontiguousarray(w4), bias.values, ph, pw)
    xshape = x4.shape
    xin, win, _ = inputs
    gx_shape, gw_shape = grad_shape_fns

    def back(g):
        g4 = np.ascontiguousarray(g.reshape(out.shape))
        gx, gw, gb = be.conv2d_backward(g4, cols, np.ascontiguousarray(w4), xshape, ph, pw,
                                        xin.requires_grad)
        return (gx.reshape(gx_shape) if gx is not None else None, gw.reshape(gw_shape), gb)

    return apply_op(out_shape_fn(out), inputs, back)


def conv2d(x, kernel, bias, padding="same_zero"):
    """Cross-correlation of ``x`` [b,h,w,c_in] with ``kernel`` [kh,kw,c_in,c_out]."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-axis input and kernel, got {x.shape}, {kernel.shape}")
    return _conv_core(x.values, kernel.values, bias, padding, (x, kernel, bias),
                      lambda out: out, (x.shape, kernel.shape))


def conv1d(x, kernel, bias, padding="same_zero"):
    """Cross-correlation of ``x`` [b,n,c_in] with ``kernel`` [k,c_in,c_out]."""
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects 3-axis input and kernel, got {x.shape}, {kernel.shape}")
    b, n, c = x.shape
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"kernel extent must be odd, got {k}")
    x4 = x.values.reshape(b, 1, n, c)
    w4 = kernel.values.reshape((1,) + kernel.shape)
    return _conv_core(x4, w4, bias, padding, (x, kernel, bias),
                      lambda out: out.reshape(b, out.shape[2], out.shape[3]),
                      (x.shape, kernel.shape))


def lcn2d(x, kernels_, bias):
    """Locally-connected layer: private kernel per output pixel, shared bias, same_zero padding.

    ``kernels_`` has shape [h, w, kh, kw, c_in, c_out].
    """
    if x.ndim != 4 or kernels_.ndim != 6:
        raise ShapeError(f"lcn2d expects [b,h,w,c] input and 6-axis kernels, got {x.shape}, {kernels_.shape}")
    h, w, kh, kw, cin, cout = kernels_.shape
    if x.shape[1:3] != (h, w):
        raise ShapeError(f"lcn2d: kernel grid {(h, w)} does not match input extent {x.shape[1:3]}")
    if x.shape[3] != cin:
        raise ShapeError(f"lcn2d: input has {x.shape[3]} channels, kernels expect {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("lcn2d: kernel extents must be odd")
    be = kernels.active
    xv = np.ascontiguousarray(x.values)
    wv = np.ascontiguousarray(kernels_.values)
    ph, pw = kh // 2, kw // 2
    out = be.lcn_forward(xv, wv, np.ascontiguousarray(bias.values), ph, pw)

    def back(g):
        return be.lcn_backward(np.ascontiguousarray(g), xv, wv, ph, pw, x.requires_grad)

    return apply_op(out, (x, kernels_, bias), back)


def resample2x(x, direction):
    """``down``: 2x2 max-pool (ties to the first row-major index); ``up``: nearest 2x repeat."""
    if x.ndim != 4:
        raise ShapeError(f"resample2x expects [b,h,w,c], got {x.shape}")
    b, h, w, c = x.shape
    if direction == "down":
        if h % 2 or w % 2:
            raise ShapeError(f"resample2x down needs even extents, got {(h, w)}")
        be = kernels.active
        out, idx = be.maxpool2_forward(np.ascontiguousarray(x.values))
        return apply_op(out, (x,), lambda g: (be.maxpool2_backward(np.ascontiguousarray(g), idx, x.shape),))
    if direction == "up":
        out = x.values.repeat(2, axis=1).repeat(2, axis=2)
        return apply_op(out, (x,), lambda g: (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),))
    raise ValueError(f"direction must be 'down' or 'up', got {direction!r}")


def concat_channels(a, b):
    """Concatenate along the channel axis; ``b`` may lack the batch axis (coordinates)."""
    av, bv = a.values, b.values
    if bv.ndim == av.ndim - 1:
        if bv.shape[:-1] != av.shape[1:-1]:
            raise ShapeError(f"concat_channels: spatial mismatch {av.shape} vs {bv.shape}")
        bv = np.broadcast_to(bv, (av.shape[0],) + bv.shape)
    elif bv.ndim != av.ndim or bv.shape[:-1] != av.shape[:-1]:
        raise ShapeError(f"concat_channels: non-channel extents differ {av.shape} vs {bv.shape}")
    ca = av.shape[-1]
    sb = b.shape

    def back(g):
        return g[..., :ca], _unbroadcast(g[..., ca:], sb)

    return apply_op(np.concatenate([av, bv], axis=-1), (a, b), back)


def slice_channels(x, start, stop):
    return index(x, (Ellipsis, slice(start, stop)))
