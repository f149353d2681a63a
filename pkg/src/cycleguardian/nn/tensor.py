"""Minimal reverse-mode autodiff over numpy arrays.

Every differentiable operation in the training graph is built from the
primitives here; analytic gradients are certified against central finite
differences by the gradcheck suite.
"""

import contextlib

import numpy as np
from scipy.special import erf as _sp_erf

from .. import kernels

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (eval-mode forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bw = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-mode sweep from this node (scalar unless seed given)."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = seed
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype) if np.isscalar(g) else g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient g back to a broadcast operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(data, parents, bw):
    out = Tensor(data)
    if _GRAD_ENABLED and any(isinstance(p, Tensor) and (p.requires_grad or p._parents) for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if isinstance(p, Tensor))
        out._bw = bw
    return out


# -- arithmetic -------------------------------------------------------------
def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def div(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a, b):
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), bw)


def power(a, p):
    data = a.data**p

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _make(data, (a,), bw)


def exp(a):
    data = np.exp(a.data)

    def bw(g):
        _accum(a, g * data)

    return _make(data, (a,), bw)


def log(a):
    data = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _make(data, (a,), bw)


def sqrt(a):
    data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * (0.5 / data))

    return _make(data, (a,), bw)


def erf(a):
    data = _sp_erf(a.data).astype(a.data.dtype, copy=False)
    coef = np.array(2.0 / np.sqrt(np.pi), dtype=a.data.dtype)

    def bw(g):
        _accum(a, g * coef * np.exp(-a.data * a.data))

    return _make(data, (a,), bw)


def relu(a):
    data = np.maximum(a.data, 0)

    def bw(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), bw)


def absolute(a):
    data = np.abs(a.data)

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _make(data, (a,), bw)


# -- reductions and shape ops ------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape):
    data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), bw)


def transpose(a, axes=None):
    data = a.data.transpose(axes) if axes else a.data.T

    def bw(g):
        if axes:
            inv = np.argsort(axes)
            _accum(a, g.transpose(inv))
        else:
            _accum(a, g.T)

    return _make(data, (a,), bw)


def getitem(a, idx):
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, (a,), bw)


def gather_rows(a, indices):
    """Select rows by an integer index array (repeats allowed)."""
    indices = np.asarray(indices)
    data = a.data[indices]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        _accum(a, full)

    return _make(data, (a,), bw)


def concat(tensors, axis=0):
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        offs = 0
        for t, s in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offs, offs + s)
            _accum(t, g[tuple(sl)])
            offs += s

    return _make(data, tuple(tensors), bw)


def stack_rows(tensors):
    """Stack 1-D tensors into a matrix, one per row."""
    return concat([reshape(t, (1, -1)) for t in tensors], axis=0)


def conv2d(x, w, b, stride=1, pad=0):
    """2-D convolution (cross-correlation), NCHW layout, square stride/pad."""
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    data = kernels.conv2d_forward(xd, wd, stride, pad)
    if b is not None:
        data = data + b.data.reshape(1, -1, 1, 1)
    h, wdim = x.data.shape[2], x.data.shape[3]
    kh, kw = w.data.shape[2], w.data.shape[3]

    def bw(g):
        g = np.ascontiguousarray(g)
        _accum(x, kernels.conv2d_grad_input(g, wd, stride, pad, h, wdim))
        _accum(w, kernels.conv2d_grad_weight(g, xd, stride, pad, kh, kw))
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, bw)


# -- composites --------------------------------------------------------------
def gelu(a):
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    return mul(mul(a, add(erf(mul(a, inv_sqrt2)), 1.0)), 0.5)


def softmax(a, axis=-1):
    shifted = sub(a, a.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(a, axis=-1):
    shifted = sub(a, a.data.max(axis=axis, keepdims=True))
    return sub(shifted, log(tsum(exp(shifted), axis=axis, keepdims=True)))


def l2_normalize(a, axis=-1, eps=1e-12):
    # eps sits inside the sqrt so the backward stays finite on all-zero rows
    norm = sqrt(add(tsum(mul(a, a), axis=axis, keepdims=True), eps))
    return div(a, norm)
