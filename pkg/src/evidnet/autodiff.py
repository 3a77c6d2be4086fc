"""Minimal dense-tensor reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays.  Every operation records its parents
and a backward closure; calling :meth:`Tensor.backward` walks the graph
in reverse topological order and accumulates gradients additively into
``.grad`` buffers (which persist until explicitly zeroed, so summed
losses and repeated backward passes compose linearly).

Only the operations the model and losses need are provided.  There is no
broadcasting beyond bias addition over the channel/feature axis and
scalar constants; shapes must otherwise match exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln as _gammaln, polygamma as _polygamma, psi as _psi

from .exceptions import ArgumentError, DimensionError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "exp",
    "log",
    "softplus",
    "clip",
    "lgamma",
    "digamma",
    "tsum",
    "tmean",
    "conv2d",
    "max_pool2d",
    "global_avg_pool",
    "flatten",
    "linear",
]


class Tensor:
    """A float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        self._parents = _parents
        self._backward = None
        self._op = _op

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- gradients -----------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, seed=None):
        """Accumulate gradients of this tensor's (seeded) sum into leaves."""
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise DimensionError(
                    f"backward seed shape {seed.shape} != tensor shape {self.data.shape}"
                )
        topo = _toposort(self)
        for t in topo:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
        if not self.requires_grad:
            return
        self.grad = self.grad + seed
        for t in reversed(topo):
            if t._backward is not None and t.requires_grad:
                t._backward(t.grad)

    # -- operator sugar ------------------------------------------------

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

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ArgumentError("tensor division is only supported by scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, iter(root._parents))]
    seen.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if t.requires_grad:
        t.grad += g


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} do not match"
        )


# ----------------------------------------------------------------------
# elementwise / scalar
# ----------------------------------------------------------------------


def add(a, b):
    if np.isscalar(b):
        a = _as_tensor(a)
        out = Tensor(a.data + float(b), _parents=(a,), _op="add_scalar")
        out._backward = lambda g: _accum(a, g)
        return out
    if np.isscalar(a):
        return add(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b), _op="add")

    def _bw(g):
        _accum(a, g)
        _accum(b, g)

    out._backward = _bw
    return out


def sub(a, b):
    if np.isscalar(b):
        return add(a, -float(b))
    if np.isscalar(a):
        return add(mul(b, -1.0), float(a))
    return add(a, mul(b, -1.0))


def mul(a, b):
    if np.isscalar(b):
        a = _as_tensor(a)
        c = float(b)
        out = Tensor(a.data * c, _parents=(a,), _op="mul_scalar")
        out._backward = lambda g: _accum(a, g * c)
        return out
    if np.isscalar(a):
        return mul(b, a)
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b), _op="mul")

    def _bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    out._backward = _bw
    return out


def relu(x):
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0), _parents=(x,), _op="relu")
    # subgradient at exactly 0 is 0
    out._backward = lambda g: _accum(x, g * (x.data > 0.0))
    return out


def exp(x):
    x = _as_tensor(x)
    out = Tensor(np.exp(x.data), _parents=(x,), _op="exp")
    out._backward = lambda g: _accum(x, g * out.data)
    return out


def log(x):
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(x.data), _parents=(x,), _op="log")
        out._backward = lambda g: _accum(x, g / x.data)
    return out


def softplus(x):
    """ln(1 + e^x), computed as max(x, 0) + ln(1 + e^-|x|) to avoid overflow."""
    x = _as_tensor(x)
    d = x.data
    out = Tensor(
        np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d))),
        _parents=(x,),
        _op="softplus",
    )

    def _bw(g):
        # derivative is the logistic sigmoid, evaluated stably
        sig = np.empty_like(d)
        pos = d >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        sig[~pos] = ez / (1.0 + ez)
        _accum(x, g * sig)

    out._backward = _bw
    return out


def clip(x, lo, hi):
    if not lo < hi:
        raise ArgumentError(f"clip requires lo < hi, got [{lo}, {hi}]")
    x = _as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi), _parents=(x,), _op="clip")
    inside = (x.data > lo) & (x.data < hi)
    out._backward = lambda g: _accum(x, g * inside)
    return out


def lgamma(x):
    x = _as_tensor(x)
    out = Tensor(_gammaln(x.data), _parents=(x,), _op="lgamma")
    out._backward = lambda g: _accum(x, g * _psi(x.data))
    return out


def digamma(x):
    x = _as_tensor(x)
    out = Tensor(_psi(x.data), _parents=(x,), _op="digamma")
    out._backward = lambda g: _accum(x, g * _polygamma(1, x.data))
    return out


# ----------------------------------------------------------------------
# reductions and shape
# ----------------------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), _parents=(x,), _op="sum")

    def _bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape).copy() if g.ndim else np.full_like(x.data, g))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(ge, x.data.shape))

    out._backward = _bw
    return out


def tmean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def flatten(x):
    x = _as_tensor(x)
    n = x.data.shape[0]
    out = Tensor(x.data.reshape(n, -1), _parents=(x,), _op="flatten")
    out._backward = lambda g: _accum(x, g.reshape(x.data.shape))
    return out


# ----------------------------------------------------------------------
# linear algebra and convolution
# ----------------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D tensors")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree ({a.shape} x {b.shape})"
        )
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def _bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = _bw
    return out


def linear(x, w, b):
    """Dense layer x @ w + b with the bias broadcast over rows."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError("linear expects x:2-D, w:2-D, b:1-D")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(
            f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}"
        )
    out = Tensor(x.data @ w.data + b.data, _parents=(x, w, b), _op="linear")

    def _bw(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    out._backward = _bw
    return out


def _im2col(xp, kh, kw, stride, ho, wo):
    """Patch matrix of shape (n*ho*wo, c*kh*kw) so conv becomes one matmul."""
    n, c, _, _ = xp.shape
    cols = np.empty((n, ho, wo, c, kh, kw), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            cols[..., u, v] = xp[
                :, :, u : u + stride * ho : stride, v : v + stride * wo : stride
            ].transpose(0, 2, 3, 1)
    return cols.reshape(n * ho * wo, c * kh * kw)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation (no kernel flip) of NCHW input with FCkk kernels."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects x:NCHW and w:FCkhkw")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"conv2d: channel mismatch (input {c}, kernel {cw})")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(
            f"conv2d: non-positive output size {ho}x{wo} for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else x.data
    )
    cols = _im2col(xp, kh, kw, stride, ho, wo)  # (n*ho*wo, c*kh*kw)
    w2 = w.data.reshape(f, c * kh * kw)
    out_data = (cols @ w2.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    parents = (x, w)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (f,):
            raise DimensionError(f"conv2d: bias shape {b.shape} != ({f},)")
        out_data = out_data + b.data[None, :, None, None]
        parents = (x, w, b)
    out = Tensor(out_data, _parents=parents, _op="conv2d")

    def _bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, f)
        if w.requires_grad:
            w.grad += (g2.T @ cols).reshape(w.data.shape)
        if b is not None and b.requires_grad:
            b.grad += g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for u in range(kh):
                for v in range(kw):
                    dxp[
                        :, :, u : u + stride * ho : stride, v : v + stride * wo : stride
                    ] += dcols[..., u, v].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x.grad += dxp

    out._backward = _bw
    return out


def max_pool2d(x, size=2, stride=None):
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("max_pool2d expects NCHW input")
    stride = size if stride is None else stride
    n, c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"max_pool2d: non-positive output size for input {h}x{w}")
    win = np.empty((n, c, ho, wo, size * size), dtype=np.float64)
    k = 0
    for u in range(size):
        for v in range(size):
            win[..., k] = x.data[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride]
            k += 1
    arg = win.argmax(axis=-1)  # first maximum wins on ties: deterministic
    out = Tensor(np.take_along_axis(win, arg[..., None], -1)[..., 0], _parents=(x,), _op="max_pool2d")

    def _bw(g):
        if not x.requires_grad:
            return
        ni, ci, oi, oj = np.indices(arg.shape)
        u = arg // size
        v = arg % size
        np.add.at(x.grad, (ni, ci, oi * stride + u, oj * stride + v), g)

    out._backward = _bw
    return out


def global_avg_pool(x):
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("global_avg_pool expects NCHW input")
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)), _parents=(x,), _op="global_avg_pool")

    def _bw(g):
        _accum(x, np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape))

    out._backward = _bw
    return out
