"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps one float32/float64 ndarray plus an optional gradient
buffer.  Operations build a graph of parent links and VJP closures;
``Tensor.backward`` walks the graph in reverse topological order.  Every op
checks its output for NaN/Inf (disable via ``no_finite_check`` for hot loops
that guard elsewhere).  Reductions use numpy's canonical index order, so
results are deterministic for fixed inputs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigError, NumericsError

__all__ = [
    "Tensor",
    "no_finite_check",
    "inference_mode",
    "concat",
    "matmul",
    "linear",
    "silu",
    "softmax",
    "conv2d",
    "avg_pool2x",
    "upsample_nearest2x",
    "grad_check",
]

_CHECK_FINITE = True
_GRAD_ENABLED = True

_FLOAT_TYPES = (np.float32, np.float64)


@contextlib.contextmanager
def no_finite_check():
    """Temporarily skip the per-op NaN/Inf guard."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = False
    try:
        yield
    finally:
        _CHECK_FINITE = old


@contextlib.contextmanager
def inference_mode():
    """Disable graph construction: ops run as plain array math.

    Forward values are identical to gradient mode; only the backward graph is
    skipped, which keeps sampling loops free of closure and buffer churn.
    """
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _as_array(x, dtype=None):
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.type not in _FLOAT_TYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    # ------------------------------------------------------------------ infra

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    @staticmethod
    def _make(data, parents, vjp, op_name: str) -> "Tensor":
        if _CHECK_FINITE and not np.all(np.isfinite(data)):
            raise NumericsError(f"non-finite values produced by op {op_name!r}")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    def backward(self, grad=None):
        """Accumulate gradients of ``self`` into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ConfigError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad).astype(self.data.dtype, copy=False)
            if grad.shape != self.data.shape:
                raise ConfigError("gradient shape does not match tensor shape")

        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None or node._vjp is None:
                if g is not None and node.requires_grad and node._vjp is None:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pg = pg.astype(p.data.dtype, copy=False)
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # ------------------------------------------------------------- arithmetic

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data + other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return Tensor._make(out_data, (self, other), vjp, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        out_data = self.data - other.data

        def vjp(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return Tensor._make(out_data, (self, other), vjp, "sub")

    def __rsub__(self, other):
        return _wrap(other, self.dtype) - self

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        out_data = a * b

        def vjp(g):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)

        return Tensor._make(out_data, (self, other), vjp, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        out_data = a / b

        def vjp(g):
            return _unbroadcast(g / b, self.shape), _unbroadcast(-g * a / (b * b), other.shape)

        return Tensor._make(out_data, (self, other), vjp, "div")

    def __rtruediv__(self, other):
        return _wrap(other, self.dtype) / self

    def __neg__(self):
        def vjp(g):
            return (-g,)

        return Tensor._make(-self.data, (self,), vjp, "neg")

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ConfigError("only scalar exponents are supported")
        a = self.data
        out_data = a ** p

        def vjp(g):
            return (g * p * a ** (p - 1),)

        return Tensor._make(out_data, (self,), vjp, "pow")

    def __matmul__(self, other):
        return matmul(self, other)

    # -------------------------------------------------------------- unary ops

    def exp(self):
        out_data = np.exp(self.data)

        def vjp(g):
            return (g * out_data,)

        return Tensor._make(out_data, (self,), vjp, "exp")

    def log(self):
        a = self.data

        def vjp(g):
            return (g / a,)

        return Tensor._make(np.log(a), (self,), vjp, "log")

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def vjp(g):
            return (g / (2.0 * out_data),)

        return Tensor._make(out_data, (self,), vjp, "sqrt")

    # ------------------------------------------------------------ shape moves

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def vjp(g):
            return (g.reshape(old),)

        return Tensor._make(self.data.reshape(shape), (self,), vjp, "reshape")

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))

        def vjp(g):
            return (g.transpose(inv),)

        return Tensor._make(self.data.transpose(axes), (self,), vjp, "transpose")

    def __getitem__(self, idx):
        out_data = self.data[idx]
        shape, dtype = self.shape, self.dtype

        def vjp(g):
            full = np.zeros(shape, dtype=dtype)
            full[idx] = g
            return (full,)

        return Tensor._make(out_data.copy(), (self,), vjp, "getitem")

    # ------------------------------------------------------------- reductions

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            ax = axis if isinstance(axis, tuple) else (axis,)
            ax = tuple(sorted(a % len(shape) for a in ax))
            if not keepdims:
                g = np.expand_dims(g, ax)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(out_data, (self,), vjp, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in ax:
                n *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), vjp, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with broadcasting over leading axes."""
    ad, bd = a.data, b.data
    out_data = ad @ bd

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(out_data, (a, b), vjp, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``x`` is ``(..., d_in)``, ``w`` is ``(d_in, d_out)``."""
    if x.shape[-1] != w.shape[0]:
        raise ConfigError(f"linear: input dim {x.shape[-1]} != weight dim {w.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.reshape(-1, x.shape[-1])
    out = matmul(x2, w)
    if b is not None:
        out = out + b
    return out.reshape(*lead, w.shape[1])


def silu(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out_data = x.data * s

    def vjp(g):
        return (g * (s * (1.0 + x.data * (1.0 - s))),)

    return Tensor._make(out_data, (x,), vjp, "silu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; large negative scores underflow to exact zeros."""
    y = x.data - x.data.max(axis=axis, keepdims=True)
    with np.errstate(under="ignore"):
        np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor._make(y, (x,), vjp, "softmax")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int | None = None) -> Tensor:
    """2D convolution, NCHW layout, square kernel; default padding preserves
    spatial size at stride 1.

    Internally stages the input channel-first so the im2col/col2im passes are
    stride-aligned and each direction reduces to one GEMM.
    """
    n, c, h, wd = x.shape
    cout, cin, kh, kw = w.shape
    if cin != c:
        raise ConfigError(f"conv2d: input channels {c} != kernel channels {cin}")
    if padding is None:
        padding = kh // 2
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    hp, wp = h + 2 * padding, wd + 2 * padding

    xp = np.zeros((c, n, hp, wp), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + wd] = x.data.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, ki, kj] = xp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride]
    cols = cols.reshape(c * kh * kw, n * oh * ow)

    wf = w.data.reshape(cout, cin * kh * kw)
    out2 = wf @ cols  # (cout, n*s)
    out_data = np.ascontiguousarray(
        out2.reshape(cout, n, oh * ow).transpose(1, 0, 2)
    ).reshape(n, cout, oh, ow)
    if b is not None:
        if b.shape != (cout,):
            raise ConfigError("conv2d bias must be (c_out,)")
        out_data += b.data[None, :, None, None]

    def vjp(g):
        gf = np.ascontiguousarray(
            g.reshape(n, cout, oh * ow).transpose(1, 0, 2)
        ).reshape(cout, n * oh * ow)
        gw = (gf @ cols.T).reshape(w.shape)
        gcols = (wf.T @ gf).reshape(cin, kh, kw, n, oh, ow)
        gxp = np.zeros((cin, n, hp, wp), dtype=x.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += gcols[:, ki, kj]
        gxc = gxp[:, :, padding : padding + h, padding : padding + wd]
        gx = np.ascontiguousarray(gxc.transpose(1, 0, 2, 3))
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out_data, parents, vjp, "conv2d")


def group_norm_core(x: Tensor, groups: int, axes: tuple, eps: float,
                    scale: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Fused group normalization over a ``(b, t, G, c/G, h, w)`` view.

    ``axes`` selects the statistics extent within that view: ``(3, 4, 5)``
    normalizes each face alone, ``(1, 3, 4, 5)`` pools over the face axis as
    well.  The optional per-channel affine is folded into the same primitive.
    """
    b, t, c, h, w = x.shape
    cg = c // groups
    xg = x.data.reshape(b, t, groups, cg, h, w)
    mu = xg.mean(axis=axes, keepdims=True)
    xc = xg - mu
    var = np.mean(xc * xc, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat.reshape(b, t, c, h, w)
    if scale is not None:
        out = out * scale.data.reshape(1, 1, c, 1, 1)
    if bias is not None:
        out = out + bias.data.reshape(1, 1, c, 1, 1)

    n_red = 1
    for a in axes:
        n_red *= xg.shape[a]

    def vjp(g):
        gy = g
        gbias = g.sum(axis=(0, 1, 3, 4)) if bias is not None else None
        if scale is not None:
            xh5 = xhat.reshape(b, t, c, h, w)
            gscale = (g * xh5).sum(axis=(0, 1, 3, 4))
            gy = g * scale.data.reshape(1, 1, c, 1, 1)
        else:
            gscale = None
        gh = gy.reshape(b, t, groups, cg, h, w)
        s1 = gh.sum(axis=axes, keepdims=True)
        s2 = (gh * xhat).sum(axis=axes, keepdims=True)
        gx = inv * (gh - s1 / n_red - xhat * (s2 / n_red))
        grads = [gx.reshape(b, t, c, h, w)]
        if scale is not None:
            grads.append(gscale)
        if bias is not None:
            grads.append(gbias)
        return tuple(grads)

    parents = [x]
    if scale is not None:
        parents.append(scale)
    if bias is not None:
        parents.append(bias)
    return Tensor._make(out, tuple(parents), vjp, "group_norm")


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 average pooling over the trailing spatial axes of NCHW input."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"avg_pool2x needs even spatial dims, got {h}x{w}")
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        g4 = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
        return (g4 * 0.25,)

    return Tensor._make(out_data, (x,), vjp, "avg_pool2x")


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of NCHW input."""
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    n, c, h, w = x.shape

    def vjp(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._make(out_data, (x,), vjp, "upsample_nearest2x")


def grad_check(fn, params, step: float = 1e-5, rng=None, max_elements: int = 48) -> float:
    """Max relative error between reverse-mode gradients and central differences.

    ``fn`` rebuilds the computation from the current ``params`` data and
    returns a Tensor; the scalar objective is a fixed random projection of that
    output.  Checks up to ``max_elements`` coordinates per parameter.
    """
    rng = rng or np.random.default_rng(0)
    out = fn()
    proj = rng.standard_normal(out.shape)

    def objective() -> float:
        return float(np.sum(fn().data * proj))

    for p in params:
        p.zero_grad()
    loss = (out * Tensor(proj.astype(out.dtype))).sum()
    loss.backward()

    worst = 0.0
    for p in params:
        if p.grad is None:
            raise ConfigError("parameter received no gradient")
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        idxs = np.arange(flat.size)
        if flat.size > max_elements:
            idxs = rng.choice(flat.size, size=max_elements, replace=False)
        for idx in idxs:
            keep = flat[idx]
            flat[idx] = keep + step
            up = objective()
            flat[idx] = keep - step
            down = objective()
            flat[idx] = keep
            numeric = (up - down) / (2.0 * step)
            analytic = float(gflat[idx])
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
