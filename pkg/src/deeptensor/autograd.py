"""Dense N-d tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every operation appends a node holding a
closure that propagates the output gradient to its inputs.  Calling
:func:`backward` on a scalar node walks the graph in reverse topological
order.  All values are float64.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class Tensor:
    """N-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if not _prev and not np.all(np.isfinite(arr)):
            raise ValueError("tensor constructed from non-finite external data")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = _prev
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # convenience operators; full set lives in the module-level functions
    def __add__(self, other):
        return ew_binary("add", self, _wrap(other))

    def __radd__(self, other):
        return ew_binary("add", _wrap(other), self)

    def __sub__(self, other):
        return ew_binary("sub", self, _wrap(other))

    def __rsub__(self, other):
        return ew_binary("sub", _wrap(other), self)

    def __mul__(self, other):
        return ew_binary("mul", self, _wrap(other))

    def __rmul__(self, other):
        return ew_binary("mul", _wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return reduce(self, "sum")

    def mean(self):
        return reduce(self, "mean")

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, inputs, backward_fn):
    """Build a graph node; gradient tracking is inherited from the inputs."""
    req = any(t.requires_grad for t in inputs)
    return Tensor(
        data,
        requires_grad=req,
        _prev=tuple(inputs) if req else (),
        _backward=backward_fn if req else None,
    )


def _accum(t, g):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def ew_binary(op, a, b):
    """Elementwise add/sub/mul; shapes must match or one side is rank-0."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeMismatchError(
            f"elementwise {op}: shapes {a.shape} and {b.shape} are not compatible"
        )

    def reduce_to(g, t):
        # rank-0 operand broadcast against an array: sum the gradient
        return g.sum() if t.ndim == 0 and g.ndim != 0 else g

    if op == "add":
        out = a.data + b.data

        def bwd(g):
            _accum(a, reduce_to(g, a))
            _accum(b, reduce_to(g, b))

    elif op == "sub":
        out = a.data - b.data

        def bwd(g):
            _accum(a, reduce_to(g, a))
            _accum(b, reduce_to(-g, b))

    elif op == "mul":
        out = a.data * b.data

        def bwd(g):
            _accum(a, reduce_to(g * b.data, a))
            _accum(b, reduce_to(g * a.data, b))

    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _node(out, (a, b), bwd)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"matmul: inner dimensions of {a.shape} and {b.shape} do not agree"
        )

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bwd)


def transpose(a):
    if a.ndim != 2:
        raise ShapeMismatchError(f"transpose expects a matrix, got shape {a.shape}")

    def bwd(g):
        _accum(a, g.T)

    return _node(a.data.T.copy(), (a,), bwd)


def reshape(a, shape):
    orig = a.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bwd)


def reduce(a, kind):
    """Reduce to a rank-0 node usable as a backward() root."""
    if kind == "sum":
        out = a.data.sum()

        def bwd(g):
            _accum(a, np.full_like(a.data, float(g)))

    elif kind == "mean":
        out = a.data.mean()
        n = a.data.size

        def bwd(g):
            _accum(a, np.full_like(a.data, float(g) / n))

    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# activations


_ALPHA_DEFAULT = 0.2


def activation(a, kind, alpha=_ALPHA_DEFAULT):
    """Elementwise nonlinearity.  relu/abs derivative at exactly 0 is 0."""
    x = a.data
    if kind == "identity":
        out, dfn = x, lambda: np.ones_like(x)
    elif kind == "relu":
        out, dfn = np.maximum(x, 0.0), lambda: (x > 0).astype(np.float64)
    elif kind == "leaky_relu":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"leaky_relu slope must be in (0, 1), got {alpha}")
        out = np.where(x > 0, x, alpha * x)
        dfn = lambda: np.where(x > 0, 1.0, alpha)
    elif kind == "softplus":
        out = np.logaddexp(0.0, x)
        dfn = lambda: 1.0 / (1.0 + np.exp(-x))
    elif kind == "abs":
        out, dfn = np.abs(x), lambda: np.sign(x)
    elif kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-x))
        out, dfn = s, lambda: s * (1.0 - s)
    else:
        raise ValueError(f"unknown activation {kind!r}")

    def bwd(g):
        _accum(a, g * dfn())

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    """Cross-correlation geometry for d spatial dimensions."""

    kernel: tuple
    stride: tuple
    pad: tuple
    in_channels: int
    out_channels: int

    def out_shape(self, spatial):
        out = tuple(
            (n + 2 * p - k) // s + 1
            for n, p, k, s in zip(spatial, self.pad, self.kernel, self.stride)
        )
        if any(o < 1 for o in out):
            raise ShapeMismatchError(
                f"kernel {self.kernel} with pad {self.pad} exceeds input extents {spatial}"
            )
        return out


def conv_nd(x, w, spec):
    """Cross-correlate x [C_in, s...] with w [C_out, C_in, k...], zero padded."""
    spatial = x.shape[1:]
    if x.shape[0] != spec.in_channels or w.shape != (
        spec.out_channels,
        spec.in_channels,
    ) + tuple(spec.kernel):
        raise ShapeMismatchError(
            f"conv spec {spec} inconsistent with x {x.shape}, w {w.shape}"
        )
    oshape = spec.out_shape(spatial)
    if any(spec.pad):
        xp = np.zeros(
            (x.shape[0],) + tuple(n + 2 * p for n, p in zip(spatial, spec.pad))
        )
        xp[(slice(None),) + tuple(slice(p, p + n) for p, n in zip(spec.pad, spatial))] = x.data
    else:
        xp = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv_forward(xp, wd, spec.stride, oshape)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            gxp = kernels.conv_backward_input(g, wd, spec.stride, xp.shape)
            crop = (slice(None),) + tuple(
                slice(p, p + n) for p, n in zip(spec.pad, spatial)
            )
            _accum(x, gxp[crop])
        if w.requires_grad:
            _accum(w, kernels.conv_backward_weight(g, xp, spec.stride, wd.shape))

    return _node(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# upsampling


def _linear_axis_plan(n, f):
    """Clamped-edge source indices/weights for linear upsampling by factor f."""
    j = np.arange(n * f, dtype=np.float64)
    src = np.clip((j + 0.5) / f - 0.5, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = src - i0
    return i0, i1, 1.0 - w1, w1


def upsample_nd(x, factors, mode="nearest"):
    """Upsample spatial extents of x [C, s...] by integer factors."""
    spatial = x.shape[1:]
    factors = tuple(int(f) for f in factors)
    if len(factors) != len(spatial) or any(f < 1 for f in factors):
        raise ValueError(f"upsample factors {factors} invalid for spatial {spatial}")
    if mode not in ("nearest", "linear"):
        raise ValueError(f"unknown upsample mode {mode!r}")

    if mode == "nearest":
        out = x.data
        for ax, f in enumerate(factors, start=1):
            if f > 1:
                out = np.repeat(out, f, axis=ax)

        def bwd(g):
            for ax, f in reversed(list(enumerate(factors, start=1))):
                if f > 1:
                    shp = list(g.shape)
                    shp[ax] //= f
                    g = g.reshape(shp[:ax] + [shp[ax], f] + shp[ax + 1 :]).sum(
                        axis=ax + 1
                    )
            _accum(x, g)

    else:
        plans = [
            _linear_axis_plan(n, f) if f > 1 else None
            for n, f in zip(spatial, factors)
        ]
        out = x.data
        for ax, plan in enumerate(plans, start=1):
            if plan is None:
                continue
            i0, i1, w0, w1 = plan
            sh = [1] * out.ndim
            sh[ax] = -1
            out = np.take(out, i0, axis=ax) * w0.reshape(sh) + np.take(
                out, i1, axis=ax
            ) * w1.reshape(sh)

        def bwd(g):
            for ax, plan in reversed(list(enumerate(plans, start=1))):
                if plan is None:
                    continue
                i0, i1, w0, w1 = plan
                sh = [1] * g.ndim
                sh[ax] = -1
                shp = list(g.shape)
                shp[ax] = shp[ax] // factors[ax - 1]
                gsrc = np.zeros(shp)
                np.add.at(
                    gsrc, (slice(None),) * ax + (i0,), g * w0.reshape(sh)
                )
                np.add.at(
                    gsrc, (slice(None),) * ax + (i1,), g * w1.reshape(sh)
                )
                g = gsrc
            _accum(x, g)

    return _node(out, (x,), bwd)


def add_channel_bias(x, b):
    """Add a per-channel bias b [C] to x [C, s...]."""
    c = x.shape[0]
    if b.shape != (c,):
        raise ShapeMismatchError(f"bias shape {b.shape} does not match {c} channels")
    csh = (c,) + (1,) * (x.ndim - 1)
    axes = tuple(range(1, x.ndim))

    def bwd(g):
        _accum(x, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=axes) if axes else g)

    return _node(x.data + b.data.reshape(csh), (x, b), bwd)


# ---------------------------------------------------------------------------
# normalization


def normalize_channels(x, gain, bias, eps=1e-5):
    """Per-channel standardization over spatial positions, then affine."""
    c = x.shape[0]
    if gain.shape != (c,) or bias.shape != (c,):
        raise ShapeMismatchError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match {c} channels"
        )
    if x.data[0].size <= 1 and eps == 0.0:
        raise ValueError("single-element channels require eps > 0")
    axes = tuple(range(1, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    csh = (c,) + (1,) * (x.ndim - 1)
    out = gain.data.reshape(csh) * xhat + bias.data.reshape(csh)

    def bwd(g):
        if bias.requires_grad:
            _accum(bias, g.sum(axis=axes))
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=axes))
        if x.requires_grad:
            gh = g * gain.data.reshape(csh)
            m1 = gh.mean(axis=axes, keepdims=True)
            m2 = (gh * xhat).mean(axis=axes, keepdims=True)
            _accum(x, inv * (gh - m1 - xhat * m2))

    return _node(out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# backward driver


def backward(loss):
    """Populate .grad on every requires_grad node reachable from loss."""
    if loss.ndim != 0:
        raise ShapeMismatchError(
            f"backward root must be rank-0, got shape {loss.shape}"
        )
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in visited:
                stack.append((p, False))
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
