"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: each operation computes its value immediately
and records a closure for the reverse pass. ``Tensor.backward()`` on a
scalar output accumulates ``d(output)/d(leaf)`` into ``.grad`` of every
reachable tensor with ``requires_grad`` set. Gradients accumulate across
backward calls (call ``zero_grad`` between optimization steps).

All values are float64. Stochastic operations (gumbel sampling, jitter)
take pre-drawn noise arrays as plain inputs, so a built graph is always
deterministic and checkable by finite differences.
"""

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "ShapeError", "as_tensor", "set_deterministic", "deterministic",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "sqrt",
    "absolute", "softplus", "sigmoid", "relu", "reduce_sum", "mean",
    "reshape", "concat", "softmax_cross_entropy", "gumbel_softmax",
    "conv2d", "maxpool2d", "upsample2x", "hash_grid_interp",
    "composite_weights", "finite_diff_check",
]

_DETERMINISTIC = False
_ADJ = None  # active per-pass adjoint map while a backward() is running


def set_deterministic(flag):
    """Force batch-size-invariant matmul accumulation (slower, bitwise)."""
    global _DETERMINISTIC
    _DETERMINISTIC = bool(flag)


def deterministic():
    return _DETERMINISTIC


def _mm(a, b):
    if _DETERMINISTIC:
        return np.einsum("ij,jk->ik", a, b, optimize=False)
    return a @ b


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent for an operation."""


class Tensor:
    """A node in the computation graph: value, gradient accumulator, op tag."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Accumulate gradients of this scalar into all reachable nodes.

        Each call propagates through a fresh adjoint map and then adds the
        result into .grad, so two calls without zero_grad double the grads.
        """
        global _ADJ
        if self.value.size != 1:
            raise ShapeError(f"backward requires a scalar output, got shape {self.value.shape}")
        order = _toposort(self)
        adj = {}
        prev, _ADJ = _ADJ, adj
        try:
            self._accumulate(np.ones_like(self.value))
            for node in reversed(order):
                g = adj.get(id(node))
                if g is not None and node._backward is not None:
                    node._backward(g)
        finally:
            _ADJ = prev
        for node in order:
            g = adj.get(id(node))
            if g is not None and node.requires_grad:
                if node.grad is None:
                    node.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    node.grad += g

    def _accumulate(self, g):
        if _ADJ is not None:
            key = id(self)
            cur = _ADJ.get(key)
            _ADJ[key] = g if cur is None else cur + g
        elif self.grad is None:
            self.grad = np.zeros_like(self.value)
            self.grad += g
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    # operator sugar; scalars and arrays are promoted to constant tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _node(op, value, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, op=op, parents=tuple(parents), backward=backward)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"op {op}: operands have incompatible shapes "
                         f"{a.value.shape} and {b.value.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.value.shape))

    return _node("add", a.value + b.value, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.value.shape))

    return _node("sub", a.value - b.value, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _node("mul", a.value * b.value, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _node("div", a.value / b.value, (a, b), backward)


def neg(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(-g)

    return _node("neg", -a.value, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"op matmul: operands have incompatible shapes "
                         f"{a.value.shape} and {b.value.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_mm(g, b.value.T))
        if b.requires_grad:
            b._accumulate(_mm(a.value.T, g))

    return _node("matmul", _mm(a.value, b.value), (a, b), backward)


# ---------------------------------------------------------------------------
# nonlinearities

def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)

    def backward(g):
        a._accumulate(g * out)

    return _node("exp", out, (a,), backward)


def log(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.value)

    return _node("log", np.log(a.value), (a,), backward)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)

    def backward(g):
        a._accumulate(g * (0.5 / out))

    return _node("sqrt", out, (a,), backward)


def absolute(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * np.sign(a.value))

    return _node("abs", np.abs(a.value), (a,), backward)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * _sigmoid(a.value))

    return _node("softplus", np.logaddexp(0.0, a.value), (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.value)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return _node("sigmoid", out, (a,), backward)


def relu(a):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * (a.value > 0))

    return _node("relu", np.maximum(a.value, 0.0), (a,), backward)


# ---------------------------------------------------------------------------
# shape ops and reductions

def reduce_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            gg = np.reshape(g, (1,) * a.value.ndim)
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg, a.value.shape).copy())

    return _node("reduce-sum", out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[i] for i in np.atleast_1d(axis)])
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.reshape(a.value.shape))

    return _node("reshape", a.value.reshape(shape), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node("concat", out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# classification losses and discrete sampling

def softmax_cross_entropy(logits, targets):
    """Per-example cross-entropy between logits (..., K) and int targets (...)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.value.shape[:-1]:
        raise ShapeError(f"op softmax-cross-entropy: operands have incompatible shapes "
                         f"{logits.value.shape} and {targets.shape}")
    z = logits.value
    m = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=-1, keepdims=True)
    lse = (m + np.log(sez)).squeeze(-1)
    picked = np.take_along_axis(z, targets[..., None].astype(np.int64), axis=-1).squeeze(-1)
    soft = ez / sez

    def backward(g):
        gz = soft.copy()
        np.put_along_axis(gz, targets[..., None].astype(np.int64),
                          np.take_along_axis(gz, targets[..., None].astype(np.int64), axis=-1) - 1.0,
                          axis=-1)
        logits._accumulate(gz * g[..., None])

    return _node("softmax-cross-entropy", lse - picked, (logits,), backward)


def gumbel_softmax(logits, noise, tau, hard=True):
    """Gumbel-softmax over the last axis with straight-through hard sampling.

    noise : pre-drawn standard gumbel noise, same shape as logits.
    hard=True returns the one-hot argmax in the forward pass while the
    backward pass uses the soft relaxation's Jacobian (straight-through);
    hard=False returns the soft sample itself.
    """
    logits = as_tensor(logits)
    if float(tau) <= 0:
        raise ValueError(f"gumbel temperature must be positive, got {tau}")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != logits.value.shape:
        raise ShapeError(f"op gumbel-softmax: operands have incompatible shapes "
                         f"{logits.value.shape} and {noise.shape}")
    z = (logits.value + noise) / float(tau)
    m = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - m)
    soft = ez / ez.sum(axis=-1, keepdims=True)
    if hard:
        out = np.zeros_like(soft)
        np.put_along_axis(out, soft.argmax(axis=-1)[..., None], 1.0, axis=-1)
    else:
        out = soft

    def backward(g):
        dot = (g * soft).sum(axis=-1, keepdims=True)
        logits._accumulate(soft * (g - dot) / float(tau))

    return _node("gumbel-softmax-straight-through", out, (logits,), backward)


# ---------------------------------------------------------------------------
# 2D convolution stack (NHWC layout)

def _pad_image(x, ph, pw, wrap_cols):
    """Zero-pad rows; wrap (circular) or zero-pad columns."""
    x = np.pad(x, ((0, 0), (ph, ph), (0, 0), (0, 0)))
    if pw == 0:
        return x
    if wrap_cols:
        return np.concatenate([x[:, :, -pw:], x, x[:, :, :pw]], axis=2)
    return np.pad(x, ((0, 0), (0, 0), (pw, pw), (0, 0)))


def conv2d(x, w, b, wrap_cols=True):
    """2D convolution: x (B,H,W,Cin), w (kh,kw,Cin,Cout), b (Cout,).

    Stride 1, 'same' output size; rows are zero-padded, columns wrap
    azimuthally by default. Implemented as kh*kw shifted matmuls.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.value.ndim != 4 or w.value.ndim != 4 or x.value.shape[3] != w.value.shape[2]:
        raise ShapeError(f"op 2D-convolution: operands have incompatible shapes "
                         f"{x.value.shape} and {w.value.shape}")
    B, H, W, Cin = x.value.shape
    kh, kw, _, Cout = w.value.shape
    ph, pw = kh // 2, kw // 2
    xpad = _pad_image(x.value, ph, pw, wrap_cols)
    out = np.zeros((B, H, W, Cout))
    for i in range(kh):
        for j in range(kw):
            sl = xpad[:, i:i + H, j:j + W, :].reshape(-1, Cin)
            out += _mm(sl, w.value[i, j]).reshape(B, H, W, Cout)
    out += b.value

    def backward(g):
        gflat = g.reshape(-1, Cout)
        if b.requires_grad:
            b._accumulate(gflat.sum(axis=0))
        if w.requires_grad:
            gw = np.empty_like(w.value)
            for i in range(kh):
                for j in range(kw):
                    sl = xpad[:, i:i + H, j:j + W, :].reshape(-1, Cin)
                    gw[i, j] = _mm(sl.T, gflat)
            w._accumulate(gw)
        if x.requires_grad:
            gxp = np.zeros_like(xpad)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + H, j:j + W, :] += _mm(gflat, w.value[i, j].T).reshape(B, H, W, Cin)
            gx = gxp[:, ph:ph + H, :, :]
            if pw:
                if wrap_cols:
                    core = gx[:, :, pw:pw + W, :].copy()
                    core[:, :, :pw] += gx[:, :, W + pw:, :]
                    core[:, :, -pw:] += gx[:, :, :pw, :]
                    gx = core
                else:
                    gx = gx[:, :, pw:pw + W, :]
            x._accumulate(gx)

    return _node("2D-convolution", out, (x, w, b), backward)


def maxpool2d(x):
    """2x2 max pooling (NHWC); H and W must be even. First max wins ties."""
    x = as_tensor(x)
    B, H, W, C = x.value.shape
    if H % 2 or W % 2:
        raise ShapeError(f"op max-pool: spatial dims must be even, got {x.value.shape}")
    blocks = x.value.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4)
    flat = blocks.reshape(B, H // 2, W // 2, C, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1).squeeze(-1)

    def backward(g):
        gb = np.zeros((B, H // 2, W // 2, C, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(B, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, H, W, C)
        x._accumulate(gx)

    return _node("max-pool", out, (x,), backward)


def upsample2x(x):
    """Nearest-neighbor 2x upsampling (NHWC)."""
    x = as_tensor(x)
    out = x.value.repeat(2, axis=1).repeat(2, axis=2)

    def backward(g):
        B, H2, W2, C = g.shape
        gx = g.reshape(B, H2 // 2, 2, W2 // 2, 2, C).sum(axis=(2, 4))
        x._accumulate(gx)

    return _node("nearest-resize", out, (x,), backward)


# ---------------------------------------------------------------------------
# field-specific fused primitives (backed by lidarfield.kernels)

def hash_grid_interp(tables, x01, res):
    """Trilinear hash-grid gather: tables (L,T,F) Tensor, x01 (P,3), res (L,).

    Differentiable w.r.t. the tables only; x01 is plain sample geometry.
    """
    tables = as_tensor(tables)
    x01 = np.asarray(x01, dtype=np.float64)
    res = np.asarray(res, dtype=np.int64)
    out = kernels.hash_grid_forward(tables.value, x01, res)

    def backward(g):
        tables._accumulate(kernels.hash_grid_backward(g, x01, res, tables.value.shape))

    return _node("trilinear-gather", out, (tables,), backward)


def composite_weights(sdelta):
    """Volume-rendering weights w_i = T_i (1 - exp(-sigma_i delta_i)).

    sdelta (R, N) must be nonnegative; raises on negative density input.
    """
    sdelta = as_tensor(sdelta)
    if np.any(sdelta.value < 0):
        raise ValueError("composite_weights: negative sigma*delta encountered")
    w, trans = kernels.composite_weights_forward(sdelta.value)

    def backward(g):
        sdelta._accumulate(kernels.composite_weights_backward(g, sdelta.value, w, trans))

    return _node("composite-weights", w, (sdelta,), backward)


# ---------------------------------------------------------------------------
# gradient verification oracle

def finite_diff_check(loss_fn, params, eps=1e-5, max_coords=100, seed=0):
    """Max relative error between analytic and central-difference gradients.

    loss_fn rebuilds and returns the scalar loss Tensor on each call (the
    graph must be deterministic; stochastic ops take fixed noise inputs).
    Up to max_coords coordinates are sampled across all params. The error
    per coordinate is |analytic - central| / max(|analytic|, |central|, 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = loss_fn()
    if out.value.size != 1 or not np.isfinite(out.value).all():
        raise ValueError(f"loss must be a finite scalar, got shape {out.value.shape}")
    for p in params:
        p.zero_grad()
    out.backward()

    sizes = [p.value.size for p in params]
    total = int(np.sum(sizes))
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(max_coords, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat_ix in picks:
        pi = int(np.searchsorted(bounds, flat_ix, side="right"))
        local = int(flat_ix - (bounds[pi - 1] if pi else 0))
        p = params[pi]
        flat = p.value.reshape(-1)
        old = flat[local]
        flat[local] = old + eps
        lp = float(loss_fn().value)
        flat[local] = old - eps
        lm = float(loss_fn().value)
        flat[local] = old
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise ValueError("loss became non-finite during finite differencing")
        fd = (lp - lm) / (2.0 * eps)
        analytic = p.grad.reshape(-1)[local] if p.grad is not None else 0.0
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
        worst = max(worst, err)
    return worst
