"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new tensor holding references to its parents plus a
closure that maps the upstream gradient to per-parent contributions.  The
graph is therefore implicit in the tensors themselves; `topo_order` linearizes
it and `backward` walks it once in reverse, accumulating gradients into every
tensor that requires them.  Repeated backward calls without `zero_grads`
keep accumulating, which is what mini-batch loops rely on.

There is no implicit broadcasting: elementwise ops demand equal shapes, and
the only scalar shortcut is `scale`.  Row-wise helpers (`row_scale`,
`row_bias`, `sum_rows`) exist so blocks never have to broadcast silently.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def op(self):
        """Name of the operation that produced this tensor (None for leaves)."""
        fn = self.backward_fn
        return fn.__qualname__.split(".", 1)[0] if fn is not None else None

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


def _from_op(data, parents, backward_fn):
    # Subgraphs that cannot influence any gradient are pruned on the spot.
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    _check_same_shape("add", a, b)
    return _from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape("sub", a, b)
    return _from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape("mul", a, b)
    return _from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    _check_same_shape("div", a, b)
    return _from_op(a.data / b.data, (a, b),
                    lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def scale(a, s):
    s = float(s)
    return _from_op(a.data * s, (a,), lambda g: (g * s,))


def neg(a):
    return scale(a, -1.0)


def relu(a):
    mask = a.data > 0.0  # gradient at exactly zero is defined as zero
    return _from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def stable_sigmoid(x):
    """Overflow-free logistic on a raw ndarray."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    y = stable_sigmoid(a.data)
    return _from_op(y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a):
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    y = np.sqrt(a.data)
    return _from_op(y, (a,), lambda g: (g * 0.5 / y,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through only where no clamping happened."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.data.shape} as {shape}")
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.data.shape}")
    return _from_op(np.ascontiguousarray(a.data.T), (a,),
                    lambda g: (np.ascontiguousarray(g.T),))


def concat_channels(a, b):
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise DimensionError(f"concat_channels: expected c*h*w operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1:] != b.data.shape[1:]:
        raise DimensionError(f"concat_channels: spatial dims differ, {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[0]

    def backward_fn(g):
        return g[:ca], g[ca:]

    return _from_op(np.concatenate((a.data, b.data), axis=0), (a, b), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _from_op(a.data @ b.data, (a, b), backward_fn)


def _im2col(xp, k, stride, oh, ow):
    c = xp.shape[0]
    cols = np.empty((c, k, k, oh, ow), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di:di + stride * oh:stride, dj:dj + stride * ow:stride]
    return cols.reshape(c * k * k, oh * ow)


def conv2d(x, kernel, stride=1, padding=0):
    """2-D cross-correlation of a c_in*h*w map with a c_out*c_in*k*k kernel stack."""
    if x.data.ndim != 3:
        raise DimensionError(f"conv2d: expected c*h*w input, got shape {x.data.shape}")
    if kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d kernel, got shape {kernel.data.shape}")
    c_out, c_in, kh, kw = kernel.data.shape
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ContractError(f"conv2d: kernel size must be odd, got {kh}")
    if x.data.shape[0] != c_in:
        raise DimensionError(f"conv2d: input has {x.data.shape[0]} channels, kernel expects {c_in}")
    stride = int(stride)
    padding = int(padding)
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: bad stride/padding {stride}/{padding}")
    _, h, w = x.data.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d: {h}x{w} input too small for k={kh}, padding={padding}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, stride, oh, ow)
    w2 = kernel.data.reshape(c_out, c_in * kh * kw)
    out = (w2 @ cols).reshape(c_out, oh, ow)

    def backward_fn(g):
        g2 = g.reshape(c_out, oh * ow)
        gk = (g2 @ cols.T).reshape(kernel.data.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(c_in, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, di:di + stride * oh:stride, dj:dj + stride * ow:stride] += dcols[:, di, dj]
            gx = dxp[:, padding:padding + h, padding:padding + w] if padding else dxp
        return gx, gk

    return _from_op(out, (x, kernel), backward_fn)


# ---------------------------------------------------------------------------
# resampling


def upsample_nearest(a, factor):
    if a.data.ndim != 3:
        raise DimensionError(f"upsample_nearest: expected c*h*w input, got shape {a.data.shape}")
    factor = int(factor)
    if factor < 1:
        raise ContractError(f"upsample_nearest: factor must be >= 1, got {factor}")
    c, h, w = a.data.shape
    out = np.repeat(np.repeat(a.data, factor, axis=1), factor, axis=2)

    def backward_fn(g):
        return (g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),)

    return _from_op(out, (a,), backward_fn)


def _bilinear_axis(n_in, factor):
    src = (np.arange(n_in * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    return i0, i1, 1.0 - w1, w1


def upsample_bilinear(a, factor):
    if a.data.ndim != 3:
        raise DimensionError(f"upsample_bilinear: expected c*h*w input, got shape {a.data.shape}")
    factor = int(factor)
    if factor < 1:
        raise ContractError(f"upsample_bilinear: factor must be >= 1, got {factor}")
    c, h, w = a.data.shape
    r0, r1, wr0, wr1 = _bilinear_axis(h, factor)
    c0, c1, wc0, wc1 = _bilinear_axis(w, factor)
    rows = a.data[:, r0, :] * wr0[None, :, None] + a.data[:, r1, :] * wr1[None, :, None]
    out = rows[:, :, c0] * wc0[None, None, :] + rows[:, :, c1] * wc1[None, None, :]

    def backward_fn(g):
        grows = np.zeros((c, h * factor, w), dtype=np.float64)
        np.add.at(grows.transpose(2, 0, 1), c0, (g * wc0[None, None, :]).transpose(2, 0, 1))
        np.add.at(grows.transpose(2, 0, 1), c1, (g * wc1[None, None, :]).transpose(2, 0, 1))
        gx = np.zeros((c, h, w), dtype=np.float64)
        np.add.at(gx.transpose(1, 0, 2), r0, (grows * wr0[None, :, None]).transpose(1, 0, 2))
        np.add.at(gx.transpose(1, 0, 2), r1, (grows * wr1[None, :, None]).transpose(1, 0, 2))
        return (gx,)

    return _from_op(out, (a,), backward_fn)


# ---------------------------------------------------------------------------
# softmax and reductions


def softmax_rows(x):
    """Row-wise softmax of a matrix, stabilized by subtracting each row maximum."""
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows: expected a matrix, got shape {x.data.shape}")
    if x.data.size == 0:
        return _from_op(x.data.copy(), (x,), lambda g: (g.copy(),))
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g):
        gy = g * y
        return (gy - y * gy.sum(axis=1, keepdims=True),)

    return _from_op(y, (x,), backward_fn)


def log_softmax_rows(x):
    if x.data.ndim != 2:
        raise DimensionError(f"log_softmax_rows: expected a matrix, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse

    def backward_fn(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return _from_op(y, (x,), backward_fn)


def sum_all(x):
    """Reduce every element to a single scalar tensor."""
    return _from_op(np.asarray(x.data.sum()), (x,),
                    lambda g: (np.full(x.data.shape, g.flat[0]),))


def sum_rows(x):
    if x.data.ndim != 2:
        raise DimensionError(f"sum_rows: expected a matrix, got shape {x.data.shape}")
    return _from_op(x.data.sum(axis=1, keepdims=True), (x,),
                    lambda g: (np.repeat(g, x.data.shape[1], axis=1),))


def row_scale(x, s):
    """Multiply row i of a matrix by s[i] (explicit stand-in for broadcasting)."""
    if x.data.ndim != 2 or s.data.ndim != 1 or s.data.shape[0] != x.data.shape[0]:
        raise DimensionError(f"row_scale: shapes {x.data.shape} and {s.data.shape} do not line up")
    col = s.data[:, None]

    def backward_fn(g):
        return g * col, (g * x.data).sum(axis=1)

    return _from_op(x.data * col, (x, s), backward_fn)


def row_bias(x, b):
    """Add b[i] to every element of row i."""
    if x.data.ndim != 2 or b.data.ndim != 1 or b.data.shape[0] != x.data.shape[0]:
        raise DimensionError(f"row_bias: shapes {x.data.shape} and {b.data.shape} do not line up")

    def backward_fn(g):
        return g, g.sum(axis=1)

    return _from_op(x.data + b.data[:, None], (x, b), backward_fn)


# ---------------------------------------------------------------------------
# backward pass


def topo_order(root):
    """Parents-first linearization of the graph reachable from `root`.

    Each tensor appears exactly once, after all of its parents.
    """
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(t) into t.grad for every reachable requires_grad tensor.

    The flowing gradients live in per-call buffers, so calling backward twice on
    the same graph adds the same contribution twice (linearity), instead of
    compounding stale values.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = topo_order(loss)
    flowing = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        for parent, contrib in zip(node.parents, node.backward_fn(g)):
            if contrib is None or not parent.requires_grad:
                continue
            pid = id(parent)
            have = flowing.get(pid)
            flowing[pid] = contrib if have is None else have + contrib


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def grad_check(f, x, step=1e-3):
    """Worst relative error between analytic and central-difference gradients.

    `f` maps the tensor `x` to a scalar tensor and must be deterministic.  The
    error at each coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out)
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad.copy()
    x.grad = None

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x).item()
        flat[i] = orig - step
        fm = f(x).item()
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * step)

    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
