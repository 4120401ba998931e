"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op appends a record to a thread-local tape; execution
order doubles as a topological order, so `backward` replays the tape back
to front and accumulates vector-Jacobian products into the `grad` buffer of
every tensor that requires gradients.  One tape per training run; tensors
are treated as immutable once recorded.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, ndtr

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_creator")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._creator = None

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

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeRecord:
    __slots__ = ("op", "output", "vjps")

    def __init__(self, op, output, vjps):
        self.op = op
        self.output = output
        self.vjps = vjps  # [(input tensor, fn(out_grad) -> in_grad), ...]


class Tape:
    """Ordered log of differentiable ops executed on this thread."""

    def __init__(self):
        self.records = []

    def reset(self):
        self.records.clear()

    def __len__(self):
        return len(self.records)


_LOCAL = threading.local()


def _stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = [Tape()]
        _LOCAL.stack = stack
    return stack


def tape():
    """The active tape for this thread, or None inside `no_grad`."""
    return _stack()[-1]


def reset_tape():
    """Empty the active tape (gradient graph reset between training steps)."""
    active = tape()
    if active is not None:
        active.reset()


@contextmanager
def scoped_tape():
    """Record onto a fresh tape, restoring the previous one on exit."""
    fresh = Tape()
    stack = _stack()
    stack.append(fresh)
    try:
        yield fresh
    finally:
        stack.pop()


@contextmanager
def no_grad():
    """Suspend recording; ops executed inside return constant tensors."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _result(op, data, vjps):
    active = tape()
    if active is None or not vjps:
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    record = TapeRecord(op, out, vjps)
    out._creator = record
    active.records.append(record)
    return out


def _vjps(*pairs):
    return [(t, fn) for t, fn in pairs if t.requires_grad]


def _unbroadcast(g, shape):
    """Sum a gradient down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Accumulate d(loss)/d(ancestor) into every requires_grad ancestor.

    The loss must be a scalar recorded on the active tape.  Repeated calls
    without a tape reset keep accumulating into the grad buffers.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    flow = {}

    def send(tensor, g):
        if tensor._creator is not None:
            key = id(tensor)
            if key in flow:
                flow[key] = flow[key] + g
            else:
                flow[key] = g
        elif tensor.requires_grad:
            tensor.grad += g

    send(loss, np.ones_like(loss.data))
    active = tape()
    if active is None:
        return
    for record in reversed(active.records):
        g = flow.pop(id(record.output), None)
        if g is None:
            continue
        record.output.grad += g
        for inp, fn in record.vjps:
            send(inp, fn(g))


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        "add",
        a.data + b.data,
        _vjps(
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        "sub",
        a.data - b.data,
        _vjps(
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        "mul",
        a.data * b.data,
        _vjps(
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        "div",
        a.data / b.data,
        _vjps(
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
        ),
    )


def scale(a, factor):
    """Multiply by a plain Python scalar."""
    a = as_tensor(a)
    factor = float(factor)
    return _result("scale", a.data * factor, _vjps((a, lambda g: g * factor)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    return _result(
        "matmul",
        a.data @ b.data,
        _vjps(
            (a, lambda g: _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)),
            (b, lambda g: _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)),
        ),
    )


def maximum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data >= b.data  # ties route to the first operand
    return _result(
        "maximum",
        np.maximum(a.data, b.data),
        _vjps(
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ),
    )


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    mask = a.data <= b.data
    return _result(
        "minimum",
        np.minimum(a.data, b.data),
        _vjps(
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ),
    )


def where(mask, a, b):
    """Select `a` where the constant boolean mask holds, else `b`."""
    mask = np.asarray(mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        "where",
        np.where(mask, a.data, b.data),
        _vjps(
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ),
    )


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(x, axis=None):  # noqa: A001 - numpy-style name, use module-qualified
    x = as_tensor(x)
    if axis is None:
        return _result("sum", x.data.sum(), _vjps((x, lambda g: np.full(x.data.shape, g))))
    return _result(
        "sum",
        x.data.sum(axis=axis),
        _vjps((x, lambda g: np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())),
    )


def mean(x, axis=None):
    x = as_tensor(x)
    if axis is None:
        n = x.data.size
        return _result("mean", x.data.mean(), _vjps((x, lambda g: np.full(x.data.shape, g / n))))
    n = x.data.shape[axis]
    return _result(
        "mean",
        x.data.mean(axis=axis),
        _vjps((x, lambda g: np.broadcast_to(np.expand_dims(g, axis) / n, x.data.shape).copy())),
    )


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    vjps = []
    offset = 0
    for t in tensors:
        start, stop = offset, offset + t.data.shape[axis]
        offset = stop

        def piece(g, _start=start, _stop=stop):
            index = [slice(None)] * g.ndim
            index[axis] = slice(_start, _stop)
            return g[tuple(index)]

        vjps.append((t, piece))
    return _result("concat", data, _vjps(*vjps))


def reshape(x, shape):
    x = as_tensor(x)
    return _result(
        "reshape",
        x.data.reshape(shape),
        _vjps((x, lambda g: g.reshape(x.data.shape))),
    )


def flatten(x):
    """Collapse to a 1-D vector in row-major order."""
    return reshape(x, (-1,))


def swap_last_axes(x):
    x = as_tensor(x)
    return _result(
        "swap_last_axes",
        np.swapaxes(x.data, -1, -2),
        _vjps((x, lambda g: np.swapaxes(g, -1, -2))),
    )


def take_axis1(x, index):
    """Select one slice along axis 1, e.g. token `index` of a (batch, T, d) tensor."""
    x = as_tensor(x)

    def back(g):
        z = np.zeros_like(x.data)
        z[:, index] = g
        return z

    return _result("take_axis1", x.data[:, index].copy(), _vjps((x, back)))


def take_rows(x, rows):
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)

    def back(g):
        z = np.zeros_like(x.data)
        np.add.at(z, rows, g)
        return z

    return _result("take_rows", x.data[rows].copy(), _vjps((x, back)))


def scatter_rows(values, rows, n_rows):
    """Place rows of `values` at positions `rows` of an otherwise-zero matrix."""
    values = as_tensor(values)
    rows = np.asarray(rows, dtype=np.intp)
    data = np.zeros((n_rows,) + values.data.shape[1:], dtype=np.float64)
    data[rows] = values.data
    return _result("scatter_rows", data, _vjps((values, lambda g: g[rows].copy())))


def gather_pairs(x, rows, cols):
    """Pick x[rows[i], cols[i]] for each i, returning a vector."""
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def back(g):
        z = np.zeros_like(x.data)
        np.add.at(z, (rows, cols), g)
        return z

    return _result("gather_pairs", x.data[rows, cols].copy(), _vjps((x, back)))


def take_last(x, idx):
    """Gather along the last axis of a 2-D tensor with integer indices (B, k)."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError("take_last expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])[:, None]

    def back(g):
        z = np.zeros_like(x.data)
        np.add.at(z, (rows, idx), g)
        return z

    return _result("take_last", np.take_along_axis(x.data, idx, axis=-1), _vjps((x, back)))


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def leaky_relu(x, negative_slope=0.01):
    x = as_tensor(x)
    pos = x.data >= 0
    return _result(
        "leaky_relu",
        np.where(pos, x.data, negative_slope * x.data),
        _vjps((x, lambda g: g * np.where(pos, 1.0, negative_slope))),
    )


def softplus(x):
    x = as_tensor(x)
    return _result(
        "softplus",
        np.logaddexp(0.0, x.data),
        _vjps((x, lambda g: g * expit(x.data))),
    )


def normal_cdf(x):
    """Standard normal CDF, differentiable (derivative is the pdf)."""
    x = as_tensor(x)
    return _result(
        "normal_cdf",
        ndtr(x.data),
        _vjps((x, lambda g: g * np.exp(-0.5 * x.data * x.data) / _SQRT_2PI)),
    )


def dropout(x, p, rng=None, training=False):
    """Inverted dropout: scales kept units by 1/(1-p) so eval is the identity."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return _result("dropout", x.data * keep, _vjps((x, lambda g: g * keep)))


def softmax(x, axis=-1):
    """Softmax along `axis`; -inf entries map to exactly 0 by convention."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(
        "softmax",
        s,
        _vjps((x, lambda g: s * (g - (g * s).sum(axis=axis, keepdims=True)))),
    )


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xn = (x.data - mu) * istd
    reduce_axes = tuple(range(x.data.ndim - 1))

    def back_x(g):
        gx = g * gain.data
        return istd * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xn * (gx * xn).mean(axis=-1, keepdims=True)
        )

    return _result(
        "layer_norm",
        xn * gain.data + bias.data,
        _vjps(
            (x, back_x),
            (gain, lambda g: (g * xn).sum(axis=reduce_axes)),
            (bias, lambda g: g.sum(axis=reduce_axes)),
        ),
    )


def cross_entropy_from_logits(logits, labels):
    """Mean negative log-likelihood of integer labels under row softmax."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("cross_entropy_from_logits expects (B, C) logits and (B,) labels")
    n = logits.shape[0]
    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    ez = np.exp(z)
    lse = np.log(ez.sum(axis=-1)) + m[:, 0]
    nll = lse - logits.data[np.arange(n), labels]

    def back(g):
        p = ez / ez.sum(axis=-1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return p * (g / n)

    return _result("cross_entropy", np.float64(nll.mean()), _vjps((logits, back)))


# ---------------------------------------------------------------------------
# 2-D spatial ops (leading batch axes allowed, single filter/map semantics)
# ---------------------------------------------------------------------------

def conv2d(x, filt, stride=1):
    """Valid cross-correlation of the last two axes with a 2-D filter."""
    x, filt = as_tensor(x), as_tensor(filt)
    if x.ndim < 2 or filt.ndim != 2:
        raise ValueError("conv2d expects (..., H, W) input and a 2-D filter")
    if stride < 1:
        raise ValueError("stride must be a positive integer")
    h_in, w_in = x.shape[-2], x.shape[-1]
    h_f, w_f = filt.shape
    if h_f > h_in or w_f > w_in:
        raise ValueError(f"filter {filt.shape} larger than input {(h_in, w_in)}")
    h_out = (h_in - h_f) // stride + 1
    w_out = (w_in - w_f) // stride + 1

    def window(arr, di, dj):
        return arr[..., di : di + stride * (h_out - 1) + 1 : stride,
                   dj : dj + stride * (w_out - 1) + 1 : stride]

    data = np.zeros(x.shape[:-2] + (h_out, w_out), dtype=np.float64)
    for di in range(h_f):
        for dj in range(w_f):
            data += filt.data[di, dj] * window(x.data, di, dj)

    def back_x(g):
        z = np.zeros_like(x.data)
        for di in range(h_f):
            for dj in range(w_f):
                window(z, di, dj)[...] += filt.data[di, dj] * g
        return z

    def back_f(g):
        df = np.empty_like(filt.data)
        for di in range(h_f):
            for dj in range(w_f):
                df[di, dj] = np.sum(g * window(x.data, di, dj))
        return df

    return _result("conv2d", data, _vjps((x, back_x), (filt, back_f)))


def avg_pool2d(x, kernel):
    """Non-overlapping window means over the last two axes.

    Kernel 1 is the identity; a kernel at least min(H, W) degrades to the
    global average over the full map.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise ValueError("avg_pool2d expects (..., H, W) input")
    kernel = int(kernel)
    if kernel < 1:
        raise ValueError("pooling kernel must be >= 1")
    h_in, w_in = x.shape[-2], x.shape[-1]
    if kernel == 1:
        return _result("avg_pool2d", x.data.copy(), _vjps((x, lambda g: g)))
    if kernel >= min(h_in, w_in):
        data = x.data.mean(axis=(-2, -1), keepdims=True)
        scale_ = 1.0 / (h_in * w_in)
        return _result(
            "avg_pool2d",
            data,
            _vjps((x, lambda g: np.broadcast_to(g * scale_, x.data.shape).copy())),
        )
    h_out, w_out = h_in // kernel, w_in // kernel
    lead = x.shape[:-2]
    crop = x.data[..., : h_out * kernel, : w_out * kernel]
    data = crop.reshape(lead + (h_out, kernel, w_out, kernel)).mean(axis=(-3, -1))

    def back(g):
        z = np.zeros_like(x.data)
        block = np.broadcast_to(
            g[..., :, None, :, None] / (kernel * kernel),
            lead + (h_out, kernel, w_out, kernel),
        )
        z[..., : h_out * kernel, : w_out * kernel] = block.reshape(
            lead + (h_out * kernel, w_out * kernel)
        )
        return z

    return _result("avg_pool2d", data, _vjps((x, back)))


# ---------------------------------------------------------------------------
# parameter init and gradient checking
# ---------------------------------------------------------------------------

def glorot(rng, n_in, n_out, shape=None):
    """Uniform init in +-sqrt(6/(fan_in+fan_out)); the package-wide weight scheme."""
    limit = math.sqrt(6.0 / (n_in + n_out))
    if shape is None:
        shape = (n_in, n_out)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape):
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    ok: bool


def grad_check(f, params, h=1e-5, tol=1e-5, rel_floor=1e-4):
    """Compare tape gradients of f() against central finite differences.

    `f` must be a pure scalar function of the tensors in `params`; any
    randomness inside must be internally re-seeded so repeated calls agree.
    Relative error per coordinate is |tape - numeric| / max(|tape|,
    |numeric|, rel_floor); the floor keeps near-zero gradients from being
    judged on finite-difference roundoff.  Returns one result per parameter
    with the max relative error and an ok flag against `tol`.
    """
    items = list(params.items())
    for _, p in items:
        if not p.requires_grad:
            raise ValueError("grad_check parameters must require gradients")
        p.zero_grad()
    with scoped_tape():
        loss = f()
        backward(loss)
    analytic = {name: p.grad.copy() for name, p in items}
    results = []
    with no_grad():
        for name, p in items:
            flat = p.data.reshape(-1)
            numeric = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(f().data)
                flat[i] = orig - h
                f_minus = float(f().data)
                flat[i] = orig
                numeric[i] = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), rel_floor)
            max_rel = float((np.abs(a - numeric) / denom).max()) if flat.size else 0.0
            results.append(GradCheckResult(name, max_rel, max_rel <= tol))
    return results
