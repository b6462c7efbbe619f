"""Reverse-mode automatic differentiation on dense float64 arrays.

A Tensor wraps a numpy array plus an optional backward closure and the
tensors it was computed from. Running an op while gradients are enabled
records the closure; backward() topologically sorts the recorded graph,
seeds the output gradient with ones and accumulates into every tensor
that needs a gradient. The graph references are dropped afterwards, so
each forward build is single use.

Design limits, on purpose:
  * storage is always float64 and C-contiguous,
  * elementwise ops broadcast only scalar-vs-array or equal shapes
    (bias addition is its own op, add_bias),
  * matmul is strictly 2-d by 2-d,
  * gradients are plain numpy arrays, so no higher-order derivatives.
"""

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, sampling)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_values(x):
    # ascontiguousarray would promote python scalars to shape (1,), which
    # breaks the scalar-vs-array broadcasting rule, so keep 0-d as 0-d
    a = np.asarray(x, dtype=np.float64)
    if a.ndim and not a.flags["C_CONTIGUOUS"]:
        a = np.ascontiguousarray(a)
    return a


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad=False):
        self.values = _as_values(values)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        if self.values.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values.copy())

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all real work happens in the module-level ops
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
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a recorded op; "
                            "multiply by a reciprocal instead")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _ensure_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _needs_grad(t):
    return t.requires_grad or bool(t._parents)


def _accumulate(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _record(values, parents, backward_fn):
    out = Tensor(values)
    if _GRAD_ENABLED and any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_elementwise(a, b, op):
    # scalar (0-d) against anything is fine; otherwise shapes must match
    if a.ndim != 0 and b.ndim != 0 and a.shape != b.shape:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} do not match "
            "(only scalar-vs-array or equal-shape operands are allowed)"
        )


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b):
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_elementwise(a, b, "add")
    out_values = a.values + b.values

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g if a.ndim else np.sum(g))
        if _needs_grad(b):
            _accumulate(b, g if b.ndim else np.sum(g))

    return _record(out_values, (a, b), backward_fn)


def sub(a, b):
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_elementwise(a, b, "sub")
    out_values = a.values - b.values

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g if a.ndim else np.sum(g))
        if _needs_grad(b):
            _accumulate(b, -g if b.ndim else -np.sum(g))

    return _record(out_values, (a, b), backward_fn)


def mul(a, b):
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    _check_elementwise(a, b, "mul")
    out_values = a.values * b.values

    def backward_fn(g):
        if _needs_grad(a):
            ga = g * b.values
            _accumulate(a, ga if a.ndim else np.sum(ga))
        if _needs_grad(b):
            gb = g * a.values
            _accumulate(b, gb if b.ndim else np.sum(gb))

    return _record(out_values, (a, b), backward_fn)


def neg(a):
    a = _ensure_tensor(a)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, -g)

    return _record(-a.values, (a,), backward_fn)


def exp(a):
    a = _ensure_tensor(a)
    out_values = np.exp(a.values)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g * out_values)

    return _record(out_values, (a,), backward_fn)


def log(a):
    a = _ensure_tensor(a)
    if np.any(a.values <= 0.0):
        raise ValueError("log: input must be strictly positive")
    out_values = np.log(a.values)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g / a.values)

    return _record(out_values, (a,), backward_fn)


def tanh(a):
    a = _ensure_tensor(a)
    out_values = np.tanh(a.values)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g * (1.0 - out_values * out_values))

    return _record(out_values, (a,), backward_fn)


def relu(a):
    a = _ensure_tensor(a)
    mask = a.values > 0.0  # subgradient at 0 is 0
    # np.maximum rather than where(mask, ...) so NaN propagates instead of
    # being silently flushed to zero; divergence detection depends on it
    out_values = np.maximum(a.values, 0.0)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g * mask)

    return _record(out_values, (a,), backward_fn)


# ---------------------------------------------------------------------------
# matmul and structural ops

def matmul(a, b):
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(
            f"matmul requires 2-d operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    out_values = a.values @ b.values

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g @ b.values.T)
        if _needs_grad(b):
            _accumulate(b, a.values.T @ g)

    return _record(out_values, (a, b), backward_fn)


def add_bias(x, b):
    """Row-wise bias addition: [m, n] + [n]."""
    x, b = _ensure_tensor(x), _ensure_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out_values = x.values + b.values

    def backward_fn(g):
        if _needs_grad(x):
            _accumulate(x, g)
        if _needs_grad(b):
            _accumulate(b, g.sum(axis=0))

    return _record(out_values, (x, b), backward_fn)


def concat_cols(a, b):
    """Column concatenation of two matrices with equal row counts."""
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols: incompatible shapes {a.shape} and {b.shape}")
    split = a.shape[1]
    out_values = np.concatenate([a.values, b.values], axis=1)

    def backward_fn(g):
        if _needs_grad(a):
            _accumulate(a, g[:, :split])
        if _needs_grad(b):
            _accumulate(b, g[:, split:])

    return _record(out_values, (a, b), backward_fn)


def col_slice(x, start, stop):
    """Contiguous column slice of a matrix."""
    x = _ensure_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"col_slice expects a matrix, got shape {x.shape}")
    out_values = x.values[:, start:stop]

    def backward_fn(g):
        if _needs_grad(x):
            gx = np.zeros_like(x.values)
            gx[:, start:stop] = g
            _accumulate(x, gx)

    return _record(out_values, (x,), backward_fn)


def take_cols(x, index):
    """Column gather, x[:, index]. With a permutation index this is a
    differentiable column shuffle."""
    x = _ensure_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 2 or index.ndim != 1:
        raise ValueError("take_cols expects a matrix and a 1-d index")
    out_values = x.values[:, index]

    def backward_fn(g):
        if _needs_grad(x):
            gx = np.zeros_like(x.values)
            np.add.at(gx.T, index, g.T)
            _accumulate(x, gx)

    return _record(out_values, (x,), backward_fn)


def center_rows(x):
    """Subtract each row's mean: x - mean(x, axis=1, keepdims=True).

    Linear and symmetric, so the backward pass applies the same centering
    to the incoming gradient.
    """
    x = _ensure_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"center_rows expects a matrix, got shape {x.shape}")
    out_values = x.values - x.values.mean(axis=1, keepdims=True)

    def backward_fn(g):
        if _needs_grad(x):
            _accumulate(x, g - g.mean(axis=1, keepdims=True))

    return _record(out_values, (x,), backward_fn)


def log_softmax(x):
    """Row-wise log-softmax of a logit matrix, computed stably."""
    x = _ensure_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"log_softmax expects a matrix, got shape {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    out_values = shifted - log_norm

    def backward_fn(g):
        if _needs_grad(x):
            softmax = np.exp(out_values)
            _accumulate(x, g - softmax * g.sum(axis=1, keepdims=True))

    return _record(out_values, (x,), backward_fn)


# ---------------------------------------------------------------------------
# reductions

def _check_axis(a, axis):
    if axis is not None and not (-a.ndim <= axis < a.ndim):
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")


def tsum(a, axis=None):
    a = _ensure_tensor(a)
    _check_axis(a, axis)
    out_values = a.values.sum(axis=axis)

    def backward_fn(g):
        if _needs_grad(a):
            if axis is None:
                _accumulate(a, np.broadcast_to(g, a.shape))
            else:
                _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _record(out_values, (a,), backward_fn)


def tmean(a, axis=None):
    a = _ensure_tensor(a)
    _check_axis(a, axis)
    out_values = a.values.mean(axis=axis)
    count = a.size if axis is None else a.shape[axis]

    def backward_fn(g):
        if _needs_grad(a):
            if axis is None:
                _accumulate(a, np.broadcast_to(g / count, a.shape))
            else:
                _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape) / count)

    return _record(out_values, (a,), backward_fn)


def l1_norm(a, axis=None):
    """Sum of absolute values. The subgradient at 0 is taken to be 0."""
    a = _ensure_tensor(a)
    _check_axis(a, axis)
    out_values = np.abs(a.values).sum(axis=axis)

    def backward_fn(g):
        if _needs_grad(a):
            sign = np.sign(a.values)
            if axis is None:
                _accumulate(a, sign * g)
            else:
                _accumulate(a, sign * np.expand_dims(g, axis))

    return _record(out_values, (a,), backward_fn)


def l2_norm_sq(a, axis=None):
    """Sum of squares (no square root, so it is smooth everywhere)."""
    a = _ensure_tensor(a)
    _check_axis(a, axis)
    out_values = np.square(a.values).sum(axis=axis)

    def backward_fn(g):
        if _needs_grad(a):
            if axis is None:
                _accumulate(a, 2.0 * a.values * g)
            else:
                _accumulate(a, 2.0 * a.values * np.expand_dims(g, axis))

    return _record(out_values, (a,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss):
    """Run reverse accumulation from a scalar loss.

    Gradients land on every reachable tensor that requires them (or sits
    on a path to one) and add to whatever was already in .grad, so call
    zero_grad on parameters between steps. Graph links are released on
    the way out; a second backward through the same ops raises.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.values.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss._parents:
        raise ValueError("backward on a tensor with no recorded operations")

    # iterative postorder; recursion would cap graph depth
    order = []
    state = {}  # id -> False while open, True once placed in order
    stack = [loss]
    while stack:
        node = stack.pop()
        nid = id(node)
        st = state.get(nid)
        if st is None:
            state[nid] = False
            stack.append(node)
            for p in node._parents:
                if id(p) not in state:
                    stack.append(p)
        elif st is False:
            state[nid] = True
            order.append(node)

    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    for node in order:
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# gradient verification

def finite_diff_check(f, params, h=1e-5):
    """Compare backward() gradients of f against central differences.

    f is a zero-argument callable returning a scalar Tensor built from
    the given parameter tensors; it must be deterministic (freeze any
    randomness before calling). Returns the worst relative error

        |analytic - numeric| / (|analytic| + 1e-8)

    over every coordinate of every parameter.
    """
    if isinstance(params, Tensor):
        params = [params]
    params = list(params)
    if not params:
        raise ValueError("finite_diff_check needs at least one parameter")

    for p in params:
        p.zero_grad()
    backward(f())
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros_like(p.values))
        else:
            analytic.append(np.array(p.grad, dtype=np.float64))

    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.values.reshape(-1)   # view into the parameter
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                hi = float(f().values.reshape(()))
                flat[i] = saved - h
                lo = float(f().values.reshape(()))
                flat[i] = saved
                numeric = (hi - lo) / (2.0 * h)
                rel = abs(gflat[i] - numeric) / (abs(gflat[i]) + 1e-8)
                if rel > worst:
                    worst = rel
    return worst
