"""Small reverse-mode differentiation core on top of numpy.

Values are float64 numpy arrays wrapped in :class:`Node`. While a
:class:`GradProgram` is active, every operation appends one record holding
its inputs and a vector-Jacobian closure; :meth:`GradProgram.backward`
replays those records in reverse.  Outside a program the same functions
just compute values, which is what the finite-difference checker uses.

Operations work on vectors and also on leading batch axes, so a whole
minibatch of visits flows through one record per operation.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NonFiniteError, OracleViolationError, ShapeError

_ACTIVE = contextvars.ContextVar("carealgebra_grad_program", default=None)


class Node:
    """A value inside a computation. Constants have ``requires_grad`` False."""

    __slots__ = ("value", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


class Parameter(Node):
    """A trainable leaf whose gradient accumulates across backward passes."""

    __slots__ = ("grad", "name")

    def __init__(self, value, name=""):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


@dataclass
class _Record:
    out: Node
    inputs: tuple
    vjp: object


class GradProgram:
    """Ordered record of executed operations, replayable in reverse.

    Use as a context manager; operations executed inside the block are
    recorded here::

        with GradProgram() as prog:
            loss = some_loss(params)
        prog.backward(loss)
    """

    def __init__(self):
        self.records = []
        self._token = None

    def __enter__(self):
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, output, seed=1.0):
        """Accumulate d(seed * output)/d(parameter) into every reachable Parameter."""
        if not isinstance(output, Node):
            raise TypeError("backward expects a Node")
        seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.shape).copy()
        if isinstance(output, Parameter):
            output.grad += seed
            return
        grads = {id(output): seed}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.vjp(g)
            for node, gi in zip(rec.inputs, in_grads):
                if gi is None or not node.requires_grad:
                    continue
                if isinstance(node, Parameter):
                    node.grad += gi
                else:
                    key = id(node)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi


def active_program():
    return _ACTIVE.get()


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def record_op(value, inputs, vjp):
    """Wrap ``value`` as the output of a differentiable operation.

    ``vjp`` maps the output gradient to a tuple with one gradient (or None)
    per input.  This is the extension point for new operations.
    """
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        raise NonFiniteError("operation produced a non-finite value")
    needs = False
    for n in inputs:
        if n.requires_grad:
            needs = True
            break
    out = Node(value, requires_grad=needs)
    prog = _ACTIVE.get()
    if needs and prog is not None:
        prog.records.append(_Record(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, fn):
    try:
        with np.errstate(all="ignore"):  # record_op raises on non-finite results
            return fn(a.value, b.value)
    except ValueError:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return record_op(_binary(a, b, np.add), (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.shape, b.shape
    return record_op(_binary(a, b, np.subtract), (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return record_op(_binary(a, b, np.multiply), (a, b),
                     lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    q = _binary(a, b, np.divide)

    def vjp(g):
        ga = g / bv
        return _unbroadcast(ga, av.shape), _unbroadcast(-ga * q, bv.shape)

    return record_op(q, (a, b), vjp)


def scale(a, c):
    """Multiply by a Python scalar constant."""
    a = as_node(a)
    c = float(c)
    return record_op(a.value * c, (a,), lambda g: (g * c,))


def total(a, axis=None):
    """Sum over ``axis`` (all axes by default)."""
    a = as_node(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return record_op(a.value.sum(axis=axis), (a,), vjp)


def matvec(W, x):
    """Matrix-vector product ``W @ x``; ``x`` may carry leading batch axes.

    ``W`` has shape (m, n) and ``x`` shape (..., n); the result has shape
    (..., m).
    """
    W, x = as_node(W), as_node(x)
    if W.value.ndim != 2 or x.value.ndim < 1 or W.shape[1] != x.shape[-1]:
        raise ShapeError(f"matvec: matrix {W.shape} incompatible with vector {x.shape}")
    Wv, xv = W.value, x.value

    def vjp(g):
        gW = gx = None
        if W.requires_grad:
            gW = g.reshape(-1, Wv.shape[0]).T @ xv.reshape(-1, Wv.shape[1])
        if x.requires_grad:
            gx = g @ Wv
        return gW, gx

    return record_op(xv @ Wv.T, (W, x), vjp)


def affine(terms, bias=None):
    """Fused ``sum_k W_k @ x_k + bias`` over (matrix, batched vector) pairs."""
    terms = [(as_node(W), as_node(x)) for W, x in terms]
    inputs = [n for pair in terms for n in pair]
    out = None
    for W, x in terms:
        if W.value.ndim != 2 or W.shape[1] != x.shape[-1]:
            raise ShapeError(f"affine: matrix {W.shape} incompatible with vector {x.shape}")
        y = x.value @ W.value.T
        out = y if out is None else out + y
    if bias is not None:
        bias = as_node(bias)
        inputs.append(bias)
        out = out + bias.value
    bias_shape = None if bias is None else bias.shape

    def vjp(g):
        grads = []
        for W, x in terms:
            Wv, xv = W.value, x.value
            grads.append(g.reshape(-1, Wv.shape[0]).T @ xv.reshape(-1, Wv.shape[1]) if W.requires_grad else None)
            grads.append(g @ Wv if x.requires_grad else None)
        if bias_shape is not None:
            grads.append(_unbroadcast(g, bias_shape))
        return grads

    return record_op(out, inputs, vjp)


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., n) and ``b`` of shape (n, k) or (n,)."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if bv.ndim not in (1, 2) or av.ndim < 1 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} are incompatible")

    def vjp(g):
        ga = gb = None
        if bv.ndim == 2:
            if a.requires_grad:
                ga = g @ bv.T
            if b.requires_grad:
                gb = av.reshape(-1, bv.shape[0]).T @ g.reshape(-1, bv.shape[1])
        else:
            if a.requires_grad:
                ga = np.multiply.outer(g, bv)
            if b.requires_grad:
                gb = av.reshape(-1, bv.shape[0]).T @ np.reshape(g, -1)
        return ga, gb

    return record_op(av @ bv, (a, b), vjp)


def reshape(a, shape):
    a = as_node(a)
    old = a.shape
    return record_op(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def stack(nodes):
    """Stack equally shaped nodes along a new leading axis."""
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("stack needs at least one node")
    if len({n.shape for n in nodes}) != 1:
        raise ShapeError("stack: shapes differ")
    return record_op(np.stack([n.value for n in nodes]), tuple(nodes),
                     lambda g: tuple(g[k] for k in range(len(nodes))))


def norm(a):
    """Euclidean norm over the last axis. Zero vectors get subgradient 0."""
    a = as_node(a)
    av = a.value
    n = np.sqrt(np.sum(av * av, axis=-1))

    def vjp(g):
        safe = np.where(n > 0.0, n, 1.0)
        unit = np.where((n > 0.0)[..., None], av / safe[..., None], 0.0)
        return (np.asarray(g)[..., None] * unit,)

    return record_op(n, (a,), vjp)


def take(a, index):
    """Gather ``a[index]`` along the first axis (rows of a table)."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return record_op(a.value[index], (a,), vjp)


def masked_max(a, mask, axis=1):
    """Maximum over ``axis`` restricted to positions where ``mask`` is True.

    Gradient flows to the first maximising position only.
    """
    a = as_node(a)
    av = a.value
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), av.shape)
    if not np.all(mask.any(axis=axis)):
        raise ShapeError("masked_max: a slice has no valid position")
    filled = np.where(mask, av, -np.inf)
    arg = np.argmax(filled, axis=axis)
    out = np.take_along_axis(av, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def vjp(g):
        ga = np.zeros_like(av)
        np.put_along_axis(ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return record_op(out, (a,), vjp)


# ---------------------------------------------------------------------------
# componentwise nonlinearities


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_value(x):
    """Numerically stable logistic function on plain arrays."""
    return _sigmoid(np.asarray(x, dtype=np.float64))


def _fwd_bwd(kind):
    if kind == "sigmoid":
        def f(x):
            y = _sigmoid(x)
            return y, lambda g: g * y * (1.0 - y)
    elif kind == "tanh":
        def f(x):
            y = np.tanh(x)
            return y, lambda g: g * (1.0 - y * y)
    elif kind == "rectifier":
        def f(x):
            pos = x > 0.0
            return np.where(pos, x, 0.0), lambda g: np.where(pos, g, 0.0)
    elif kind == "square_shift":
        def f(x):
            s = 1.0 + x
            return s * s, lambda g: g * 2.0 * s
    elif kind == "identity":
        def f(x):
            return x.copy(), lambda g: g
    elif kind == "softplus":
        def f(x):
            return np.logaddexp(0.0, x), lambda g: g * _sigmoid(x)
    else:
        raise ConfigurationError(f"unknown elementwise kind {kind!r}")
    return f


ELEMENTWISE_KINDS = ("sigmoid", "tanh", "rectifier", "square_shift", "identity", "softplus")
_TABLE = {k: _fwd_bwd(k) for k in ELEMENTWISE_KINDS}


def elementwise(kind, x):
    """Apply a named scalar function componentwise.

    Kinds: sigmoid, tanh, rectifier, square_shift ``(1 + x)**2``, identity
    and softplus ``log(1 + exp(x))``.
    """
    try:
        f = _TABLE[kind]
    except KeyError:
        raise ConfigurationError(f"unknown elementwise kind {kind!r}") from None
    if not isinstance(x, Node):
        x = Node(x)
        if not np.isfinite(x.value).all():
            raise NonFiniteError(f"{kind}: non-finite input")
    y, back = f(x.value)
    return record_op(y, (x,), lambda g: (back(g),))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Per-parameter maximum relative error between analytic and numeric gradients."""

    tolerance: float
    step: float
    max_error: dict = field(default_factory=dict)
    worst_index: dict = field(default_factory=dict)

    @property
    def flagged(self):
        return [name for name, err in self.max_error.items() if err > self.tolerance]

    @property
    def passed(self):
        return not self.flagged

    @property
    def worst(self):
        return max(self.max_error.values(), default=0.0)

    def summary(self):
        lines = [f"{name}: {err:.3e}{'  FLAGGED' if err > self.tolerance else ''}"
                 for name, err in self.max_error.items()]
        return "\n".join(lines)


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def _scalar(v):
    return float(v.value if isinstance(v, Node) else v)


def grad_check(loss_fn, params, step=1e-5, tolerance=1e-6):
    """Compare reverse-mode gradients with central differences.

    ``loss_fn()`` must read the current values of ``params`` and return a
    scalar Node.  Every scalar entry of every parameter is perturbed by
    ``+-step``.  Parameter gradients are overwritten.
    """
    if step <= 0:
        raise ConfigurationError("step must be positive")
    params = list(params)
    first, second = _scalar(loss_fn()), _scalar(loss_fn())
    if first != second:
        raise OracleViolationError(
            f"loss_fn is not deterministic: {first!r} != {second!r}")

    for p in params:
        p.zero_grad()
    with GradProgram() as prog:
        out = loss_fn()
    prog.backward(out)

    report = GradCheckReport(tolerance=tolerance, step=step)
    for k, p in enumerate(params):
        name = p.name or f"param{k}"
        analytic = p.grad.copy()
        numeric = np.empty_like(analytic)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = _scalar(loss_fn())
            flat[i] = orig - step
            down = _scalar(loss_fn())
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2.0 * step)
        err = relative_error(analytic, numeric).reshape(-1)
        idx = int(np.argmax(err)) if err.size else 0
        report.max_error[name] = float(err[idx]) if err.size else 0.0
        report.worst_index[name] = idx
    return report
