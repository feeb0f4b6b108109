"""
Dense double-precision tensors with define-by-run reverse-mode differentiation.

Every operation returns a new ``Tensor``. When a ``GradientTape`` is active and
one of the inputs requires a gradient, the operation appends a record holding
its inputs, its output and a local backward rule. ``GradientTape.backward``
replays the records in reverse execution order and accumulates the result into
the ``grad`` of every ``Parameter`` that took part.

Broadcasting is restricted to exact shape matches and a vector added to (or
multiplied into) every row of a matrix.
"""
import contextlib
import logging
import math
import threading
from collections import OrderedDict

import numpy as np

from .exceptions import ConfigError, NumericError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Evaluate without recording, even inside an enclosing tape."""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """
    Learnable tensor. ``decay`` marks whether weight decay applies to it.
    """

    def __init__(self, value, name, decay=True):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.decay = decay
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={list(self.shape)})"


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """
    Ordered record of the operations executed while the tape is active.

    Usage::

        with GradientTape() as tape:
            loss = model.loss(batch)
        tape.backward(loss)
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, output, inputs, backward):
        output.requires_grad = True
        output.tape = self
        self.records.append(_Record(output, inputs, backward))

    def backward(self, loss):
        """
        Accumulate dLoss/dParam into the ``grad`` of every parameter reached.

        Gradients add to whatever the parameters already hold, so calling this
        twice on the same loss doubles each gradient.

        Raises:
            ShapeError: If ``loss`` is not a scalar recorded on this tape.
        """
        if loss.shape != ():
            raise ShapeError(f"backward() needs a scalar loss, got shape {list(loss.shape)}")
        if loss.tape is not self:
            raise ShapeError("backward() needs a loss recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        reached = OrderedDict()
        for record in reversed(self.records):
            upstream = grads.pop(id(record.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
                if isinstance(tensor, Parameter):
                    reached[key] = tensor

        for key, param in reached.items():
            param.grad += grads[key]


def backward(loss):
    """Run backward on the tape that produced ``loss``."""
    if loss.tape is None:
        raise ShapeError("backward() needs a loss produced on a gradient tape")
    loss.tape.backward(loss)


def _result(data, inputs, backward_rule):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_rule)
    return out


def constant(data):
    return Tensor(data, requires_grad=False)


def as_tensor(value):
    return value if isinstance(value, Tensor) else constant(value)


# Initialisation and parameter registry

INIT_SCHEMES = ("zeros", "uniform", "glorot")


def init_param(shape, scheme, rng=None, name="param", low=-0.05, high=0.05, store=None, decay=True):
    """
    Create a parameter of ``shape`` initialised by ``scheme``.

    Glorot draws uniformly in +-sqrt(6 / (fan_in + fan_out)) where a matrix is
    read as (fan_out x fan_in) and a vector uses its length for both.

    Raises:
        ShapeError: On an empty shape or a non-positive dimension.
        ConfigError: On an unknown scheme or ``low >= high``, or a random
            scheme without ``rng``.
    """
    shape = tuple(int(d) for d in shape)
    if not shape or any(d <= 0 for d in shape):
        raise ShapeError(f"invalid parameter shape {list(shape)} for {name}")

    if scheme in ("uniform", "glorot") and rng is None:
        raise ConfigError(f"{scheme} init for {name} needs an rng")

    if scheme == "zeros":
        value = np.zeros(shape, dtype=DTYPE)
    elif scheme == "uniform":
        if not low < high:
            raise ConfigError(f"uniform init for {name} needs low < high, got ({low}, {high})")
        value = rng.uniform(low, high, size=shape)
    elif scheme == "glorot":
        fan_out = shape[0]
        fan_in = shape[-1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        value = rng.uniform(-bound, bound, size=shape)
    else:
        raise ConfigError(f"unknown init scheme {scheme!r}, expected one of {INIT_SCHEMES}")

    param = Parameter(value, name, decay=decay)
    if store is not None:
        store.add(param)
    return param


class ParameterStore:
    """Name-ordered registry of every parameter of a model."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, param):
        if param.name in self._params:
            raise ConfigError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def create(self, name, shape, scheme, rng=None, **kwargs):
        return init_param(shape, scheme, rng=rng, name=name, store=self, **kwargs)

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def zero_grad(self):
        zero_grad(self._params.values())

    def num_values(self):
        return sum(p.data.size for p in self._params.values())

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self._params.items())

    def load_state_dict(self, state):
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise ShapeError(
                f"parameter sets differ: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for name, value in state.items():
            param = self._params[name]
            value = np.asarray(value, dtype=DTYPE)
            if value.shape != param.shape:
                raise ShapeError(
                    f"parameter {name} has shape {list(param.shape)}, got {list(value.shape)}"
                )
            param.data[...] = value


def zero_grad(params):
    for param in params:
        param.zero_grad()


# Operations

def _broadcast_kind(a_shape, b_shape, op):
    if a_shape == b_shape:
        return
    if len(a_shape) == 2 and len(b_shape) == 1 and a_shape[1] == b_shape[0]:
        return
    if len(b_shape) == 2 and len(a_shape) == 1 and b_shape[1] == a_shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {list(a_shape)} and {list(b_shape)}")


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    a_data, b_data = a.data, b.data

    def rule(g):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, (a, b), rule)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind(a.shape, b.shape, "add")
    a_shape, b_shape = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result(a.data + b.data, (a, b), rule)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind(a.shape, b.shape, "sub")
    a_shape, b_shape = a.shape, b.shape

    def rule(g):
        return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

    return _result(a.data - b.data, (a, b), rule)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_kind(a.shape, b.shape, "mul")
    a_data, b_data = a.data, b.data

    def rule(g):
        return _unbroadcast(g * b_data, a_data.shape), _unbroadcast(g * a_data, b_data.shape)

    return _result(a_data * b_data, (a, b), rule)


def scale(x, factor):
    x = as_tensor(x)
    factor = float(factor)
    return _result(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid_array(values):
    values = np.asarray(values, dtype=DTYPE)
    damped = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + damped), damped / (1.0 + damped))


def sigmoid(x):
    x = as_tensor(x)
    out = sigmoid_array(x.data)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "scale": scale,
}


def elementwise(op, *operands):
    """Dispatch one of add, sub, mul, tanh, sigmoid, scale by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ndim = tensors[0].ndim
    if ndim == 0:
        raise ShapeError("concat needs at least one dimension")
    axis = axis % ndim
    reference = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != reference[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(
                f"concat along axis {axis}: mismatched shapes {list(reference)} and {list(t.shape)}"
            )
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), rule)


def logsumexp_array(values, axis=None):
    """Stable log(sum(exp(values))) computed as m + log(sum(exp(values - m)))."""
    values = np.asarray(values, dtype=DTYPE)
    if values.size == 0:
        raise ShapeError("logsumexp of an empty tensor")
    peak = np.max(values, axis=axis, keepdims=True)
    total = peak + np.log(np.sum(np.exp(values - peak), axis=axis, keepdims=True))
    if axis is None:
        return total.reshape(())
    return np.squeeze(total, axis=axis)


def logsumexp(x, axis=None):
    x = as_tensor(x)
    out = logsumexp_array(x.data, axis=axis)
    x_data = x.data

    def rule(g):
        if axis is None:
            return (g * np.exp(x_data - out),)
        expanded = np.expand_dims(out, axis)
        return (np.expand_dims(g, axis) * np.exp(x_data - expanded),)

    return _result(out, (x,), rule)


def reduce_sum(x, axis=None):
    x = as_tensor(x)
    shape = x.shape

    def rule(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(x.data, axis=axis), (x,), rule)


def gather(x, index):
    """
    Advanced indexing ``x[index]``; ``index`` is a tuple of integer arrays.
    Repeated indices accumulate their gradients.
    """
    x = as_tensor(x)
    index = tuple(np.asarray(i, dtype=np.intp) for i in index)
    for dim, positions in enumerate(index):
        if positions.size and (positions.min() < -x.shape[dim] or positions.max() >= x.shape[dim]):
            raise ShapeError(f"gather: index out of range for axis {dim} of size {x.shape[dim]}")
    shape = x.shape

    def rule(g):
        grad = np.zeros(shape, dtype=DTYPE)
        np.add.at(grad, index, g)
        return (grad,)

    return _result(x.data[index], (x,), rule)


def take_rows(x, rows):
    return gather(x, (rows,))


def narrow(x, axis, start, length):
    x = as_tensor(x)
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis {axis} of size {x.shape[axis]}")
    slicer = [slice(None)] * x.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)
    shape = x.shape

    def rule(g):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[slicer] = g
        return (grad,)

    return _result(x.data[slicer], (x,), rule)


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {list(x.shape)}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,))


def masked_softmax(scores, allowed):
    """
    Row-wise softmax restricted to the ``allowed`` entries.

    Disallowed entries get weight 0; a row with no allowed entry is all zeros.
    """
    scores = as_tensor(scores)
    allowed = np.asarray(allowed, dtype=bool)
    if allowed.shape != scores.shape or scores.ndim != 2:
        raise ShapeError(
            f"masked_softmax: mask {list(allowed.shape)} does not match scores {list(scores.shape)}"
        )
    peak = np.max(np.where(allowed, scores.data, -np.inf), axis=1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    weights = np.where(allowed, np.exp(np.where(allowed, scores.data - peak, 0.0)), 0.0)
    denom = weights.sum(axis=1, keepdims=True)
    out = np.divide(weights, denom, out=np.zeros_like(weights), where=denom > 0)

    def rule(g):
        return (out * (g - np.sum(out * g, axis=1, keepdims=True)),)

    return _result(out, (scores,), rule)


def dropout(x, rate, rng, training):
    """Inverted dropout; the identity in eval mode or at rate 0."""
    if not training or rate <= 0.0:
        return x
    x = as_tensor(x)
    keep = rng.random(x.shape) >= rate
    return mul(x, constant(keep / (1.0 - rate)))


def check_finite(tensor, what="value"):
    if not np.all(np.isfinite(tensor.data)):
        raise NumericError(f"non-finite {what}")


# Gradient checking

def _evaluate(f):
    with no_tape():
        return float(f().data)


def grad_check_report(f, params, eps=1e-5):
    """
    Compare backward() against central finite differences, per parameter.

    Returns:
        Ordered mapping parameter name -> max relative error
        |a - n| / max(1e-8, |a| + |n|) over the parameter's coordinates.

    Raises:
        NumericError: If a loss or gradient is not finite.
    """
    params = list(params)
    zero_grad(params)
    with GradientTape() as tape:
        loss = f()
    check_finite(loss, "loss")
    if loss.tape is tape:
        tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    report = OrderedDict()
    for param, grads in zip(params, analytic):
        if not np.all(np.isfinite(grads)):
            raise NumericError(f"non-finite gradient for {param.name}")
        flat = param.data.reshape(-1)
        flat_grads = grads.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _evaluate(f)
            flat[i] = original - eps
            minus = _evaluate(f)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            if not math.isfinite(numeric):
                raise NumericError(f"non-finite finite difference for {param.name}[{i}]")
            exact = float(flat_grads[i])
            error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
            worst = max(worst, error)
        report[param.name] = worst
    return report


def grad_check(f, params, eps=1e-5):
    report = grad_check_report(f, params, eps=eps)
    return max(report.values(), default=0.0)
