"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it; ``backward`` walks
the recorded graph in reverse topological order and accumulates gradients on
leaf tensors that require them. Every operation is a plain function taking
tensors (or arrays) and returning a tensor.
"""
import contextlib
import contextvars

import numpy as np

from .errors import InvalidInputError, ShapeError, UndefinedMeanError

_dtype = contextvars.ContextVar("versa_dtype", default=np.float32)
_grad_enabled = contextvars.ContextVar("versa_grad_enabled", default=True)
_debug = contextvars.ContextVar("versa_debug", default=False)


@contextlib.contextmanager
def precision(dtype):
    """Evaluate new tensors with ``dtype`` inside the block."""
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def debug_mode(enabled=True):
    """Check every op output for non-finite values inside the block."""
    token = _debug.set(enabled)
    try:
        yield
    finally:
        _debug.reset(token)


def default_dtype():
    return _dtype.get()


class Tensor:
    """N-dimensional array with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """
        Accumulate gradients of this tensor into every reachable leaf.

        Args:
            grad (np.ndarray): Upstream gradient; defaults to ones (scalar loss)
        """
        if grad is None:
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _topological_order(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents, backward, op):
    if _debug.get() and not np.all(np.isfinite(data)):
        raise InvalidInputError(f"{op}: produced non-finite values")
    needs_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
    if not needs_grad:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def div(a, b):
    """
    Elementwise ``a / b`` with broadcasting; either side may be a Tensor.

    Raises:
        InvalidInputError: If any divisor entry is zero
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0):
        raise InvalidInputError(f"div: divisor of shape {b.shape} contains zeros")
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
                   "div")


def matmul(a, b):
    """Batched matrix product with numpy broadcasting of leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}")
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inverse),), "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(out, tuple(tensors), backward, "concat")


def index(x, key):
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _result(x.data[key], (x,), backward, "index")


def abs(x):
    x = as_tensor(x)
    return _result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x):
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def gelu(x):
    """GELU, tanh approximation."""
    x = as_tensor(x)
    c = np.sqrt(2.0 / np.pi)
    inner = c * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(inner)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        d_inner = c * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * d_inner),)

    return _result(out, (x,), backward, "gelu")


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _result(y, (x,), backward, "log_softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine shape {gamma.shape} does not match width {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        n = x.shape[-1]
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * np.sum(gx_hat * xhat, axis=-1, keepdims=True))
        reduce_axes = tuple(range(x.ndim - 1))
        return gx, np.sum(g * xhat, axis=reduce_axes), np.sum(g, axis=reduce_axes)

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def embedding(weight, ids):
    """Row lookup ``weight[ids]``; ``ids`` is an integer array."""
    weight = as_tensor(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"embedding: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {weight.shape[0]})")

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _result(weight.data[ids], (weight,), backward, "embedding")


def _conv_windows(length, kernel, stride):
    n_out = (length - kernel) // stride + 1
    return np.arange(n_out) * stride


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """
    1-D convolution over channels-last sequences.

    Args:
        x (Tensor): (B, L, C_in)
        weight (Tensor): (K, C_in, C_out)
        bias (Tensor): (C_out,) or None
        stride (int): Step between windows
        padding (int): Zeros added at both ends

    Returns:
        Tensor: (B, L_out, C_out) with L_out = (L + 2p - K) // stride + 1
    """
    x, weight = as_tensor(x), as_tensor(weight)
    kernel, c_in, c_out = weight.shape
    if x.ndim != 3 or x.shape[-1] != c_in:
        raise ShapeError(f"conv1d: input {x.shape} does not match kernel {weight.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0)))
    if xp.shape[1] < kernel:
        raise ShapeError(f"conv1d: sequence of length {x.shape[1]} shorter than kernel {kernel}")
    starts = _conv_windows(xp.shape[1], kernel, stride)
    cols = np.stack([xp[:, starts + k, :] for k in range(kernel)], axis=2)
    flat_w = weight.data.reshape(kernel * c_in, c_out)
    out = cols.reshape(cols.shape[0], cols.shape[1], -1) @ flat_w
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gw = np.tensordot(cols.reshape(-1, kernel * c_in), g.reshape(-1, c_out), axes=(0, 0))
        gcols = (g @ flat_w.T).reshape(cols.shape)
        gxp = np.zeros_like(xp)
        for k in range(kernel):
            gxp[:, starts + k, :] += gcols[:, :, k, :]
        gx = gxp[:, padding:padding + x.shape[1], :]
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return _result(out, parents, backward, "conv1d")


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """
    Transposed 1-D convolution (adjoint of :func:`conv1d`).

    Args:
        x (Tensor): (B, L, C_in)
        weight (Tensor): (K, C_in, C_out)

    Returns:
        Tensor: (B, (L - 1) * stride - 2 * padding + K, C_out)
    """
    x, weight = as_tensor(x), as_tensor(weight)
    kernel, c_in, c_out = weight.shape
    if x.ndim != 3 or x.shape[-1] != c_in:
        raise ShapeError(f"conv_transpose1d: input {x.shape} does not match kernel {weight.shape}")
    length = x.shape[1]
    full_len = (length - 1) * stride + kernel
    out_len = full_len - 2 * padding
    if out_len <= 0:
        raise ShapeError(f"conv_transpose1d: padding {padding} leaves no output")
    positions = np.arange(length) * stride
    full = np.zeros((x.shape[0], full_len, c_out), dtype=x.data.dtype)
    for k in range(kernel):
        full[:, positions + k, :] += x.data @ weight.data[k]
    out = full[:, padding:padding + out_len, :]
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        gfull = np.zeros((g.shape[0], full_len, c_out), dtype=g.dtype)
        gfull[:, padding:padding + out_len, :] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        flat_x = x.data.reshape(-1, c_in)
        for k in range(kernel):
            gk = gfull[:, positions + k, :]
            gx += gk @ weight.data[k].T
            gw[k] = flat_x.T @ gk.reshape(-1, c_out)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return _result(out, parents, backward, "conv_transpose1d")


def stop_gradient(x):
    """Same values, no gradient flow."""
    return Tensor(as_tensor(x).data, op="stop_gradient")


def straight_through(z, values):
    """
    Forward ``values`` exactly, pass the gradient to ``z`` unchanged.

    Args:
        z (Tensor): Continuous input
        values (np.ndarray): Replacement values of the same shape
    """
    z = as_tensor(z)
    values = np.asarray(values)
    if values.shape != z.shape:
        raise ShapeError(f"straight_through: {values.shape} != {z.shape}")
    return _result(values, (z,), lambda g: (g,), "straight_through")


def softmax_cross_entropy(logits, targets, flags=None):
    """
    Mean negative log-likelihood over masked positions.

    Positions with flag 0 are scored; flag 1 positions contribute nothing.
    Without ``flags`` every position is scored.

    Args:
        logits (Tensor): (..., K)
        targets (np.ndarray): (...) integer class ids in [0, K)
        flags (np.ndarray): (...) 0/1 flags, same shape as ``targets``

    Returns:
        Tensor: Scalar loss

    Raises:
        InvalidInputError: If a target is outside [0, K)
        UndefinedMeanError: If no position is scored
    """
    logits = as_tensor(logits)
    k = logits.shape[-1]
    targets = np.asarray(targets).reshape(-1)
    if targets.size != logits.data.size // k:
        raise ShapeError(f"softmax_cross_entropy: {targets.size} targets for logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise InvalidInputError(f"targets must lie in [0, {k})")
    scored = np.ones(targets.size, dtype=bool) if flags is None else np.asarray(flags).reshape(-1) == 0
    count = int(scored.sum())
    if count == 0:
        raise UndefinedMeanError("no position is scored; mean is undefined")

    flat = logits.data.reshape(-1, k).astype(np.float64)
    shifted = flat - flat.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(targets.size)
    nll = -log_probs[rows, targets]
    loss = nll[scored].sum() / count

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, targets] -= 1.0
        grad *= scored[:, None] / count
        return ((g * grad).reshape(logits.shape).astype(logits.data.dtype),)

    return _result(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")


def autodiff_eval(graph, inputs, module=None):
    """
    Evaluate ``graph`` and return its output with a gradient function.

    Args:
        graph (callable): ``graph(**tensors)`` returning a Tensor
        inputs (dict): Input name to array
        module (Module): Optional module whose parameters also receive gradients

    Returns:
        tuple: (output Tensor, gradients) where ``gradients(upstream=None)``
        returns a dict with one entry per input name and per parameter name
    """
    tensors = {name: Tensor(value, requires_grad=True) for name, value in inputs.items()}
    output = graph(**tensors)

    def gradients(upstream=None):
        for t in tensors.values():
            t.zero_grad()
        if module is not None:
            module.zero_grad()
        output.backward(upstream)
        grads = {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for name, t in tensors.items()}
        if module is not None:
            grads.update(module.gradients())
        return grads

    return output, gradients


def finite_diff_check(graph, inputs, eps=1e-3, module=None):
    """
    Compare analytic gradients against central differences.

    The graph is evaluated in float64. For every input and parameter the
    relative error ``||analytic - central|| / (||central|| + 1e-8)`` is
    computed; the maximum is returned.

    Args:
        graph (callable): ``graph(**tensors)`` returning a scalar Tensor
        inputs (dict): Input name to array
        eps (float): Central-difference step
        module (Module): Optional module whose parameters are checked too

    Returns:
        float: Maximum relative gradient error
    """
    inputs = {name: np.asarray(v, dtype=np.float64) for name, v in inputs.items()}
    with precision(np.float64), _parameters_as(module, np.float64):
        _, gradients = autodiff_eval(graph, inputs, module=module)
        analytic = gradients()

        def evaluate():
            with no_grad():
                return float(graph(**{n: Tensor(v) for n, v in inputs.items()}).data)

        targets = dict(inputs)
        if module is not None:
            targets.update({name: p.data for name, p in module.named_parameters()})

        worst = 0.0
        for name, array in targets.items():
            numeric = np.zeros_like(array)
            flat, numeric_flat = array.reshape(-1), numeric.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = evaluate()
                flat[i] = original - eps
                minus = evaluate()
                flat[i] = original
                numeric_flat[i] = (plus - minus) / (2.0 * eps)
            error = np.linalg.norm(analytic[name] - numeric) / (np.linalg.norm(numeric) + 1e-8)
            worst = max(worst, float(error))
    return worst


@contextlib.contextmanager
def _parameters_as(module, dtype):
    if module is None:
        yield
        return
    saved = {}
    for name, p in module.named_parameters():
        saved[name] = p.data
        p.data = p.data.astype(dtype)
    try:
        yield
    finally:
        for name, p in module.named_parameters():
            p.data = saved[name]
