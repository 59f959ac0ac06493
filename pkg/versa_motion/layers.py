"""Neural network layers built on :mod:`versa_motion.autograd`."""
import numpy as np

from . import autograd as ag
from .errors import ShapeError


class Parameter(ag.Tensor):
    """Trainable leaf tensor."""

    __slots__ = ("trainable",)

    def __init__(self, data):
        super().__init__(np.asarray(data, dtype=np.float32), requires_grad=True, op="parameter")
        self.trainable = True


class Module:
    """
    Base class for layers.

    Parameters and sub-modules are discovered from instance attributes
    (lists of modules included), in assignment order. Each module carries a
    dotted ``name`` used in shape errors.
    """

    def __init__(self):
        object.__setattr__(self, "name", type(self).__name__)

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            value._rename(f"{self.name}.{key}")
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, Module):
                    item._rename(f"{self.name}.{key}.{i}")
        object.__setattr__(self, key, value)

    def _rename(self, name):
        object.__setattr__(self, "name", name)
        for key, value in vars(self).items():
            if isinstance(value, Module):
                value._rename(f"{name}.{key}")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._rename(f"{name}.{key}.{i}")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=""):
        """Yield ``(name, Parameter)`` pairs depth-first in assignment order."""
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def gradients(self):
        """Gradient per parameter name; zeros where nothing flowed."""
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in self.named_parameters()}

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state, prefix=""):
        """
        Copy arrays into the parameters.

        Raises:
            ShapeError: If a parameter is missing or has another shape
        """
        for name, p in self.named_parameters():
            key = prefix + name
            if key not in state:
                raise ShapeError(f"{self.name}: state lacks parameter {key}")
            value = np.asarray(state[key], dtype=np.float32)
            if value.shape != p.data.shape:
                raise ShapeError(f"{self.name}: {key} has shape {value.shape}, expected {p.data.shape}")
            p.data = value.copy()

    def num_parameters(self):
        return int(np.sum([p.data.size for p in self.parameters()]))


def _normal(rng, shape, fan_in):
    return rng.standard_normal(shape) / np.sqrt(fan_in)


class Linear(Module):
    """Affine map over the last axis: ``x @ weight + bias``."""

    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter(_normal(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x):
        x = ag.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: expected last dimension {self.in_features}, got {x.shape}")
        out = ag.matmul(x, self.weight)
        return out if self.bias is None else ag.add(out, self.bias)


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0):
        super().__init__()
        self.in_channels, self.stride, self.padding = in_channels, stride, padding
        self.weight = Parameter(_normal(rng, (kernel_size, in_channels, out_channels),
                                        kernel_size * in_channels))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x):
        if x.shape[-1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {x.shape}")
        return ag.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0):
        super().__init__()
        self.in_channels, self.stride, self.padding = in_channels, stride, padding
        self.weight = Parameter(_normal(rng, (kernel_size, in_channels, out_channels), in_channels))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x):
        if x.shape[-1] != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} channels, got {x.shape}")
        return ag.conv_transpose1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, width, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(width))
        self.beta = Parameter(np.zeros(width))

    def forward(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Embedding(Module):
    def __init__(self, num_embeddings, width, rng):
        super().__init__()
        self.weight = Parameter(rng.standard_normal((num_embeddings, width)) * 0.02)

    def forward(self, ids):
        return ag.embedding(self.weight, ids)


def scaled_dot_product_attention(q, k, v):
    """
    Bidirectional attention.

    Args:
        q, k, v (Tensor): (..., N, d)

    Returns:
        tuple: (output Tensor (..., N, d), weights Tensor (..., N, N))
    """
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = ag.mul(ag.matmul(q, ag.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))),
                    scale)
    weights = ag.softmax(scores, axis=-1)
    return ag.matmul(weights, v), weights


class MultiHeadAttention(Module):
    """Multi-head self-attention over (B, N, D) inputs."""

    def __init__(self, width, heads, rng):
        super().__init__()
        if width % heads:
            raise ShapeError(f"width {width} is not divisible by {heads} heads")
        self.width, self.heads = width, heads
        self.query = Linear(width, width, rng)
        self.key = Linear(width, width, rng)
        self.value = Linear(width, width, rng)
        self.out = Linear(width, width, rng)
        self.last_weights = None

    def _split(self, x, batch, length):
        x = ag.reshape(x, (batch, length, self.heads, self.width // self.heads))
        return ag.transpose(x, (0, 2, 1, 3))

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.width:
            raise ShapeError(f"{self.name}: expected (B, N, {self.width}), got {x.shape}")
        batch, length, _ = x.shape
        q = self._split(self.query(x), batch, length)
        k = self._split(self.key(x), batch, length)
        v = self._split(self.value(x), batch, length)
        attended, weights = scaled_dot_product_attention(q, k, v)
        self.last_weights = weights.data
        merged = ag.reshape(ag.transpose(attended, (0, 2, 1, 3)), (batch, length, self.width))
        return self.out(merged)


class FeedForward(Module):
    def __init__(self, width, hidden, rng):
        super().__init__()
        self.fc1 = Linear(width, hidden, rng)
        self.fc2 = Linear(hidden, width, rng)

    def forward(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))


class TransformerLayer(Module):
    """Pre-norm transformer layer: attention then feed-forward, both residual."""

    def __init__(self, width, heads, rng, ff_mult=4):
        super().__init__()
        self.norm1 = LayerNorm(width)
        self.attention = MultiHeadAttention(width, heads, rng)
        self.norm2 = LayerNorm(width)
        self.feed_forward = FeedForward(width, ff_mult * width, rng)

    def forward(self, x):
        x = ag.add(x, self.attention(self.norm1(x)))
        return ag.add(x, self.feed_forward(self.norm2(x)))


class ResBlock1d(Module):
    """``x + conv1x1(gelu(conv3(gelu(x))))``."""

    def __init__(self, width, rng):
        super().__init__()
        self.conv1 = Conv1d(width, width, 3, rng, padding=1)
        self.conv2 = Conv1d(width, width, 1, rng)

    def forward(self, x):
        return ag.add(x, self.conv2(ag.gelu(self.conv1(ag.gelu(x)))))


def sinusoidal_positions(length, width):
    """
    Fixed sinusoidal position table.

    Returns:
        np.ndarray: (length, width) float32
    """
    positions = np.arange(length)[:, None]
    freqs = np.exp(-np.log(10000.0) * (np.arange(0, width, 2) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs[: width // 2])
    return table.astype(np.float32)
