"""Parameter store, Adam optimizer and gradient utilities."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError


class ParamStore:
    """
    Named parameters with per-parameter trainable flags.

    Frozen parameters stop requiring gradients and are skipped by
    :func:`adam_step`.
    """

    def __init__(self, named_parameters):
        self._params = {}
        for name, param in named_parameters:
            if name in self._params:
                raise ConsistencyError(f"duplicate parameter name {name}")
            self._params[name] = param

    @classmethod
    def from_module(cls, module):
        return cls(module.named_parameters())

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def is_trainable(self, name):
        return self._params[name].trainable

    def trainable_names(self):
        return [n for n, p in self._params.items() if p.trainable]

    def set_trainable(self, prefix, trainable):
        """
        Freeze or unfreeze every parameter whose name starts with ``prefix``.

        Returns:
            int: Number of parameters affected
        """
        count = 0
        for name, param in self._params.items():
            if name.startswith(prefix):
                param.trainable = trainable
                param.requires_grad = trainable
                count += 1
        return count

    def freeze(self, prefix=""):
        return self.set_trainable(prefix, False)

    def unfreeze(self, prefix=""):
        return self.set_trainable(prefix, True)

    def __repr__(self):
        return f"ParamStore(params={len(self)}, trainable={len(self.trainable_names())})"


@dataclass
class AdamState:
    """Adam moments and hyperparameters."""

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_training(cls, train):
        """Fresh state with the learning rate and betas of a TrainingConfig."""
        return cls(lr=train.lr, beta1=train.adam_beta1, beta2=train.adam_beta2)


def global_grad_norm(grads, names):
    return float(np.sqrt(np.sum([np.sum(np.square(grads[n], dtype=np.float64)) for n in names])))


def adam_step(params, grads, state, clip_norm=None):
    """
    Apply one Adam update with bias correction, in place.

    Args:
        params (ParamStore): Parameters to update
        grads (dict): Gradient per parameter name
        state (AdamState): Optimizer state, updated in place
        clip_norm (float): Optional global gradient-norm clip

    Returns:
        AdamState: The updated state

    Raises:
        ConsistencyError: If a trainable parameter has no gradient or a
            gradient shape differs from its parameter
    """
    names = params.trainable_names()
    for name in names:
        if name not in grads or grads[name] is None:
            raise ConsistencyError(f"missing gradient for trainable parameter {name}")
        if np.shape(grads[name]) != params[name].data.shape:
            raise ConsistencyError(
                f"gradient for {name} has shape {np.shape(grads[name])}, "
                f"expected {params[name].data.shape}")

    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(grads, names)
        if norm > clip_norm:
            scale = clip_norm / (norm + 1e-12)

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for name in names:
        param = params[name]
        g = np.asarray(grads[name], dtype=np.float64) * scale
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(param.data.shape)
            v = np.zeros(param.data.shape)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        param.data = (param.data - update).astype(np.float32)
    return state
