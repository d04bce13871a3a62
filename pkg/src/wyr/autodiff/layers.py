"""
Parameterised building blocks for the classifier and the mask generator.

A `Module` registers every `Tensor` attribute as a parameter and every `Module` attribute as a
child, so `named_parameters()` walks the tree in definition order.

Examples:
    >>> import numpy as np
    >>> from wyr.autodiff.tensor import Tensor
    >>> from wyr.autodiff.layers import Linear
    >>> layer = Linear(3, 2, rng=np.random.default_rng(0))
    >>> [name for name, _ in layer.named_parameters()]
    ['weight', 'bias']
    >>> layer(Tensor(np.zeros((4, 3)))).shape
    (4, 2)
"""

from __future__ import annotations

import hashlib
import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from wyr.autodiff.functional import embedding_lookup, softmax, valid_positions
from wyr.autodiff.tensor import Tensor, concat, stack

NEGATIVE_INFINITY = -1e9


class Module:
    """Container of parameters (`Tensor` attributes), buffers and child modules."""

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, module in self._modules.items():
            yield from module.named_buffers(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    @property
    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = {name for name, _ in self.named_parameters()}
        expected |= {name for name, _ in self.named_buffers()}
        missing = expected - set(state)
        unexpected = set(state) - expected
        if missing or unexpected:
            raise KeyError(
                f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for name, p in self.named_parameters():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data[...] = value
        for name, buffer in self.named_buffers():
            buffer[...] = np.asarray(state[name], dtype=np.float64).reshape(buffer.shape)


def parameter_digest(module: Module) -> str:
    """sha256 over every parameter's name, shape and bytes."""
    digest = hashlib.sha256()
    for name, p in module.named_parameters():
        digest.update(name.encode())
        digest.update(str(p.shape).encode())
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.weight = _uniform(rng, (in_features, out_features), in_features)
        self.has_bias = bias
        if bias:
            self.bias = _uniform(rng, (out_features,), in_features)

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.has_bias else out


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.num_embeddings = num_embeddings
        self.weight = Tensor(rng.normal(0.0, 1.0, size=(num_embeddings, dim)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding_lookup(self.weight, ids)


class LSTMCell(Module):
    """One direction of one layer; gate order is input, forget, cell, output."""

    def __init__(self, input_size: int, hidden_size: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.hidden_size = hidden_size
        self.weight_ih = _uniform(rng, (input_size, 4 * hidden_size), hidden_size)
        self.weight_hh = _uniform(rng, (hidden_size, 4 * hidden_size), hidden_size)
        self.bias = _uniform(rng, (4 * hidden_size,), hidden_size)

    def run(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Unroll over `(B, T, input)` and return hidden and cell states, both `(B, T, hidden)`."""
        batch, steps = x.shape[0], x.shape[1]
        size = self.hidden_size
        projected = x @ self.weight_ih + self.bias
        h = Tensor(np.zeros((batch, size)))
        c = Tensor(np.zeros((batch, size)))
        hidden, cell = [], []
        for t in range(steps):
            gates = projected[:, t, :] + h @ self.weight_hh
            i = gates[:, :size].sigmoid()
            f = gates[:, size : 2 * size].sigmoid()
            g = gates[:, 2 * size : 3 * size].tanh()
            o = gates[:, 3 * size :].sigmoid()
            c = f * c + i * g
            h = o * c.tanh()
            hidden.append(h)
            cell.append(c)
        return stack(hidden, axis=1), stack(cell, axis=1)


def reverse_valid(x: Tensor, valid_len: np.ndarray) -> Tensor:
    """Reverse each row's first `valid_len` steps along axis 1, leaving padding in place."""
    steps = x.shape[1]
    t = np.arange(steps)[None, :]
    valid = np.asarray(valid_len)[:, None]
    index = np.where(t < valid, valid - 1 - t, t)
    index = np.broadcast_to(index[:, :, None], x.shape)
    return x.take_along_axis(index, axis=1)


class BidirectionalLSTM(Module):
    """
    Stacked bidirectional LSTM over padded batches.

    The backward direction reads each sequence from its last valid step, so padding never
    reaches the valid outputs. Layers after the first read the concatenated hidden states.
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 2, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.num_layers = num_layers
        self.hidden_size = hidden_size
        for layer in range(num_layers):
            size = input_size if layer == 0 else 2 * hidden_size
            setattr(self, f"forward_{layer}", LSTMCell(size, hidden_size, rng=rng))
            setattr(self, f"backward_{layer}", LSTMCell(size, hidden_size, rng=rng))

    def __call__(self, x: Tensor, valid_len: np.ndarray) -> Dict[str, Tensor]:
        """
        Returns:
            the last layer's states, keys `hidden_forward`, `cell_forward`, `hidden_backward`,
            `cell_backward`, each `(B, T, hidden)`
        """
        states: Dict[str, Tensor] = {}
        for layer in range(self.num_layers):
            forward_cell = getattr(self, f"forward_{layer}")
            backward_cell = getattr(self, f"backward_{layer}")
            h_f, c_f = forward_cell.run(x)
            h_b, c_b = backward_cell.run(reverse_valid(x, valid_len))
            h_b, c_b = reverse_valid(h_b, valid_len), reverse_valid(c_b, valid_len)
            states = dict(
                hidden_forward=h_f, cell_forward=c_f, hidden_backward=h_b, cell_backward=c_b
            )
            x = concat([h_f, h_b], axis=-1)
        return states


class BatchNorm(Module):
    """
    Normalisation over the batch-and-token axes of `(B, T, F)` inputs.

    Statistics use valid positions only. Training uses batch statistics and updates running
    averages with `momentum`; evaluation uses the running averages.
    """

    def __init__(self, features: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(features), requires_grad=True)
        self.beta = Tensor(np.zeros(features), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(features))
        self.register_buffer("running_var", np.ones(features))

    def __call__(self, x: Tensor, valid_len: np.ndarray) -> Tensor:
        running_mean = self._buffers["running_mean"]
        running_var = self._buffers["running_var"]
        if not self.training:
            scale = 1.0 / np.sqrt(running_var + self.eps)
            return (x - running_mean) * (self.gamma * scale) + self.beta

        weights = valid_positions(valid_len, x.shape[1]).astype(np.float64)[..., None]
        count = float(weights.sum())
        if count < 1:
            raise ValueError("batch normalisation needs at least one valid position")
        mean = (x * weights).sum(axis=(0, 1)) * (1.0 / count)
        centered = x - mean
        var = ((centered * weights) ** 2).sum(axis=(0, 1)) * (1.0 / count)
        normalised = centered / (var + self.eps).sqrt()

        unbiased = var.data * (count / max(count - 1.0, 1.0))
        running_mean *= 1.0 - self.momentum
        running_mean += self.momentum * mean.data
        running_var *= 1.0 - self.momentum
        running_var += self.momentum * unbiased
        return normalised * self.gamma + self.beta


class SelfAttention(Module):
    """Single-head scaled dot-product attention, residual connection, then a feed-forward block."""

    def __init__(self, dim: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.scale = 1.0 / math.sqrt(dim)
        self.query = Linear(dim, dim, bias=False, rng=rng)
        self.key = Linear(dim, dim, bias=False, rng=rng)
        self.value = Linear(dim, dim, bias=False, rng=rng)
        self.output = Linear(dim, dim, bias=False, rng=rng)
        self.hidden = Linear(dim, 2 * dim, rng=rng)
        self.project = Linear(2 * dim, dim, rng=rng)

    def __call__(self, x: Tensor, valid_len: np.ndarray) -> Tensor:
        scores = (self.query(x) @ self.key(x).swapaxes(-1, -2)) * self.scale
        key_valid = valid_positions(valid_len, x.shape[1])[:, None, :]
        scores = scores + np.where(key_valid, 0.0, NEGATIVE_INFINITY)
        attended = softmax(scores, axis=-1) @ self.value(x)
        h = x + self.output(attended)
        return h + self.project(self.hidden(h).relu())
