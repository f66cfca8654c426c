"""Layers built from the tensor primitives."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, ShapeError, layer_norm, linear, matmul, relu, silu, softmax

ACTIVATIONS = {"relu": relu, "silu": silu}


class ConfigError(ValueError):
    pass


class Parameter(Tensor):
    """A trainable leaf tensor. ``name`` is assigned by the owning module."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in own:
                continue
            if own[name].shape != arr.shape:
                raise ShapeError(f"{name}: expected {own[name].shape}, got {arr.shape}")
            own[name].data = np.array(arr, dtype=np.float64)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        self.weight = Parameter(np.zeros((d_in, d_out)) if zero else he_normal(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias)


class MLP(Module):
    """Two linear layers with an activation between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 activation: str = "relu", zero_out: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng, zero=zero_out)
        self._act = ACTIVATIONS[activation]

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(self._act(self.fc1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention over axis -2 of ``(..., n, d)``.

    The last attention weights are kept in ``last_weights`` with shape
    ``(..., heads, n, n)`` for inspection.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if heads < 1 or d % heads:
            raise ConfigError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        x = x.reshape(*lead, n, self.heads, d // self.heads)
        nd = len(lead)
        return x.transpose(*range(nd), nd + 1, nd, nd + 2)

    def forward(self, x: Tensor) -> Tensor:
        *lead, n, d = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        nd = len(lead)
        kt = k.transpose(*range(nd + 1), nd + 2, nd + 1)
        scores = matmul(q, kt) * (1.0 / np.sqrt(d // self.heads))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = matmul(weights, v).transpose(*range(nd), nd + 1, nd, nd + 2).reshape(*lead, n, d)
        return self.out(ctx)


class SelfAttentionLayer(Module):
    """Post-norm residual attention: ``LayerNorm(x + MHA(x))``."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm = LayerNorm(d)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x + self.attn(x))


def self_attention(tokens: Tensor, heads: int, layer: SelfAttentionLayer | None = None,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Functional form of :class:`SelfAttentionLayer` for ``(n, d)`` tokens."""
    d = tokens.shape[-1]
    if d % heads:
        raise ConfigError(f"width {d} is not divisible by {heads} heads")
    if layer is None:
        layer = SelfAttentionLayer(d, heads, rng or np.random.default_rng(0))
    return layer(tokens)


def sinusoidal_embedding(steps: np.ndarray, dim: int) -> np.ndarray:
    """Transformer-style sinusoidal features of integer steps, shape ``(len, dim)``."""
    steps = np.asarray(steps, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = steps * freqs[None]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(emb), 1))], axis=1)
    return emb
