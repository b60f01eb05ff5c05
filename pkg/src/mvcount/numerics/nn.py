"""Parameters, a module container, and the layers the model is built from."""
from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from mvcount.errors import ShapeError
from mvcount.numerics import functional as F
from mvcount.numerics.tensor import Tensor, as_tensor, default_dtype, relu


class Parameter(Tensor):
    """A learnable tensor. ``grad`` always exists and matches ``value`` in shape."""

    def __init__(self, data, name: Optional[str] = None):
        arr = np.array(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        super().__init__(arr, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int, dtype=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype or default_dtype())


class Module:
    """Minimal container: parameters are discovered by walking attributes.

    Attributes listed in ``buffer_names`` are non-learnable arrays that still
    belong in a checkpoint.
    """

    buffer_names: tuple = ()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for key, value in vars(self).items():
            yield from _walk(value, prefix + key)

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for key in self.buffer_names:
            yield prefix + key, self, key
        for key, value in vars(self).items():
            yield from _walk_buffers(value, prefix + key)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, owner, key in self.named_buffers():
            state[name] = np.array(getattr(owner, key), copy=True)
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        buffers = {name: (owner, key) for name, owner, key in self.named_buffers()}
        missing = (set(params) | set(buffers)) - set(state)
        unexpected = set(state) - set(params) - set(buffers)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
            p.zero_grad()
        for name, (owner, key) in buffers.items():
            setattr(owner, key, np.array(state[name], copy=True))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, prefix: str):
    if isinstance(value, Parameter):
        if value.name is None:
            value.name = prefix
        yield prefix, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{prefix}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{prefix}.{key}")


def _walk_buffers(value, prefix: str):
    if isinstance(value, Module):
        yield from value.named_buffers(prefix + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk_buffers(item, f"{prefix}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk_buffers(item, f"{prefix}.{key}")


class Linear(Module):
    """Affine map on the trailing axis: ``x @ weight + bias``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False, bias: bool = True, dtype=None):
        self.in_features, self.out_features = in_features, out_features
        shape = (in_features, out_features)
        if zero_init:
            w = np.zeros(shape, dtype=dtype or default_dtype())
        else:
            w = glorot_uniform(rng, shape, in_features, out_features, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=w.dtype)) if bias else None

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects trailing dim {self.in_features}, got {x.shape}")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Mlp(Module):
    """Stack of :class:`Linear` layers, rectifier between layers, identity at the output."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, zero_last: bool = False, dtype=None):
        if len(widths) < 2:
            raise ShapeError("an Mlp needs at least input and output widths")
        self.widths = list(widths)
        last = len(widths) - 2
        self.layers = [
            Linear(a, b, rng, zero_init=zero_last and i == last, dtype=dtype)
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    @property
    def in_features(self) -> int:
        return self.widths[0]

    @property
    def out_features(self) -> int:
        return self.widths[-1]

    def __call__(self, x) -> Tensor:
        return mlp_apply(self, x)


def mlp_apply(mlp: Mlp, x) -> Tensor:
    """Apply ``mlp`` over the trailing axis of ``x``, broadcasting over leading axes."""
    x = as_tensor(x)
    if x.shape[-1] != mlp.in_features:
        raise ShapeError(f"Mlp expects trailing dim {mlp.in_features}, got {x.shape}")
    for i, layer in enumerate(mlp.layers):
        x = layer(x)
        if i < len(mlp.layers) - 1:
            x = relu(x)
    return x


class Conv(Module):
    """Channel-first N-d convolution with 'same' padding by default."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 ndim: int = 3, stride: int = 1, pad: Optional[int] = None, bias: bool = True,
                 zero_init: bool = False, dtype=None):
        shape = (out_channels, in_channels) + (kernel,) * ndim
        vol = kernel**ndim
        if zero_init:
            w = np.zeros(shape, dtype=dtype or default_dtype())
        else:
            w = glorot_uniform(rng, shape, in_channels * vol, out_channels * vol, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=w.dtype)) if bias else None
        self.stride = stride
        self.pad = kernel // 2 if pad is None else pad

    def __call__(self, x) -> Tensor:
        return F.conv(x, self.weight, self.bias, self.stride, self.pad)


class Deconv3d(Module):
    """Stride-2 transposed 3-D convolution doubling each spatial dim."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel: int = 3, dtype=None):
        shape = (in_channels, out_channels) + (kernel,) * 3
        vol = kernel**3
        self.weight = Parameter(glorot_uniform(rng, shape, in_channels * vol, out_channels * vol, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=self.weight.dtype))

    def __call__(self, x) -> Tensor:
        return F.deconv3d(x, self.weight, self.bias)


class LayerNorm(Module):
    """Layer normalization over one axis with learnable scale and shift."""

    def __init__(self, channels: int, axis: int = -1, eps: float = 1e-5, dtype=None):
        dtype = dtype or default_dtype()
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.axis = axis
        self.eps = eps

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        shape = [1] * x.ndim
        shape[self.axis] = -1
        return F.layer_norm(x, self.gamma.reshape(shape), self.beta.reshape(shape), self.axis, self.eps)
