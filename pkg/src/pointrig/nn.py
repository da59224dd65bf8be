"""Small MLP building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def positional_encoding(x: Tensor, bands: int) -> Tensor:
    """NeRF-style frequency expansion: [x, sin(2^k x), cos(2^k x)] for k < bands.

    Input shape (..., d) maps to (..., d * (1 + 2 * bands)).
    """
    parts = [x]
    for k in range(bands):
        scaled = x * float(2**k)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=-1)


def encoding_dim(d: int, bands: int) -> int:
    return d * (1 + 2 * bands)


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = ad.parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = ad.parameter(rng.uniform(-bound, bound, size=(out_dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Fully connected stack with ReLU between layers, linear output."""

    def __init__(self, dims: list[int], rng: np.random.Generator, out_scale: float = 1.0):
        self.dims = list(dims)
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        if out_scale != 1.0:
            self.layers[-1].weight.data *= out_scale
            self.layers[-1].bias.data *= 0.0

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = ad.relu(layer(x))
        return self.layers[-1](x)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def parameters_vector(params: list[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params]) if params else np.zeros(0)


def load_parameters(params: list[Tensor], flat: np.ndarray) -> None:
    off = 0
    for p in params:
        n = p.data.size
        p.data = flat[off : off + n].reshape(p.data.shape).copy()
        off += n
    if off != flat.size:
        raise ValueError(f"parameter vector length {flat.size} != expected {off}")
