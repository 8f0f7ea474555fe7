"""Layer helpers and parameter bookkeeping on top of the tensor kernel."""

from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np

from .errors import DimensionError
from .tensor import DiffTensor, mean_axis, silu


def param(array) -> DiffTensor:
    return DiffTensor(array, requires_grad=True)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, DiffTensor]]:
    """Walk dataclasses, lists and dicts in field order, yielding every tensor leaf."""
    if isinstance(obj, DiffTensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from named_parameters(obj[key], f"{prefix}.{key}" if prefix else str(key))


def parameters(obj) -> list[DiffTensor]:
    return [t for _, t in named_parameters(obj)]


def scale_parameters(obj, factor: float) -> None:
    for t in parameters(obj):
        t.data *= factor


def linear(x: DiffTensor, weight: DiffTensor, bias: DiffTensor | None = None) -> DiffTensor:
    """Per-position affine map over the trailing (channel) axis."""
    y = x @ weight
    return y if bias is None else y + bias


def layer_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalize over the channel axis, then a per-channel affine map."""
    centered = x - mean_axis(x, -1, keepdims=True)
    var = mean_axis(centered * centered, -1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gamma + beta


def activation(x: DiffTensor) -> DiffTensor:
    return silu(x)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


@dataclasses.dataclass
class FeatureMap:
    """An (h, w, c) feature grid sampled at 1/``scale`` of the input resolution."""

    data: DiffTensor
    scale: int = 1

    def __post_init__(self):
        if not isinstance(self.data, DiffTensor):
            self.data = DiffTensor(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"FeatureMap needs an (h, w, c) array, got shape {self.data.shape}")

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def as_tensor(x) -> DiffTensor:
    if isinstance(x, FeatureMap):
        return x.data
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(x)
