"""Minimal module system: named parameter trees, convolutions, layer norm."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor

INIT_STD = 0.02


class Module:
    """Parameters and child modules are discovered from instance attributes.

    Lists of modules are named ``<attr>.<index>``. Attribute insertion order
    fixes the parameter order, which the checkpoint manifest relies on.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, m in enumerate(value):
                    yield from m.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {p.shape}")
            p.data = np.array(state[n], dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def normal_param(rng: np.random.Generator, shape, dtype=np.float32) -> Parameter:
    return Parameter(rng.normal(0.0, INIT_STD, size=shape).astype(dtype))


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, *,
                 groups: int = 1, bias: bool = False, dtype=np.float32):
        self.weight = normal_param(rng, (cout, cin // groups, k, k), dtype)
        if bias:
            self.bias = Parameter(np.zeros(cout, dtype=dtype))
        self.groups = groups
        self.padding = k // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, getattr(self, "bias", None),
                        padding=self.padding, groups=self.groups)


class LayerNorm2d(Module):
    """Per-position normalization across channels with affine weight and bias."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)
