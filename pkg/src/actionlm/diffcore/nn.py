"""Parameter containers and the small set of layers the models need."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from . import functional as F
from .tensor import ContractViolation, Tensor


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Module:
    """Attribute-walking parameter registry, in attribute definition order.

    Every :class:`Tensor` attribute is a parameter; frozen parameters simply
    have ``requires_grad`` off. Constants belong in plain numpy attributes.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            full = f"{prefix}{key}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy tensors in by name; ``strict=False`` loads a subset and rejects unknown names."""
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if strict and missing:
            raise ContractViolation(f"state is missing tensors: {', '.join(missing)}")
        unknown = sorted(set(state) - set(own))
        if not strict and unknown:
            raise ContractViolation(f"state has tensors the model lacks: {', '.join(unknown)}")
        for name, p in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ContractViolation(f"tensor {name!r}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, scale: float | None = None):
        std = (1.0 / np.sqrt(d_in)) if scale is None else scale
        self.weight = Parameter(rng.normal(0.0, std, size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1, padding: int | None = None):
        self.weight = Parameter(rng.normal(0.0, 1.0 / np.sqrt(kernel * c_in), size=(kernel, c_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, std: float = 0.1):
        self.weight = Parameter(rng.normal(0.0, std, size=(count, dim)))

    def __call__(self, ids) -> Tensor:
        return F.take(self.weight, ids, axis=0)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.weight = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias)
