"""Parameter-owning layers and a small module base class."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Holds parameters, buffers and child modules in registration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        self._buffers[name] = arr
        return arr

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for n, p in self._params.items():
            yield prefix + n, p
        for cn, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cn}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for n, b in self._buffers.items():
            yield prefix + n, b
        for cn, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cn}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters then buffers, each in registration (topological) order."""
        state = {n: p.data for n, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if own[name].shape != np.shape(arr):
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {np.shape(arr)}, model {own[name].shape}"
                )
        params = dict(self.named_parameters())
        for name, arr in state.items():
            if name in params:
                params[name].data = np.array(arr, dtype=np.float64)
            else:
                own[name][...] = arr


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int | None = None):
        super().__init__()
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = self.add_param("weight", he_uniform(rng, (cout, cin, k, k)))
        self.bias = self.add_param("bias", np.zeros(cout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def strided(self, x: Tensor, stride: int) -> Tensor:
        """Same as ``downsample(self(x), stride)`` at 1/stride^2 of the cost.

        Requires unit stride, and spatial sizes divisible by ``stride``.
        """
        k = self.weight.shape[-1]
        p = self.padding
        h, w = x.shape[-2:]
        if self.stride != 1 or h % stride or w % stride:
            raise ops.ShapeError(f"cannot subsample a stride-{self.stride} conv of {h}x{w} by {stride}")
        # pad so the windows start at -p and the last one ends inside the padded input
        bottom = stride * (h // stride - 1) + k - h - p
        right = stride * (w // stride - 1) + k - w - p
        if bottom < 0 or right < 0:
            return ops.downsample(self(x), stride)
        xp = ops.pad2d(x, p, bottom, p, right)
        return ops.conv2d(xp, self.weight, self.bias, stride, 0)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)
