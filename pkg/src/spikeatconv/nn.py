"""Parameter containers and the handful of layers the model is built from."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .tensor import Tensor


def parameter(arr: np.ndarray) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def kaiming(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return parameter(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))


class Module:
    """Parameters and sub-modules are discovered from instance attributes.

    Attribute insertion order fixes parameter order and names, e.g.
    ``stage0.block1.convnext.dw.weight``. Lists of modules are named by index.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}{i}.")

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{prefix}{name}{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        extra = state.keys() - own.keys()
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to(self, dtype):
        """Cast every parameter in place (float64 is used for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False):
        w = np.zeros((d_out, d_in)) if zero_init else rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return tn.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, groups: int = 1, bias: bool = True, zero_init: bool = False):
        shape = (c_out, c_in // groups, k, k)
        fan_in = (c_in // groups) * k * k
        self.weight = parameter(np.zeros(shape)) if zero_init else kaiming(rng, shape, fan_in)
        self.bias = parameter(np.zeros(c_out)) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return tn.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class LayerNorm(Module):
    """Normalises over ``axis`` (``1`` gives the channel norm used on NCHW maps)."""

    def __init__(self, dim: int, axis: int = -1, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))
        self.axis = axis
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return tn.layernorm(x, self.gain, self.bias, self.axis, self.eps)


def fold_time(x: Tensor) -> Tensor:
    """``[T, N, ...] -> [T*N, ...]``."""
    return tn.reshape(x, (x.shape[0] * x.shape[1],) + x.shape[2:])


def unfold_time(x: Tensor, T: int) -> Tensor:
    """``[T*N, ...] -> [T, N, ...]``."""
    return tn.reshape(x, (T, x.shape[0] // T) + x.shape[1:])
