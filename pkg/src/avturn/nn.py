"""Parameter containers built on the tensor core."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects ``Tensor`` parameters and sub-modules from attributes, in definition order."""

    def named_parameters(self, prefix: str = "") -> dict:
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def load_arrays(self, arrays: dict, prefix: str = ""):
        for name, p in self.named_parameters(prefix).items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            if arrays[name].shape != p.shape:
                raise T.ShapeError(f"load {name}", arrays[name].shape, p.shape)
            p.data = np.array(arrays[name], dtype=np.float64)


def param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 init: str = "he"):
        scale = np.sqrt(2.0 / d_in) if init == "he" else np.sqrt(1.0 / d_in)
        self.weight = param(rng.normal(0.0, scale, size=(d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.d_in:
            raise T.ShapeError("linear", x.shape, self.weight.shape)
        y = x @ self.weight if x.ndim >= 2 else (x.reshape(1, -1) @ self.weight).reshape(-1)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = param(np.ones(d))
        self.beta = param(np.zeros(d))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class ResidualMLP(Module):
    """``layer_norm(u + W2 relu(W1 u))``: the refinement block applied after each attention."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng, init="lecun")
        self.norm = LayerNorm(d)

    def __call__(self, u) -> Tensor:
        return self.norm(u + self.fc2(T.relu(self.fc1(u))))


class ConvBlock(Module):
    """conv (same padding) -> relu -> max pool, channels-last, 2-D or 3-D."""

    def __init__(self, nd: int, c_in: int, c_out: int, rng: np.random.Generator,
                 pool: tuple, kernel: int = 3, crop: bool = False):
        ksize = (kernel,) * nd
        fan_in = c_in * kernel ** nd
        self.weight = param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=ksize + (c_in, c_out)))
        self.bias = param(np.zeros(c_out))
        self.nd, self.pool, self.pad, self.crop = nd, tuple(pool), kernel // 2, crop

    def __call__(self, x) -> Tensor:
        conv = T.conv3d if self.nd == 3 else T.conv2d
        y = T.relu(conv(x, self.weight, self.bias, stride=1, padding=self.pad))
        return T.max_pool(y, self.pool, crop=self.crop)
