"""Layer/container plumbing on top of the autograd engine."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Container of parameters and child modules.

    Parameters are Tensors with requires_grad=True assigned as attributes;
    children are Modules (or lists of Modules). params() yields a flat
    name -> Tensor mapping with dotted paths, in definition order.
    """

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix, out):
        # every Tensor attribute is a parameter (constants never live on
        # modules), so freezing via requires_grad keeps them enumerable
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                value._collect(key + ".", out)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        item._collect(f"{key}.{i}.", out)
                    elif isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item

    def param_count(self) -> int:
        """Exact number of trainable scalars."""
        return sum(p.size for p in self.params().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        for k, p in params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint is missing parameter '{k}'")
            a = np.asarray(arrays[k], dtype=p.data.dtype)
            if a.shape != p.data.shape:
                raise ValueError(f"parameter '{k}' shape {a.shape} != expected {p.data.shape}")
            p.data = a.copy()

    def zero_grad(self):
        for p in self.params().values():
            p.grad = None

    def set_trainable(self, flag: bool):
        """Toggle requires_grad on all parameters (freeze/unfreeze)."""
        for p in self.params().values():
            p.requires_grad = bool(flag)
        return self

    def astype(self, dtype):
        """Cast all parameters in place (used by 64-bit gradient checks)."""
        for p in self.params().values():
            p.data = p.data.astype(dtype)
        return self


def _init_conv(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _init_bias(rng, n, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=n).astype(dtype), requires_grad=True)


class Conv2d(Module):
    """Causal-time / same-frequency conv layer with bias."""

    def __init__(self, rng, in_ch, out_ch, kernel=(2, 3), stride=(1, 1), dtype=np.float32):
        kt, kf = kernel
        self.stride = stride
        self.kernel = kernel
        self.w = _init_conv(rng, (out_ch, in_ch, kt, kf), in_ch * kt * kf, dtype)
        self.b = _init_bias(rng, out_ch, in_ch * kt * kf, dtype)

    def forward(self, x):
        y = ag.conv2d(x, self.w, self.stride)
        return y + self.b.reshape(1, -1, 1, 1)


class ConvTranspose2d(Module):
    """Frequency-doubling transposed conv layer, causal in time."""

    def __init__(self, rng, in_ch, out_ch, kernel=(2, 3), stride=(1, 2), dtype=np.float32):
        kt, kf = kernel
        self.stride = stride
        self.kernel = kernel
        self.w = _init_conv(rng, (in_ch, out_ch, kt, kf), in_ch * kt * kf, dtype)
        self.b = _init_bias(rng, out_ch, in_ch * kt * kf, dtype)

    def forward(self, x):
        y = ag.conv_transpose2d(x, self.w, self.stride)
        return y + self.b.reshape(1, -1, 1, 1)


class CausalConv1d(Module):
    """Dilated causal conv over (N, C, T)."""

    def __init__(self, rng, in_ch, out_ch, kernel=3, dilation=1, dtype=np.float32):
        self.dilation = dilation
        self.w = _init_conv(rng, (out_ch, in_ch, kernel), in_ch * kernel, dtype)
        self.b = _init_bias(rng, out_ch, in_ch * kernel, dtype)

    def forward(self, x):
        y = ag.dilated_conv1d(x, self.w, self.dilation)
        return y + self.b.reshape(1, -1, 1)


class WeightNormConv2d(Module):
    """Conv2d reparameterized as kernel = g * v / ||v|| per output channel."""

    def __init__(self, rng, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), dtype=np.float32):
        kt, kf = kernel
        self.stride = stride
        self.kernel = kernel
        v = rng.uniform(-1.0, 1.0, size=(out_ch, in_ch, kt, kf)).astype(dtype)
        v /= np.sqrt(in_ch * kt * kf)
        self.v = Tensor(v, requires_grad=True)
        norm = np.sqrt((v * v).sum(axis=(1, 2, 3)))
        self.g = Tensor(norm.astype(dtype), requires_grad=True)
        self.b = _init_bias(rng, out_ch, in_ch * kt * kf, dtype)

    def weight(self):
        sq = ag.sum_(self.v * self.v, axis=(1, 2, 3), keepdims=True)
        norm = ag.sqrt(sq)
        return self.v * (self.g.reshape(-1, 1, 1, 1) / norm)

    def forward(self, x):
        y = ag.conv2d(x, self.weight(), self.stride)
        return y + self.b.reshape(1, -1, 1, 1)
