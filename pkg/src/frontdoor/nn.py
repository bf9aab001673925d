"""Small neural-net layer zoo on top of the autodiff Tensor."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, avg_pool2d, conv2d, upsample_nearest


def kaiming_uniform(rng, shape, fan_in):
    """Kaiming-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    def named_parameters(self):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((name, value))
            elif isinstance(value, Module):
                out.extend((f"{name}.{k}", p) for k, p in value.named_parameters())
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(
                            (f"{name}.{i}.{k}", p) for k, p in item.named_parameters()
                        )
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ValueError(f"state layout mismatch: missing={missing} extra={extra}")
        for name, arr in state.items():
            p = params[name]
            if p.data.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {name}: model {p.data.shape}, "
                    f"checkpoint {arr.shape}"
                )
            p.data = np.asarray(arr, dtype=np.float64).copy()

    def __call__(self, x):
        return self.forward(x)


class Conv2d(Module):
    def __init__(self, rng, in_ch, out_ch, kernel_size=3, stride=1, padding=1):
        self.stride = stride
        self.padding = padding
        k = kernel_size
        fan_in = in_ch * k * k
        self.weight = Tensor(
            kaiming_uniform(rng, (out_ch, in_ch, k, k), fan_in), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Dense(Module):
    def __init__(self, rng, in_features, out_features):
        self.weight = Tensor(
            kaiming_uniform(rng, (in_features, out_features), in_features),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x):
        return x @ self.weight + self.bias


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class AvgPool2d(Module):
    def __init__(self, k):
        self.k = k

    def forward(self, x):
        return avg_pool2d(x, self.k)


class UpsampleNearest(Module):
    def __init__(self, factor=2):
        self.factor = factor

    def forward(self, x):
        return upsample_nearest(x, self.factor)


class Flatten(Module):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
