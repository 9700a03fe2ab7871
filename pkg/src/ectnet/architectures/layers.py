"""Parameterised layers and the residual unit built from them."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..numerics import (
    BatchNormState,
    ConvParams,
    Tensor,
    batchnorm1d,
    conv1d,
    fully_connected,
    global_avg_pool,
    maxpool1d,
    output_length,
    relu,
)
from .specs import ResidualUnitSpec


class Layer:
    """Minimal module protocol: forward, named parameters/buffers, mode switch."""

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def own_parameters(self) -> list[tuple[str, Tensor]]:
        return []

    def own_buffers(self) -> list[tuple[str, np.ndarray]]:
        return []

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = [(prefix + n, t) for n, t in self.own_parameters()]
        for name, child in self.children():
            out += child.named_parameters(f"{prefix}{name}.")
        return out

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = [(prefix + n, b) for n, b in self.own_buffers()]
        for name, child in self.children():
            out += child.named_buffers(f"{prefix}{name}.")
        return out

    def named_layers(self, prefix: str = "") -> list[tuple[str, "Layer"]]:
        out = []
        for name, child in self.children():
            full = prefix + name
            out.append((full, child))
            out += child.named_layers(full + ".")
        return out

    def set_training(self, mode: bool) -> None:
        for _, child in self.children():
            child.set_training(mode)


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, groups=1,
                 bias=True, dtype=np.float64):
        cg = in_channels // groups if groups and in_channels % groups == 0 else 1
        w = Tensor(np.zeros((out_channels, cg, kernel_size), dtype=dtype), requires_grad=True)
        b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        self.params = ConvParams(in_channels, out_channels, kernel_size, stride, padding, groups, w, b)

    @property
    def weight(self) -> Tensor:
        return self.params.weight

    @property
    def bias(self) -> Tensor | None:
        return self.params.bias

    @property
    def fan_in(self) -> int:
        p = self.params
        return p.in_channels // p.groups * p.kernel_size

    def forward(self, x):
        return conv1d(x, self.params)

    def own_parameters(self):
        out = [("weight", self.params.weight)]
        if self.params.bias is not None:
            out.append(("bias", self.params.bias))
        return out

    def output_length(self, length: int) -> int:
        return self.params.output_length(length)

    def macs(self, length: int) -> int:
        p = self.params
        return self.output_length(length) * p.out_channels * (p.in_channels // p.groups) * p.kernel_size


class BatchNorm1d(Layer):
    def __init__(self, channels, momentum=0.9, epsilon=1e-5, dtype=np.float64):
        self.state = BatchNormState(channels, momentum=momentum, epsilon=epsilon, dtype=dtype)

    def forward(self, x):
        return batchnorm1d(x, self.state)

    def own_parameters(self):
        return [("gamma", self.state.gamma), ("beta", self.state.beta)]

    def own_buffers(self):
        return [("running_mean", self.state.running_mean), ("running_var", self.state.running_var)]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self.state, name, value)

    def set_training(self, mode):
        self.state.training = bool(mode)


class ReLU(Layer):
    def forward(self, x):
        return relu(x)


class MaxPool1d(Layer):
    def __init__(self, kernel, stride, padding=0):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x):
        return maxpool1d(x, self.kernel, self.stride, self.padding)

    def output_length(self, length):
        return output_length(length, self.kernel, self.stride, self.padding)


class GlobalAvgPool(Layer):
    def forward(self, x):
        return global_avg_pool(x)


class Linear(Layer):
    def __init__(self, in_features, out_features, dtype=np.float64):
        self.weight = Tensor(np.zeros((in_features, out_features), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    def forward(self, x):
        return fully_connected(x, self.weight, self.bias)

    def own_parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def macs(self) -> int:
        return self.weight.shape[0] * self.weight.shape[1]


class ResidualUnit(Layer):
    """Bottleneck residual unit.

    v1 (post-activation)::

        y = relu(x + bn3(conv3(relu(bn2(conv2(relu(bn1(conv1(x)))))))))

    v2 / resnext (pre-activation, identity after the sum)::

        a = relu(bn1(x))
        y = shortcut + conv3(relu(bn3(conv2(relu(bn2(conv1(a)))))))

    resnext differs from v2 only by ``groups = cardinality`` on conv2. A
    projection shortcut (1x1 conv with the unit stride) replaces the identity
    when shapes change; in v1 it is followed by its own BN, in pre-activation
    units it reads the activated input ``a``.
    """

    def __init__(self, spec: ResidualUnitSpec, in_channels: int, bias: bool = True, dtype=np.float64):
        if in_channels < 1:
            raise ShapeError("residual unit needs positive in_channels")
        self.spec = spec
        self.in_channels = in_channels
        b, out, s = spec.bottleneck_channels, spec.out_channels, spec.stride
        groups = spec.cardinality if spec.variant == "resnext" else 1
        self.conv1 = Conv1d(in_channels, b, 1, bias=bias, dtype=dtype)
        self.conv2 = Conv1d(b, b, 3, stride=s, padding=1, groups=groups, bias=bias, dtype=dtype)
        self.conv3 = Conv1d(b, out, 1, bias=bias, dtype=dtype)
        self.pre_activation = spec.variant != "v1"
        if self.pre_activation:
            self.bn1 = BatchNorm1d(in_channels, dtype=dtype)
            self.bn2 = BatchNorm1d(b, dtype=dtype)
            self.bn3 = BatchNorm1d(b, dtype=dtype)
        else:
            self.bn1 = BatchNorm1d(b, dtype=dtype)
            self.bn2 = BatchNorm1d(b, dtype=dtype)
            self.bn3 = BatchNorm1d(out, dtype=dtype)
        self.projection = in_channels != out or s != 1
        self.shortcut = Conv1d(in_channels, out, 1, stride=s, bias=bias, dtype=dtype) if self.projection else None
        self.shortcut_bn = BatchNorm1d(out, dtype=dtype) if self.projection and not self.pre_activation else None

    def children(self):
        order = (
            ["bn1", "conv1", "bn2", "conv2", "bn3", "conv3"]
            if self.pre_activation
            else ["conv1", "bn1", "conv2", "bn2", "conv3", "bn3"]
        )
        out = [(n, getattr(self, n)) for n in order]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        if self.shortcut_bn is not None:
            out.append(("shortcut_bn", self.shortcut_bn))
        return out

    def forward(self, x: Tensor) -> Tensor:
        if self.pre_activation:
            a = relu(self.bn1(x))
            h = self.conv1(a)
            h = self.conv2(relu(self.bn2(h)))
            h = self.conv3(relu(self.bn3(h)))
            sc = self.shortcut(a) if self.shortcut is not None else x
            return h + sc
        h = relu(self.bn1(self.conv1(x)))
        h = relu(self.bn2(self.conv2(h)))
        h = self.bn3(self.conv3(h))
        sc = self.shortcut_bn(self.shortcut(x)) if self.shortcut is not None else x
        return relu(h + sc)

    def output_length(self, length: int) -> int:
        return self.conv2.output_length(length)

    def convs(self) -> list[tuple[str, Conv1d]]:
        return [(n, l) for n, l in self.children() if isinstance(l, Conv1d)]


def build_residual_unit(spec: ResidualUnitSpec, in_channels: int, bias: bool = True, dtype=np.float64) -> ResidualUnit:
    return ResidualUnit(spec, in_channels, bias=bias, dtype=dtype)
