"""Instantiated networks: construction, initialisation, forward pass."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ConfigError, ShapeError
from ..numerics import Rng, Tensor, as_rng, no_grad
from .layers import BatchNorm1d, Conv1d, GlobalAvgPool, Layer, Linear, MaxPool1d, ReLU, ResidualUnit
from .specs import NetworkSpec, get_spec


class _Stem(Layer):
    def __init__(self, spec: NetworkSpec, dtype):
        self.conv = Conv1d(spec.input_channels, spec.stem_filters, spec.stem_kernel,
                           padding=spec.stem_kernel // 2, bias=spec.conv_bias, dtype=dtype)
        self.bn = BatchNorm1d(spec.stem_filters, dtype=dtype)
        self.pool = MaxPool1d(spec.pool_kernel, spec.pool_stride, padding=spec.pool_kernel // 2)

    def children(self):
        return [("conv", self.conv), ("bn", self.bn)]


class _Stage(Layer):
    def __init__(self, units: list[ResidualUnit]):
        self.units = units

    def children(self):
        return [(f"unit{j + 1}", u) for j, u in enumerate(self.units)]

    def forward(self, x):
        for u in self.units:
            x = u(x)
        return x


class Network(Layer):
    """Stem -> max pool -> 4 residual stages -> [BN-ReLU] -> GAP -> fc.

    ``forward`` returns logits; the softmax lives in the loss and in
    prediction helpers. Pre-activation networks (v2, resnext) get a final
    BN-ReLU after the last stage so the features reaching GAP are activated.
    """

    def __init__(self, spec: NetworkSpec, dtype=np.float64):
        spec.validate()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.training = True
        self.stem = None if spec.head_only else _Stem(spec, dtype)
        self.stages: list[_Stage] = []
        channels = spec.stem_filters if self.stem is not None else spec.input_channels
        for stage in spec.stages:
            units = []
            for j in range(stage.units):
                unit_spec = stage.unit if j == 0 else stage.unit.with_stride(1)
                units.append(ResidualUnit(unit_spec, channels, bias=spec.conv_bias, dtype=dtype))
                channels = unit_spec.out_channels
            self.stages.append(_Stage(units))
        self.final_bn = BatchNorm1d(channels, dtype=dtype) if spec.variant in ("v2", "resnext") else None
        self.gap = GlobalAvgPool()
        self.fc = Linear(channels, spec.num_classes, dtype=dtype)
        self.feature_channels = channels
        self._check_names()

    def children(self):
        out = []
        if self.stem is not None:
            out.append(("stem", self.stem))
        out += [(f"stage{i + 1}", s) for i, s in enumerate(self.stages)]
        if self.final_bn is not None:
            out.append(("final_bn", self.final_bn))
        out.append(("fc", self.fc))
        return out

    def _check_names(self):
        names = [n for n, _ in self.named_parameters()] + [n for n, _ in self.named_buffers()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in network")

    # -- modes -----------------------------------------------------------------
    def train(self, mode: bool = True) -> "Network":
        self.training = bool(mode)
        self.set_training(mode)
        return self

    def eval(self) -> "Network":
        return self.train(False)

    # -- forward ---------------------------------------------------------------
    def features(self, x, trace: list | None = None) -> Tensor:
        """Activations entering GAP, shape (N, L_feat, C_feat)."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 3 or x.shape[2] != self.spec.input_channels:
            raise ShapeError(f"expected input (N, L, {self.spec.input_channels}), got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype)) if not x.requires_grad else x
        if self.stem is not None:
            x = self.stem.bn(self.stem.conv(x))
            x = ReLU()(x)
            if trace is not None:
                trace.append(("stem", x.shape[1]))
            x = self.stem.pool(x)
            if trace is not None:
                trace.append(("pool", x.shape[1]))
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if trace is not None:
                trace.append((f"stage{i + 1}", x.shape[1]))
        if self.final_bn is not None:
            x = ReLU()(self.final_bn(x))
        return x

    def forward(self, x, return_features: bool = False, trace: list | None = None):
        f = self.features(x, trace)
        pooled = self.gap(f)
        if trace is not None:
            trace.append(("gap", 1))
        logits = self.fc(pooled)
        return (logits, f) if return_features else logits

    def predict_logits(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Inference-mode logits without recording a graph."""
        was = self.training
        self.eval()
        try:
            with no_grad():
                outs = [self.forward(x[i : i + batch_size]).data for i in range(0, len(x), batch_size)]
        finally:
            self.train(was)
        return np.concatenate(outs) if outs else np.zeros((0, self.spec.num_classes), dtype=self.dtype)

    def temporal_sizes(self, length: int | None = None) -> list[tuple[str, int]]:
        length = self.spec.input_length if length is None else length
        trace: list = []
        was = self.training
        self.eval()
        try:
            with no_grad():
                self.forward(np.zeros((1, length, self.spec.input_channels), dtype=self.dtype), trace=trace)
        finally:
            self.train(was)
        return trace

    # -- parameters ------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_dict(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())

    def buffer_owners(self) -> dict[str, tuple[BatchNorm1d, str]]:
        out = {}
        for lname, layer in self.named_layers():
            if isinstance(layer, BatchNorm1d):
                for b in ("running_mean", "running_var"):
                    out[f"{lname}.{b}"] = (layer, b)
        return out

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for n, t in self.named_parameters():
            out[n] = t.data.copy()
        for n, b in self.named_buffers():
            out[n] = np.array(b, copy=True)
        return out

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        from ..errors import CheckpointMismatchError

        params = self.parameter_dict()
        buffers = self.buffer_owners()
        expected = set(params) | set(buffers)
        if strict:
            missing = expected - set(state)
            extra = set(state) - expected
            if missing or extra:
                raise CheckpointMismatchError(
                    f"state names differ: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
                )
        for name, arr in state.items():
            if name in params:
                t = params[name]
                if t.shape != tuple(arr.shape):
                    raise CheckpointMismatchError(f"{name}: shape {arr.shape}, network has {t.shape}")
                t.data = np.array(arr, dtype=self.dtype, copy=True)
            elif name in buffers:
                layer, attr = buffers[name]
                cur = getattr(layer.state, attr)
                if cur.shape != tuple(arr.shape):
                    raise CheckpointMismatchError(f"{name}: shape {arr.shape}, network has {cur.shape}")
                layer.set_buffer(attr, np.array(arr, dtype=self.dtype, copy=True))

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def initialize(self, rng: Rng | int | None = 0) -> "Network":
        """He-normal weights (variance 2/fan_in), zero biases, BN gamma=1 beta=0."""
        rng = as_rng(rng)
        for _, layer in self.named_layers():
            if isinstance(layer, (Conv1d, Linear)):
                std = np.sqrt(2.0 / layer.fan_in)
                layer.weight.data = rng.normal(0.0, std, size=layer.weight.shape).astype(self.dtype)
                if layer.bias is not None:
                    layer.bias.data = np.zeros_like(layer.bias.data)
            elif isinstance(layer, BatchNorm1d):
                s = layer.state
                s.gamma.data = np.ones_like(s.gamma.data)
                s.beta.data = np.zeros_like(s.beta.data)
                s.running_mean = np.zeros_like(s.running_mean)
                s.running_var = np.ones_like(s.running_var)
        return self

    def astype(self, dtype) -> "Network":
        clone = Network(self.spec, dtype=dtype)
        clone.load_state_dict({k: v.astype(dtype) for k, v in self.state_dict().items()})
        clone.train(self.training)
        return clone

    def copy(self) -> "Network":
        return self.astype(self.dtype)

    def __repr__(self) -> str:
        return f"Network({self.spec.name!r}, depth={self.spec.depth}, dtype={self.dtype})"


def build_network(spec: str | NetworkSpec, rng: Rng | int | None = 0, dtype=np.float64) -> Network:
    """Instantiate a named architecture or a custom spec and initialise it."""
    if isinstance(spec, str):
        spec = get_spec(spec)
    elif not isinstance(spec, NetworkSpec):
        raise ConfigError(f"expected an architecture name or NetworkSpec, got {type(spec).__name__}")
    net = Network(spec, dtype=dtype)
    init_rng = rng.stream("init") if isinstance(rng, Rng) else Rng(0 if rng is None else int(rng)).stream("init")
    return net.initialize(init_rng)
