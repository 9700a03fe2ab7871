"""Trainable-parameter and FLOP accounting with per-layer breakdowns.

FLOP convention
---------------
Convolution MACs = output_length * out_channels * (in_channels / groups) * kernel_size,
fully connected MACs = Din * Dout. FLOPs = ``flops_per_mac`` * MACs. The default of
2 FLOPs per MAC (multiply and add counted separately, as the TensorFlow profiler
does) lands within 3% of the published FLOP column; pass ``flops_per_mac=1`` for
plain MAC counting. Bias adds, BN, ReLU, pooling and the residual additions are
excluded unless their toggles are set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .layers import BatchNorm1d, Conv1d, Layer, Linear, MaxPool1d
from .network import Network
from .specs import ARCHITECTURES

# Published "# Trainable Parameters" and "FLOPs" rows. The 14-layer baselines
# appear only in a figure, without counts.
TABLE_PARAMS = {
    "ResNet1Dv1-26": 9.37e4,
    "ResNet1Dv2-26": 9.30e4,
    "ResNeXt1D-26": 9.38e4,
    "ResNet1Dv1-14-Wider": 1.01e5,
    "ResNet1Dv2-14-Wider": 1.00e5,
    "ResNeXt1D-14-Wider1": 9.77e4,
    "ResNeXt1D-14-Wider2": 1.14e5,
    "ResNeXt1D-38": 1.35e6,
}
TABLE_FLOPS = {
    "ResNet1Dv1-26": 3.70e6,
    "ResNet1Dv2-26": 3.69e6,
    "ResNeXt1D-26": 3.84e6,
    "ResNet1Dv1-14-Wider": 4.11e6,
    "ResNet1Dv2-14-Wider": 4.09e6,
    "ResNeXt1D-14-Wider1": 4.25e6,
    "ResNeXt1D-14-Wider2": 4.99e6,
    "ResNeXt1D-38": 5.42e6,
}
# The 38-layer entry is ten times the value its FLOPs and its 26-layer sibling imply.
SUSPECTED_TYPOS = {"ResNeXt1D-38": 1.35e5}


def round_sig(x: float, digits: int = 3) -> float:
    return float(f"{x:.{digits - 1}e}")


@dataclass
class LayerCount:
    name: str
    kind: str
    weights: int = 0
    biases: int = 0
    bn: int = 0

    @property
    def total(self) -> int:
        return self.weights + self.biases + self.bn


@dataclass
class ParameterReport:
    arch: str
    rows: list[LayerCount] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(r.total for r in self.rows)

    @property
    def without_bn(self) -> int:
        return sum(r.weights + r.biases for r in self.rows)

    @property
    def without_conv_bias(self) -> int:
        return sum(r.weights + r.bn + (r.biases if r.kind == "fc" else 0) for r in self.rows)

    @property
    def bn_parameters(self) -> int:
        return sum(r.bn for r in self.rows)

    @property
    def bn_running_stats(self) -> int:
        """Non-trainable scalars; never part of the trainable total."""
        return self.bn_parameters

    def conventions(self) -> dict[str, int]:
        return {
            "with_bn": self.total,
            "without_bn": self.without_bn,
            "without_conv_bias": self.without_conv_bias,
        }

    def format(self) -> str:
        lines = [f"{self.arch}: {self.total} trainable parameters",
                 f"  {'layer':<34}{'kind':<8}{'weights':>9}{'bias':>7}{'bn':>6}"]
        for r in self.rows:
            lines.append(f"  {r.name:<34}{r.kind:<8}{r.weights:>9}{r.biases:>7}{r.bn:>6}")
        for k, v in self.conventions().items():
            lines.append(f"  total[{k}] = {v}")
        lines.append(f"  excluded running statistics = {self.bn_running_stats}")
        return "\n".join(lines)


def parameter_report(net: Network) -> ParameterReport:
    report = ParameterReport(net.spec.name)
    for name, layer in net.named_layers():
        if isinstance(layer, Conv1d):
            report.rows.append(LayerCount(name, "conv", layer.weight.size,
                                          layer.bias.size if layer.bias is not None else 0))
        elif isinstance(layer, BatchNorm1d):
            report.rows.append(LayerCount(name, "bn", bn=layer.state.gamma.size + layer.state.beta.size))
        elif isinstance(layer, Linear):
            report.rows.append(LayerCount(name, "fc", layer.weight.size, layer.bias.size))
    return report


def count_parameters(net: Network) -> int:
    """Trainable scalars: conv/fc weights and biases plus BN gamma and beta."""
    return parameter_report(net).total


@dataclass
class FlopRow:
    name: str
    kind: str
    macs: int
    extra: int = 0  # element-wise work, counted only when toggled on


@dataclass
class FlopReport:
    arch: str
    input_length: int
    flops_per_mac: int
    rows: list[FlopRow] = field(default_factory=list)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total(self) -> int:
        return self.flops_per_mac * self.macs + sum(r.extra for r in self.rows)

    def format(self) -> str:
        lines = [f"{self.arch} @ L={self.input_length}: {self.total} FLOPs "
                 f"({self.macs} MACs x {self.flops_per_mac}, plus element-wise extras)"]
        for r in self.rows:
            lines.append(f"  {r.name:<34}{r.kind:<8}{r.macs:>10}{r.extra:>9}")
        return "\n".join(lines)


def _walk_flops(layers: Iterable[tuple[str, Layer]], length: int, channels: int, report: FlopReport,
                include_bias: bool, include_bn: bool, include_relu: bool, include_pool: bool,
                include_add: bool):
    for name, layer in layers:
        if isinstance(layer, Conv1d):
            lout = layer.output_length(length)
            extra = lout * layer.params.out_channels if include_bias and layer.bias is not None else 0
            report.rows.append(FlopRow(name, "conv", layer.macs(length), extra))
            length, channels = lout, layer.params.out_channels
        elif isinstance(layer, BatchNorm1d):
            if include_bn:
                report.rows.append(FlopRow(name, "bn", 0, 2 * length * channels))
        elif isinstance(layer, MaxPool1d):
            lout = layer.output_length(length)
            if include_pool:
                report.rows.append(FlopRow(name, "pool", 0, lout * channels * (layer.kernel - 1)))
            length = lout
        elif isinstance(layer, Linear):
            report.rows.append(FlopRow(name, "fc", layer.macs(), layer.bias.size if include_bias else 0))
    return length, channels


def flop_report(net: Network | Iterable, input_length: int | None = None, flops_per_mac: int = 2,
                include_bias: bool = False, include_bn: bool = False, include_relu: bool = False,
                include_pool: bool = False, include_add: bool = False) -> FlopReport:
    if not isinstance(net, Network):
        layers = list(net)
        report = FlopReport("custom", input_length or 0, flops_per_mac)
        _walk_flops(layers, input_length or 0, 0, report, include_bias, include_bn, include_relu,
                    include_pool, include_add)
        return report
    spec = net.spec
    length = spec.input_length if input_length is None else input_length
    report = FlopReport(spec.name, length, flops_per_mac)
    channels = spec.input_channels
    if net.stem is not None:
        length, channels = _walk_flops(
            [("stem.conv", net.stem.conv), ("stem.bn", net.stem.bn), ("stem.pool", net.stem.pool)],
            length, channels, report, include_bias, include_bn, include_relu, include_pool, include_add)
        if include_relu:
            report.rows.append(FlopRow("stem.relu", "relu", 0, length * 2 * channels))
    for i, stage in enumerate(net.stages):
        for j, unit in enumerate(stage.units):
            prefix = f"stage{i + 1}.unit{j + 1}"
            lin, cin = length, channels
            body = [(f"{prefix}.{n}", l) for n, l in unit.children()
                    if n not in ("shortcut", "shortcut_bn")]
            length, channels = _walk_flops(body, lin, cin, report, include_bias, include_bn,
                                           include_relu, include_pool, include_add)
            if unit.shortcut is not None:
                sc = [(f"{prefix}.shortcut", unit.shortcut)]
                if unit.shortcut_bn is not None:
                    sc.append((f"{prefix}.shortcut_bn", unit.shortcut_bn))
                _walk_flops(sc, lin, cin, report, include_bias, include_bn, include_relu,
                            include_pool, include_add)
            if include_relu:
                report.rows.append(FlopRow(f"{prefix}.relu", "relu", 0, 3 * length * channels))
            if include_add:
                report.rows.append(FlopRow(f"{prefix}.add", "add", 0, length * channels))
    if net.final_bn is not None:
        _walk_flops([("final_bn", net.final_bn)], length, channels, report, include_bias, include_bn,
                    include_relu, include_pool, include_add)
    _walk_flops([("fc", net.fc)], 1, channels, report, include_bias, include_bn, include_relu,
                include_pool, include_add)
    return report


def count_flops(net: Network | Iterable, input_length: int | None = None, flops_per_mac: int = 2,
                **toggles) -> int:
    return flop_report(net, input_length, flops_per_mac, **toggles).total


def table_rows(input_length: int = 224) -> list[dict]:
    """One row per architecture: computed counts next to the published ones."""
    from .network import build_network

    rows = []
    for name in ARCHITECTURES:
        net = build_network(name)
        params = parameter_report(net)
        flops = flop_report(net, input_length)
        rows.append({
            "name": name,
            "depth": net.spec.depth,
            "params": params.total,
            "params_without_bn": params.without_bn,
            "flops": flops.total,
            "macs": flops.macs,
            "table_params": TABLE_PARAMS.get(name),
            "table_flops": TABLE_FLOPS.get(name),
        })
    return rows


def discrepancy_report(rows: list[dict] | None = None, flop_tolerance: float = 0.10) -> list[str]:
    """Human-readable notes on every disagreement with the published table."""
    rows = table_rows() if rows is None else rows
    notes = []
    for r in rows:
        name = r["name"]
        tp, tf = r["table_params"], r["table_flops"]
        if tp is not None and round_sig(r["params"]) != tp:
            alt = SUSPECTED_TYPOS.get(name)
            if alt is not None and round_sig(r["params"]) == alt:
                notes.append(f"{name}: computed {r['params']} parameters (~{alt:.3g}); published {tp:.3g} "
                             f"is 10x larger, consistent with a typo")
            else:
                notes.append(f"{name}: computed {r['params']} parameters rounds to "
                             f"{round_sig(r['params']):.3g}, published {tp:.3g} "
                             f"(without BN: {r['params_without_bn']})")
        if tf is not None and abs(r["flops"] - tf) / tf > flop_tolerance:
            notes.append(f"{name}: computed {r['flops']} FLOPs vs published {tf:.3g}")
    return notes


def format_table(rows: list[dict] | None = None) -> str:
    rows = table_rows() if rows is None else rows
    head = f"{'architecture':<22}{'depth':>6}{'params':>10}{'table':>10}{'FLOPs':>11}{'table':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        tp = f"{r['table_params']:.3g}" if r["table_params"] else "-"
        tf = f"{r['table_flops']:.3g}" if r["table_flops"] else "-"
        lines.append(f"{r['name']:<22}{r['depth']:>6}{r['params']:>10}{tp:>10}{r['flops']:>11}{tf:>10}")
    return "\n".join(lines)
