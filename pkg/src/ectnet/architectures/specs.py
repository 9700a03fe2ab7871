"""Declarative descriptions of the residual networks and the named catalogue."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass

from ..errors import ConfigError

VARIANTS = ("v1", "v2", "resnext")
EXPANSION = {"v1": 4, "v2": 4, "resnext": 2}


@dataclass(frozen=True)
class ResidualUnitSpec:
    """One bottleneck unit: 1x1 reduce, 3-tap (maybe grouped) conv, 1x1 expand.

    ``stride`` is applied by the middle conv and by the projection shortcut.
    """

    variant: str
    bottleneck_channels: int
    out_channels: int
    cardinality: int = 1
    stride: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown residual variant {self.variant!r}")
        if self.bottleneck_channels < 1 or self.stride < 1 or self.cardinality < 1:
            raise ConfigError(f"invalid unit spec {self}")
        if self.out_channels != EXPANSION[self.variant] * self.bottleneck_channels:
            raise ConfigError(
                f"{self.variant} unit needs out_channels == {EXPANSION[self.variant]} x bottleneck "
                f"({self.out_channels} vs {self.bottleneck_channels})"
            )
        if self.variant != "resnext" and self.cardinality != 1:
            raise ConfigError("cardinality > 1 is only meaningful for resnext units")
        if self.bottleneck_channels % self.cardinality:
            raise ConfigError(
                f"cardinality {self.cardinality} does not divide bottleneck width {self.bottleneck_channels}"
            )

    def with_stride(self, stride: int) -> "ResidualUnitSpec":
        return ResidualUnitSpec(self.variant, self.bottleneck_channels, self.out_channels, self.cardinality, stride)


@dataclass(frozen=True)
class StageSpec:
    units: int
    unit: ResidualUnitSpec

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError("a stage needs at least one residual unit")


@dataclass(frozen=True)
class NetworkSpec:
    """Stem conv -> max pool -> residual stages -> GAP -> fully connected head.

    ``stages`` empty together with ``stem_filters == 0`` describes a head-only
    network (GAP + fc over ``input_channels`` features), useful for accounting.
    ``conv_bias`` keeps a bias on every convolution, as Keras layers do by
    default; it is what reproduces the published parameter counts.
    """

    name: str
    stem_filters: int
    stages: tuple[StageSpec, ...]
    num_classes: int = 20
    input_length: int = 224
    input_channels: int = 2
    conv_bias: bool = True
    stem_kernel: int = 3
    pool_kernel: int = 3
    pool_stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        self.validate()

    @property
    def variant(self) -> str | None:
        return self.stages[0].unit.variant if self.stages else None

    @property
    def head_only(self) -> bool:
        return not self.stages and self.stem_filters == 0

    @property
    def depth(self) -> int:
        """Weighted layers: stem + three convs per unit + fc."""
        if self.head_only:
            return 1
        return 1 + 3 * sum(s.units for s in self.stages) + 1

    @property
    def feature_channels(self) -> int:
        return self.stages[-1].unit.out_channels if self.stages else self.input_channels

    def validate(self) -> None:
        if self.num_classes < 1 or self.input_channels < 1 or self.input_length < 1:
            raise ConfigError("num_classes, input_channels and input_length must be positive")
        if self.head_only:
            return
        if self.stem_filters < 1:
            raise ConfigError("stem_filters must be positive")
        if len(self.stages) != 4:
            raise ConfigError(f"a network has exactly 4 stages, got {len(self.stages)}")
        variants = {s.unit.variant for s in self.stages}
        if len(variants) != 1:
            raise ConfigError(f"mixed unit variants {sorted(variants)}")
        for i, stage in enumerate(self.stages):
            want = 1 if i == 0 else 2
            if stage.unit.stride != want:
                raise ConfigError(f"stage {i + 1} first-unit stride must be {want}, got {stage.unit.stride}")
        m = re.search(r"-(\d+)", self.name)
        if m and int(m.group(1)) != self.depth:
            raise ConfigError(f"name {self.name!r} implies depth {m.group(1)}, spec has depth {self.depth}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["stages"] = tuple(
            StageSpec(s["units"], ResidualUnitSpec(**s["unit"])) for s in d.get("stages", ())
        )
        return cls(**d)


def _spec(name: str, variant: str, stem: int, widths, units: int, cardinality: int = 1) -> NetworkSpec:
    stages = tuple(
        StageSpec(
            units,
            ResidualUnitSpec(variant, w, EXPANSION[variant] * w, cardinality, 1 if i == 0 else 2),
        )
        for i, w in enumerate(widths)
    )
    return NetworkSpec(name=name, stem_filters=stem, stages=stages)


# Bottleneck widths per stage. The 14-layer baselines use width 6 in the stem;
# ResNeXt1D-14 reuses the ResNeXt1D-26 brackets with one unit per stage.
# ResNeXt1D-14-Wider1 stages 3-4 use 56/112: the printed 80/160 are not
# divisible by C=7 and break the doubling rule.
ARCHITECTURES: dict[str, NetworkSpec] = {
    s.name: s
    for s in (
        _spec("ResNet1Dv1-14", "v1", 6, (6, 12, 24, 48), 1),
        _spec("ResNet1Dv2-14", "v2", 6, (6, 12, 24, 48), 1),
        _spec("ResNeXt1D-14", "resnext", 6, (10, 20, 40, 80), 1, 5),
        _spec("ResNet1Dv1-26", "v1", 6, (6, 12, 24, 48), 2),
        _spec("ResNet1Dv2-26", "v2", 6, (6, 12, 24, 48), 2),
        _spec("ResNeXt1D-26", "resnext", 6, (10, 20, 40, 80), 2, 5),
        _spec("ResNet1Dv1-14-Wider", "v1", 8, (8, 16, 32, 64), 1),
        _spec("ResNet1Dv2-14-Wider", "v2", 8, (8, 16, 32, 64), 1),
        _spec("ResNeXt1D-14-Wider1", "resnext", 8, (14, 28, 56, 112), 1, 7),
        _spec("ResNeXt1D-14-Wider2", "resnext", 8, (15, 30, 60, 120), 1, 5),
        _spec("ResNeXt1D-38", "resnext", 6, (10, 20, 40, 80), 3, 5),
    )
}

ARCHITECTURE_NAMES: tuple[str, ...] = tuple(ARCHITECTURES)


def get_spec(name: str) -> NetworkSpec:
    try:
        return ARCHITECTURES[name]
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; choose from {', '.join(ARCHITECTURES)}") from None


def head_only_spec(features: int, num_classes: int = 20, name: str = "head-only") -> NetworkSpec:
    return NetworkSpec(name=name, stem_filters=0, stages=(), num_classes=num_classes,
                       input_channels=features)

