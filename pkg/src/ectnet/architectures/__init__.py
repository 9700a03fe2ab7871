"""Residual network catalogue, construction, accounting and checkpoints."""
from .accounting import (
    TABLE_FLOPS,
    TABLE_PARAMS,
    count_flops,
    count_parameters,
    discrepancy_report,
    flop_report,
    format_table,
    parameter_report,
    round_sig,
    table_rows,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import BatchNorm1d, Conv1d, Linear, ResidualUnit, build_residual_unit
from .network import Network, build_network
from .specs import (
    ARCHITECTURE_NAMES,
    ARCHITECTURES,
    NetworkSpec,
    ResidualUnitSpec,
    StageSpec,
    get_spec,
    head_only_spec,
)

__all__ = [
    "ARCHITECTURES",
    "ARCHITECTURE_NAMES",
    "BatchNorm1d",
    "Conv1d",
    "Linear",
    "Network",
    "NetworkSpec",
    "ResidualUnit",
    "ResidualUnitSpec",
    "StageSpec",
    "TABLE_FLOPS",
    "TABLE_PARAMS",
    "build_network",
    "build_residual_unit",
    "count_flops",
    "count_parameters",
    "discrepancy_report",
    "flop_report",
    "format_table",
    "get_spec",
    "head_only_spec",
    "load_checkpoint",
    "parameter_report",
    "round_sig",
    "save_checkpoint",
    "table_rows",
]
