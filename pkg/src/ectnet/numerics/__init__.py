"""Tensor type, random streams and layer kernels."""
from .ops import (
    BatchNormState,
    ConvParams,
    batchnorm1d,
    concat_channels,
    conv1d,
    fully_connected,
    global_avg_pool,
    maxpool1d,
    output_length,
    relu,
    slice_channels,
    softmax,
    softmax_cross_entropy,
)
from .parallel import threads
from .rng import Rng, as_rng
from .tensor import Tensor, backward, grad_enabled, no_grad

__all__ = [
    "BatchNormState",
    "ConvParams",
    "Rng",
    "Tensor",
    "as_rng",
    "backward",
    "batchnorm1d",
    "concat_channels",
    "conv1d",
    "fully_connected",
    "global_avg_pool",
    "grad_enabled",
    "maxpool1d",
    "no_grad",
    "output_length",
    "relu",
    "slice_channels",
    "softmax",
    "softmax_cross_entropy",
    "threads",
]
