"""Forward/backward kernels for the 1-d layer primitives.

Activations use the (N, L, C) layout: batch, time, channel.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor


def output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    """floor((L + 2p - k) / s) + 1, or a non-positive value if the window never fits."""
    span = length + 2 * padding - kernel_size
    if span < 0:
        return 0
    return span // stride + 1


@dataclass
class ConvParams:
    """Weights and hyper-parameters of one (possibly grouped) 1-d convolution.

    ``weight`` has shape (out_channels, in_channels // groups, kernel_size).
    """

    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    weight: Tensor | None = None
    bias: Tensor | None = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.groups < 1 or self.padding < 0:
            raise ShapeError(
                f"invalid conv hyper-parameters k={self.kernel_size} s={self.stride} "
                f"g={self.groups} pad={self.padding}"
            )
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible by groups={self.groups}"
            )
        expected = (self.out_channels, self.in_channels // self.groups, self.kernel_size)
        if self.weight is None:
            self.weight = Tensor(np.zeros(expected), requires_grad=True)
        elif self.weight.shape != expected:
            raise ShapeError(f"conv weight shape {self.weight.shape}, expected {expected}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ShapeError(f"conv bias shape {self.bias.shape}, expected ({self.out_channels},)")

    def output_length(self, length: int) -> int:
        return output_length(length, self.kernel_size, self.stride, self.padding)


def _pad_time(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (padding, padding), (0, 0)), constant_values=value)


def _scatter_windows(dwin: np.ndarray, padded_len: int, stride: int) -> np.ndarray:
    """Adjoint of window extraction: (N, L', C, k) -> (N, Lp, C)."""
    n, lout, c, k = dwin.shape
    out = np.zeros((n, padded_len, c), dtype=dwin.dtype)
    stop = stride * (lout - 1) + 1
    for j in range(k):
        out[:, j : j + stop : stride, :] += dwin[..., j]
    return out


def conv1d(x: Tensor, p: ConvParams) -> Tensor:
    """Zero-padded grouped 1-d cross-correlation, (N, L, Cin) -> (N, L', Cout)."""
    if x.data.ndim != 3:
        raise ShapeError(f"conv1d expects (N, L, C) input, got {x.shape}")
    n, length, cin = x.shape
    if cin != p.in_channels:
        raise ShapeError(f"conv1d: input has {cin} channels, layer expects {p.in_channels}")
    lout = p.output_length(length)
    if lout <= 0:
        raise ShapeError(f"conv1d: non-positive output length for L={length}, k={p.kernel_size}")
    k, s, g = p.kernel_size, p.stride, p.groups
    cg, cog = cin // g, p.out_channels // g
    w = p.weight.data
    xp = _pad_time(x.data, p.padding)
    padded_len = xp.shape[1]

    if k == 1:
        win = xp[:, : s * (lout - 1) + 1 : s, :]  # (N, L', Cin)
        cols = win.reshape(n * lout, g, cg)
    else:
        win = sliding_window_view(xp, k, axis=1)[:, ::s][:, :lout]  # (N, L', Cin, k)
        cols = win.reshape(n * lout, g, cg * k)
    # (G, N*L', cg*k) @ (G, cg*k, cog)
    cols_g = cols.transpose(1, 0, 2) if g > 1 else cols.reshape(1, n * lout, -1)
    w_g = w.reshape(g, cog, -1).transpose(0, 2, 1)
    out_g = np.matmul(cols_g, w_g)  # (G, N*L', cog)
    if g > 1:
        out = out_g.transpose(1, 0, 2).reshape(n, lout, p.out_channels)
    else:
        out = out_g.reshape(n, lout, p.out_channels)
    if p.bias is not None:
        out = out + p.bias.data

    parents = (x, p.weight) if p.bias is None else (x, p.weight, p.bias)

    def _backward(dy: np.ndarray):
        dy_g = dy.reshape(n * lout, g, cog).transpose(1, 0, 2)  # (G, N*L', cog)
        dw = None
        if p.weight.requires_grad:
            dw_g = np.matmul(cols_g.transpose(0, 2, 1), dy_g)  # (G, cg*k, cog)
            dw = dw_g.transpose(0, 2, 1).reshape(w.shape)
        dx = None
        if x.requires_grad:
            dcols = np.matmul(dy_g, w_g.transpose(0, 2, 1))  # (G, N*L', cg*k)
            dcols = dcols.transpose(1, 0, 2)
            if k == 1:
                dxp = np.zeros((n, padded_len, cin), dtype=dy.dtype)
                dxp[:, : s * (lout - 1) + 1 : s, :] = dcols.reshape(n, lout, cin)
            else:
                dxp = _scatter_windows(dcols.reshape(n, lout, cin, k), padded_len, s)
            dx = dxp[:, p.padding : p.padding + length, :] if p.padding else dxp
        grads = [dx, dw]
        if p.bias is not None:
            grads.append(dy.sum(axis=(0, 1)))
        return grads

    return Tensor._from_op(out, parents, _backward, "conv1d")


def maxpool1d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """Max pooling over time; padding is a -inf sentinel, ties route to the lowest index."""
    n, length, c = x.shape
    lout = output_length(length, kernel, stride, padding)
    if lout <= 0:
        raise ShapeError(f"maxpool1d: non-positive output length for L={length}, k={kernel}")
    xp = _pad_time(x.data, padding, -np.inf)
    win = sliding_window_view(xp, kernel, axis=1)[:, ::stride][:, :lout]  # (N, L', C, k)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    padded_len = xp.shape[1]

    def _backward(dy: np.ndarray):
        dxp = np.zeros((n, padded_len, c), dtype=dy.dtype)
        stop = stride * (lout - 1) + 1
        for j in range(kernel):
            dxp[:, j : j + stop : stride, :] += np.where(idx == j, dy, 0.0)
        return (dxp[:, padding : padding + length, :],)

    return Tensor._from_op(np.ascontiguousarray(out), (x,), _backward, "maxpool1d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics."""

    num_channels: int
    momentum: float = 0.9
    epsilon: float = 1e-5
    training: bool = True
    dtype: type = np.float64
    gamma: Tensor = field(default=None)
    beta: Tensor = field(default=None)
    running_mean: np.ndarray | None = field(default=None)
    running_var: np.ndarray | None = field(default=None)

    def __post_init__(self):
        c = self.num_channels
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.gamma is None:
            self.gamma = Tensor(np.ones(c, dtype=self.dtype), requires_grad=True)
        if self.beta is None:
            self.beta = Tensor(np.zeros(c, dtype=self.dtype), requires_grad=True)
        if self.running_mean is None:
            self.running_mean = np.zeros(c, dtype=self.dtype)
        if self.running_var is None:
            self.running_var = np.ones(c, dtype=self.dtype)
        for arr in (self.gamma.shape, self.beta.shape, self.running_mean.shape, self.running_var.shape):
            if arr != (c,):
                raise ShapeError(f"batch-norm tensors must have shape ({c},)")

    @property
    def mode(self) -> str:
        return "training" if self.training else "inference"


def batchnorm1d(x: Tensor, s: BatchNormState) -> Tensor:
    n, length, c = x.shape
    if c != s.num_channels:
        raise ShapeError(f"batchnorm1d: {c} channels, state has {s.num_channels}")
    gamma, beta = s.gamma.data, s.beta.data
    if s.training:
        m = n * length
        if m < 2:
            raise ShapeError("batchnorm1d in training mode needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 1))
        centered = x.data - mean
        var = (centered * centered).mean(axis=(0, 1))
        inv_std = 1.0 / np.sqrt(var + s.epsilon)
        xhat = centered * inv_std
        s.running_mean = s.momentum * s.running_mean + (1.0 - s.momentum) * mean
        s.running_var = s.momentum * s.running_var + (1.0 - s.momentum) * var

        def _backward(dy: np.ndarray):
            dgamma = (dy * xhat).sum(axis=(0, 1))
            dbeta = dy.sum(axis=(0, 1))
            dxhat = dy * gamma
            dx = inv_std / m * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
            return dx, dgamma, dbeta
    else:
        if s.running_mean is None or s.running_var is None:
            raise ValueError("batchnorm1d inference requires initialized running statistics")
        inv_std = 1.0 / np.sqrt(s.running_var + s.epsilon)
        xhat = (x.data - s.running_mean) * inv_std

        def _backward(dy: np.ndarray):
            return dy * (gamma * inv_std), (dy * xhat).sum(axis=(0, 1)), dy.sum(axis=(0, 1))

    out = (gamma * xhat + beta).astype(x.dtype, copy=False)
    return Tensor._from_op(out, (x, s.gamma, s.beta), _backward, "batchnorm1d")


def global_avg_pool(x: Tensor) -> Tensor:
    n, length, c = x.shape
    if length < 1:
        raise ShapeError("global_avg_pool needs L >= 1")

    def _backward(dy: np.ndarray):
        return (np.broadcast_to(dy[:, None, :] / length, (n, length, c)).copy(),)

    return Tensor._from_op(x.data.mean(axis=1), (x,), _backward, "global_avg_pool")


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ W + b with W of shape (Din, Dout)."""
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"fully_connected: {x.shape} x {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"fully_connected bias shape {b.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def _backward(dy: np.ndarray):
        grads = [dy @ w.data.T, x.data.T @ dy]
        if b is not None:
            grads.append(dy.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, _backward, "fully_connected")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels, smoothing: float = 0.0) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Returns the scalar loss tensor and the (N, K) probability matrix.
    ``smoothing`` > 0 mixes the one-hot target with the uniform distribution.
    """
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects (N, K) logits, got {z.shape}")
    n, k = z.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ShapeError(f"labels must lie in [0, {k})")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    probs = np.exp(log_probs)
    rows = np.arange(n)
    target = np.zeros_like(z)
    target[rows, labels] = 1.0
    if smoothing:
        target = (1.0 - smoothing) * target + smoothing / k
        loss = np.asarray(-(target * log_probs).sum() / n, dtype=z.dtype)
    else:
        loss = np.asarray(-log_probs[rows, labels].mean(), dtype=z.dtype)

    def _backward(g: np.ndarray):
        return ((probs - target) * (g / n),)

    return Tensor._from_op(loss, (logits,), _backward, "softmax_cross_entropy"), probs


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate along the channel axis (used by split-transform-merge oracles)."""
    sizes = [t.shape[-1] for t in parts]
    bounds = np.cumsum([0] + sizes)

    def _backward(g: np.ndarray):
        return [g[..., bounds[i] : bounds[i + 1]] for i in range(len(parts))]

    return Tensor._from_op(np.concatenate([t.data for t in parts], axis=-1), parts, _backward, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def _backward(g: np.ndarray):
        out = np.zeros(shape, dtype=g.dtype)
        out[..., start:stop] = g
        return (out,)

    return Tensor._from_op(np.ascontiguousarray(x.data[..., start:stop]), (x,), _backward, "slice")
