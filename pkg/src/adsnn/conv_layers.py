"""Standard and depthwise-separable convolution blocks with an analytic
multiply-accumulate cost model.

Costs count multiply-accumulates, so a standard convolution layer costs
``kernel_size^2 * in_channels * out_channels * feature_size^2`` while the
separable factorisation costs the sum of its depthwise and pointwise parts.
Python integers keep the products exact at any magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from adsnn.tensor import (
    Tensor,
    batch_norm,
    conv2d,
    depthwise_conv2d,
    relu,
)

__all__ = [
    "CostParams",
    "NormParams",
    "ConvBlockParams",
    "DwsBlockParams",
    "cost_standard",
    "cost_depthwise",
    "cost_pointwise",
    "cost_dws",
    "cost_reduction",
    "conv_block_forward",
    "dws_block_forward",
    "he_uniform",
    "init_conv_block",
    "init_dws_block",
]


@dataclass(frozen=True)
class CostParams:
    """Geometry of one convolution layer for cost accounting.

    ``feature_size`` is the width/height of the square grid over which the
    kernel is evaluated — the layer's output grid, which for stride-1
    same-padded layers equals its input grid. ``output_size`` is carried for
    reporting only.
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    feature_size: int
    output_size: int | None = None

    def __post_init__(self):
        for name in ("kernel_size", "in_channels", "out_channels", "feature_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def cost_standard(p: CostParams) -> int:
    """Multiply-accumulates of a standard convolution."""
    return p.kernel_size**2 * p.in_channels * p.out_channels * p.feature_size**2


def cost_depthwise(p: CostParams) -> int:
    """Multiply-accumulates of the per-channel (depthwise) stage."""
    return p.kernel_size**2 * p.in_channels * p.feature_size**2


def cost_pointwise(p: CostParams) -> int:
    """Multiply-accumulates of the 1x1 channel-mixing (pointwise) stage."""
    return p.in_channels * p.out_channels * p.feature_size**2


def cost_dws(p: CostParams) -> int:
    """Total multiply-accumulates of the separable factorisation."""
    return cost_depthwise(p) + cost_pointwise(p)


def cost_reduction(p: CostParams) -> Fraction:
    """Exact ratio separable/standard; always 1/out_channels + 1/kernel_size^2."""
    return Fraction(cost_dws(p), cost_standard(p))


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


@dataclass
class NormParams:
    """Per-channel batch-norm parameter set (two learned, two running)."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "NormParams":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=Tensor(np.zeros(channels, dtype=dtype)),
            running_var=Tensor(np.ones(channels, dtype=dtype)),
        )

    def tensors(self) -> list[Tensor]:
        return [self.gamma, self.beta, self.running_mean, self.running_var]


@dataclass
class ConvBlockParams:
    """Standard convolution followed by optional batch norm and ReLU."""

    kernel: Tensor  # (k, k, in_channels, out_channels)
    norm: NormParams | None
    stride: int = 1

    def tensors(self) -> list[Tensor]:
        out = [self.kernel]
        if self.norm is not None:
            out += self.norm.tensors()
        return out

    def param_count(self) -> int:
        k, _, m, n = self.kernel.shape
        return k * k * m * n + (4 * n if self.norm is not None else 0)


@dataclass
class DwsBlockParams:
    """Depthwise-separable block: depthwise filter stage, then 1x1 pointwise
    mixing stage, each followed by optional batch norm and ReLU."""

    depthwise_kernel: Tensor  # (k, k, channels)
    pointwise_kernel: Tensor  # (1, 1, channels, out_channels)
    norm1: NormParams | None
    norm2: NormParams | None
    stride: int = 1

    def __post_init__(self):
        if self.depthwise_kernel.shape[2] != self.pointwise_kernel.shape[2]:
            raise ValueError(
                f"pointwise input channels {self.pointwise_kernel.shape[2]} must equal "
                f"depthwise channels {self.depthwise_kernel.shape[2]}"
            )

    def tensors(self) -> list[Tensor]:
        out = [self.depthwise_kernel, self.pointwise_kernel]
        for norm in (self.norm1, self.norm2):
            if norm is not None:
                out += norm.tensors()
        return out

    def param_count(self) -> int:
        k, _, m = self.depthwise_kernel.shape
        n = self.pointwise_kernel.shape[3]
        count = k * k * m + m * n
        if self.norm1 is not None:
            count += 4 * m
        if self.norm2 is not None:
            count += 4 * n
        return count


def conv_block_forward(x: Tensor, params: ConvBlockParams, training: bool) -> Tensor:
    out = conv2d(x, params.kernel, stride=params.stride, padding="same")
    if params.norm is not None:
        out = batch_norm(
            out,
            params.norm.gamma,
            params.norm.beta,
            params.norm.running_mean,
            params.norm.running_var,
            training=training,
        )
    return relu(out)


def dws_block_forward(x: Tensor, params: DwsBlockParams, training: bool) -> Tensor:
    out = depthwise_conv2d(x, params.depthwise_kernel, stride=params.stride, padding="same")
    if params.norm1 is not None:
        out = batch_norm(
            out,
            params.norm1.gamma,
            params.norm1.beta,
            params.norm1.running_mean,
            params.norm1.running_var,
            training=training,
        )
    out = relu(out)
    out = conv2d(x=out, kernel=params.pointwise_kernel, stride=1, padding="valid")
    if params.norm2 is not None:
        out = batch_norm(
            out,
            params.norm2.gamma,
            params.norm2.beta,
            params.norm2.running_mean,
            params.norm2.running_var,
            training=training,
        )
    return relu(out)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    """Uniform(-limit, limit) with limit = sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def init_conv_block(
    rng: np.random.Generator,
    kernel_size: int,
    in_channels: int,
    out_channels: int,
    stride: int = 1,
    dtype=np.float32,
) -> ConvBlockParams:
    kernel = he_uniform(
        rng,
        (kernel_size, kernel_size, in_channels, out_channels),
        fan_in=kernel_size * kernel_size * in_channels,
        dtype=dtype,
    )
    return ConvBlockParams(kernel=kernel, norm=NormParams.identity(out_channels, dtype), stride=stride)


def init_dws_block(
    rng: np.random.Generator,
    kernel_size: int,
    channels: int,
    out_channels: int,
    stride: int = 1,
    dtype=np.float32,
) -> DwsBlockParams:
    depthwise = he_uniform(
        rng,
        (kernel_size, kernel_size, channels),
        fan_in=kernel_size * kernel_size,
        dtype=dtype,
    )
    pointwise = he_uniform(
        rng, (1, 1, channels, out_channels), fan_in=channels, dtype=dtype
    )
    return DwsBlockParams(
        depthwise_kernel=depthwise,
        pointwise_kernel=pointwise,
        norm1=NormParams.identity(channels, dtype),
        norm2=NormParams.identity(out_channels, dtype),
        stride=stride,
    )
