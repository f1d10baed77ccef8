"""Two-dimensional multi-head self-attention and attention-augmented convolution.

A feature map (H, W, F_in) is flattened to an (H*W, F_in) matrix of
positions; each head projects it to queries, keys, and values, applies
scaled dot-product attention over all positions, and the concatenated head
outputs are linearly mixed and reshaped back to the spatial grid. The
augmented convolution concatenates an ordinary convolution branch with the
attention branch along the channel axis: convolution channels first.

Content-only attention: there are no positional terms, so the operator is
equivariant under permutations of the flattened positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from adsnn.tensor import (
    ShapeError,
    Tensor,
    concat,
    conv2d,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)
from adsnn.conv_layers import he_uniform

__all__ = [
    "AttentionConfig",
    "AttentionWeights",
    "default_attention_config",
    "init_attention_weights",
    "flatten_spatial",
    "unflatten_spatial",
    "single_head_attention",
    "multi_head_attention",
    "attention_augmented_conv",
    "attention_memory_estimate",
]


@dataclass(frozen=True)
class AttentionConfig:
    """Head count and total key/value depths; per-head depths are derived.

    ``value_depth == 0`` disables the attention branch entirely (used for
    degenerate, convolution-only configurations).
    """

    num_heads: int
    key_depth: int
    value_depth: int

    def __post_init__(self):
        if self.num_heads < 1:
            raise ValueError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.value_depth < 0 or self.key_depth < 0:
            raise ValueError("depths must be non-negative")
        if self.value_depth > 0:
            if self.key_depth % self.num_heads or self.value_depth % self.num_heads:
                raise ValueError(
                    f"key depth {self.key_depth} and value depth {self.value_depth} "
                    f"must divide evenly across {self.num_heads} heads"
                )
            if self.key_depth // self.num_heads == 0:
                raise ValueError("per-head key depth must be >= 1")

    @property
    def head_key_depth(self) -> int:
        return self.key_depth // self.num_heads

    @property
    def head_value_depth(self) -> int:
        return self.value_depth // self.num_heads


def default_attention_config(in_channels: int, num_heads: int = 4) -> AttentionConfig:
    """Quarter-of-input depths rounded up to a multiple of the head count."""
    depth = math.ceil(0.25 * in_channels)
    depth = -(-depth // num_heads) * num_heads
    return AttentionConfig(num_heads=num_heads, key_depth=depth, value_depth=depth)


@dataclass
class AttentionWeights:
    """Learned projections: per-head query/key/value maps plus the shared
    output mix applied to the concatenated heads."""

    query: list[Tensor] = field(default_factory=list)  # each (F_in, key_depth/heads)
    key: list[Tensor] = field(default_factory=list)
    value: list[Tensor] = field(default_factory=list)  # each (F_in, value_depth/heads)
    output: Tensor | None = None  # (value_depth, value_depth)

    def tensors(self) -> list[Tensor]:
        out: list[Tensor] = []
        for h in range(len(self.query)):
            out += [self.query[h], self.key[h], self.value[h]]
        if self.output is not None:
            out.append(self.output)
        return out

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors())


def init_attention_weights(
    rng: np.random.Generator,
    in_channels: int,
    config: AttentionConfig,
    dtype=np.float32,
) -> AttentionWeights:
    if config.value_depth == 0:
        return AttentionWeights()
    weights = AttentionWeights()
    for _ in range(config.num_heads):
        weights.query.append(he_uniform(rng, (in_channels, config.head_key_depth), in_channels, dtype))
        weights.key.append(he_uniform(rng, (in_channels, config.head_key_depth), in_channels, dtype))
        weights.value.append(he_uniform(rng, (in_channels, config.head_value_depth), in_channels, dtype))
    weights.output = he_uniform(rng, (config.value_depth, config.value_depth), config.value_depth, dtype)
    return weights


def flatten_spatial(x: Tensor) -> Tensor:
    """(H, W, F) -> (H*W, F) with row index h*W + w; a leading batch axis
    is preserved: (B, H, W, F) -> (B, H*W, F)."""
    if x.ndim == 3:
        h, w, f = x.shape
        return reshape(x, (h * w, f))
    if x.ndim == 4:
        b, h, w, f = x.shape
        return reshape(x, (b, h * w, f))
    raise ShapeError(f"flatten_spatial expects rank-3 or rank-4 input, got {x.shape}")


def unflatten_spatial(x: Tensor, height: int, width: int) -> Tensor:
    """Inverse of :func:`flatten_spatial` for a known grid size."""
    if x.ndim == 2 and x.shape[0] == height * width:
        return reshape(x, (height, width, x.shape[1]))
    if x.ndim == 3 and x.shape[1] == height * width:
        return reshape(x, (x.shape[0], height, width, x.shape[2]))
    raise ShapeError(f"cannot unflatten {x.shape} to ({height}, {width}, -1)")


def single_head_attention(
    x: Tensor,
    query_weight: Tensor,
    key_weight: Tensor,
    value_weight: Tensor,
    key_depth: int,
) -> Tensor:
    """Scaled dot-product attention for one head over flattened positions.

    ``softmax(Q K^T / sqrt(key_depth)) V`` where Q, K, V are the projected
    inputs; each attention row is a convex combination of value rows.
    """
    if key_depth < 1:
        raise ValueError(f"key_depth must be >= 1, got {key_depth}")
    q = matmul(x, query_weight)
    k = matmul(x, key_weight)
    v = matmul(x, value_weight)
    k_t = transpose(k, axes=tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    logits = mul(matmul(q, k_t), 1.0 / math.sqrt(key_depth))
    return matmul(softmax(logits, axis=-1), v)


def multi_head_attention(x: Tensor, weights: AttentionWeights, config: AttentionConfig) -> Tensor:
    """All heads concatenated and output-projected: (H, W, F_in) maps to
    (H, W, value_depth); a (B, H, W, F_in) batch maps item-wise."""
    if x.ndim not in (3, 4):
        raise ShapeError(f"multi_head_attention expects rank-3 or rank-4 input, got {x.shape}")
    if len(weights.query) != config.num_heads:
        raise ValueError(
            f"weights carry {len(weights.query)} heads, config wants {config.num_heads}"
        )
    height, width = x.shape[-3], x.shape[-2]
    flat = flatten_spatial(x)
    heads = [
        single_head_attention(
            flat, weights.query[h], weights.key[h], weights.value[h], config.head_key_depth
        )
        for h in range(config.num_heads)
    ]
    mixed = matmul(concat(heads, axis=-1), weights.output)
    return unflatten_spatial(mixed, height, width)


def attention_augmented_conv(
    x: Tensor,
    conv_kernel: Tensor,
    weights: AttentionWeights,
    config: AttentionConfig,
) -> Tensor:
    """Channel concatenation of a same-padded convolution branch with the
    multi-head attention branch: (H, W, F_in) -> (H, W, F_conv + value_depth)."""
    conv_out = conv2d(x, conv_kernel, stride=1, padding="same")
    if config.value_depth == 0:
        return conv_out
    attn_out = multi_head_attention(x, weights, config)
    if conv_out.shape[:-1] != attn_out.shape[:-1]:
        raise ShapeError(
            f"branch spatial shapes disagree: conv {conv_out.shape[:-1]} "
            f"vs attention {attn_out.shape[:-1]}"
        )
    return concat([conv_out, attn_out], axis=-1)


def attention_memory_estimate(height: int, width: int, num_heads: int) -> int:
    """Entries needed to store one attention map per head: (H*W)^2 * heads."""
    return (height * width) ** 2 * num_heads
