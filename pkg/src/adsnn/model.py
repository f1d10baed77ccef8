"""Model assembly: depthwise-separable backbone, attention-augmented layers,
and the softmax classifier head.

The backbone follows the canonical MobileNetV1 layer table — a 3x3 stride-2
stem of 32 filters followed by thirteen depthwise-separable blocks rising to
1024 filters — treated here as the normative table, with every filter count
scaled by the configured width multiplier. Attention-augmented convolution
layers are inserted between the last backbone block and global average
pooling; a dense layer and softmax produce class probabilities.

Model files embed the build configuration, so a loaded model always has an
architecture consistent with its tensors.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from adsnn.attention import (
    AttentionConfig,
    AttentionWeights,
    attention_augmented_conv,
    attention_memory_estimate,
    default_attention_config,
    init_attention_weights,
)
from adsnn.conv_layers import (
    ConvBlockParams,
    CostParams,
    DwsBlockParams,
    NormParams,
    conv_block_forward,
    cost_dws,
    cost_standard,
    dws_block_forward,
    he_uniform,
    init_conv_block,
    init_dws_block,
)
from adsnn.tensor import (
    ShapeError,
    Tensor,
    batch_norm,
    dense,
    global_avg_pool,
    read_tensor,
    relu,
    softmax,
    write_tensor,
)

__all__ = [
    "STEM_FILTERS",
    "STEM_STRIDE",
    "BACKBONE_FILTERS",
    "BACKBONE_STRIDES",
    "DEFAULT_ATTENTION_MEMORY_BUDGET",
    "MODEL_MAGIC",
    "MODEL_FORMAT_VERSION",
    "MemoryBudgetError",
    "ModelFormatError",
    "AttentionBlockSpec",
    "ModelConfig",
    "AttentionBlockParams",
    "Model",
    "desk_config",
    "default_attention_block_specs",
    "scale_channels",
    "backbone_grid_size",
    "build_adsnn",
    "forward",
    "forward_logits",
    "describe_layers",
    "count_parameters",
    "count_madds",
    "cost_table",
    "config_to_dict",
    "config_from_dict",
    "config_json",
    "config_hash",
    "save_model",
    "load_model",
]

# Normative backbone table: stem filters/stride, then per-block output
# filters and strides for the thirteen depthwise-separable blocks.
STEM_FILTERS = 32
STEM_STRIDE = 2
BACKBONE_FILTERS = (64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024, 1024)
BACKBONE_STRIDES = (1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1)

DEFAULT_ATTENTION_MEMORY_BUDGET = 1 << 26

MODEL_MAGIC = b"ADSNmdl"
MODEL_FORMAT_VERSION = 1


class MemoryBudgetError(ValueError):
    """Raised when an attention layer's score maps would exceed the budget."""


class ModelFormatError(ValueError):
    """Raised when a model file is malformed, truncated, or corrupted."""


@dataclass(frozen=True)
class AttentionBlockSpec:
    """One inserted attention-augmented layer: convolution branch filter
    count plus the attention depths and head count."""

    conv_channels: int
    value_depth: int
    key_depth: int
    num_heads: int = 4

    def __post_init__(self):
        if self.conv_channels < 1:
            raise ValueError(f"conv_channels must be >= 1, got {self.conv_channels}")
        # Delegates divisibility and head-count validation.
        self.attention_config()

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            num_heads=self.num_heads,
            key_depth=self.key_depth,
            value_depth=self.value_depth,
        )

    @property
    def out_channels(self) -> int:
        return self.conv_channels + self.value_depth


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 224
    num_classes: int = 4
    width_multiplier: float = 1.0
    attention_blocks: tuple[AttentionBlockSpec, ...] = ()
    seed: int = 0
    attention_memory_budget: int = DEFAULT_ATTENTION_MEMORY_BUDGET

    def __post_init__(self):
        if self.input_size < 1:
            raise ValueError(f"input_size must be >= 1, got {self.input_size}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 < self.width_multiplier <= 1.0:
            raise ValueError(
                f"width_multiplier must lie in (0, 1], got {self.width_multiplier}"
            )
        if self.attention_memory_budget < 1:
            raise ValueError("attention_memory_budget must be >= 1")
        object.__setattr__(self, "attention_blocks", tuple(self.attention_blocks))


def scale_channels(channels: int, width_multiplier: float) -> int:
    """Filter count under a width multiplier; never below one channel."""
    return max(1, int(round(channels * width_multiplier)))


def _same_out(size: int, stride: int) -> int:
    """Output grid size of a same-padded layer: ceil(size / stride)."""
    return -(-size // stride)


def backbone_grid_size(input_size: int) -> int:
    """Spatial size after the stem and all backbone blocks."""
    size = _same_out(input_size, STEM_STRIDE)
    for stride in BACKBONE_STRIDES:
        size = _same_out(size, stride)
    return size


def default_attention_block_specs(
    in_channels: int, count: int = 2, conv_channels=None
) -> tuple[AttentionBlockSpec, ...]:
    """Attention layer specs chained after a backbone of ``in_channels``:
    each uses quarter-of-input key/value depths rounded up to the head count,
    and a convolution branch of ``conv_channels`` filters (defaults to the
    block's input channel count). ``conv_channels`` may be a single count for
    every block or one count per block (which also sets the block count)."""
    if conv_channels is None or isinstance(conv_channels, int):
        per_block = [conv_channels] * count
    else:
        per_block = [int(c) for c in conv_channels]
    specs = []
    channels = in_channels
    for block_channels in per_block:
        cfg = default_attention_config(channels)
        spec = AttentionBlockSpec(
            conv_channels=channels if block_channels is None else block_channels,
            value_depth=cfg.value_depth,
            key_depth=cfg.key_depth,
            num_heads=cfg.num_heads,
        )
        specs.append(spec)
        channels = spec.out_channels
    return tuple(specs)


def desk_config(
    num_classes: int = 4,
    seed: int = 0,
    attention_blocks: tuple[AttentionBlockSpec, ...] | None = None,
) -> ModelConfig:
    """Small preset for CPU-scale experiments: 64-pixel inputs, quarter-width
    backbone, two light attention layers."""
    if attention_blocks is None:
        backbone_out = scale_channels(BACKBONE_FILTERS[-1], 0.25)
        attention_blocks = default_attention_block_specs(
            backbone_out, count=2, conv_channels=64
        )
    return ModelConfig(
        input_size=64,
        num_classes=num_classes,
        width_multiplier=0.25,
        attention_blocks=attention_blocks,
        seed=seed,
    )


@dataclass
class AttentionBlockParams:
    """Attention-augmented convolution layer followed by batch norm and ReLU."""

    conv_kernel: Tensor  # (k, k, in_channels, conv_channels)
    attention: AttentionWeights
    attention_config: AttentionConfig
    norm: NormParams | None

    def tensors(self) -> list[Tensor]:
        out = [self.conv_kernel] + self.attention.tensors()
        if self.norm is not None:
            out += self.norm.tensors()
        return out

    def param_count(self) -> int:
        k, _, m, n = self.conv_kernel.shape
        count = k * k * m * n + self.attention.param_count()
        if self.norm is not None:
            count += 4 * (n + self.attention_config.value_depth)
        return count


def attention_block_forward(x: Tensor, params: AttentionBlockParams, training: bool) -> Tensor:
    out = attention_augmented_conv(x, params.conv_kernel, params.attention, params.attention_config)
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


@dataclass
class Model:
    """Built network: parameter tensors in a fixed tape order plus metadata."""

    config: ModelConfig
    stem: ConvBlockParams | None
    backbone: list[DwsBlockParams] = field(default_factory=list)
    attention_layers: list[AttentionBlockParams] = field(default_factory=list)
    classifier_weight: Tensor | None = None
    classifier_bias: Tensor | None = None

    def state_tensors(self) -> list[Tensor]:
        """Every tensor (learned and running statistics) in tape order."""
        out: list[Tensor] = []
        if self.stem is not None:
            out += self.stem.tensors()
        for block in self.backbone:
            out += block.tensors()
        for layer in self.attention_layers:
            out += layer.tensors()
        if self.classifier_weight is not None:
            out.append(self.classifier_weight)
        if self.classifier_bias is not None:
            out.append(self.classifier_bias)
        return out

    def trainable_parameters(self) -> list[Tensor]:
        """Tensors updated by gradient descent (running stats excluded)."""
        return [t for t in self.state_tensors() if t.requires_grad]

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def parameter_count(self) -> int:
        return count_parameters(self)


def build_adsnn(config: ModelConfig, dtype=np.float32) -> Model:
    """Assemble and deterministically initialise the network for a config.

    Refuses to build when any attention layer's per-head score maps at the
    insertion resolution would exceed ``config.attention_memory_budget``
    entries.
    """
    grid = backbone_grid_size(config.input_size)
    for i, spec in enumerate(config.attention_blocks):
        estimate = attention_memory_estimate(grid, grid, spec.num_heads)
        if estimate > config.attention_memory_budget:
            raise MemoryBudgetError(
                f"attention layer {i} needs {estimate} score-map entries at "
                f"{grid}x{grid} with {spec.num_heads} heads, over the budget of "
                f"{config.attention_memory_budget}; shrink input_size, heads, or "
                "raise attention_memory_budget"
            )

    rng = np.random.default_rng(config.seed)
    stem_out = scale_channels(STEM_FILTERS, config.width_multiplier)
    stem = init_conv_block(rng, 3, 3, stem_out, stride=STEM_STRIDE, dtype=dtype)

    backbone: list[DwsBlockParams] = []
    channels = stem_out
    for filters, stride in zip(BACKBONE_FILTERS, BACKBONE_STRIDES):
        out_channels = scale_channels(filters, config.width_multiplier)
        backbone.append(
            init_dws_block(rng, 3, channels, out_channels, stride=stride, dtype=dtype)
        )
        channels = out_channels

    attention_layers: list[AttentionBlockParams] = []
    for spec in config.attention_blocks:
        attn_config = spec.attention_config()
        kernel = he_uniform(
            rng, (3, 3, channels, spec.conv_channels), fan_in=9 * channels, dtype=dtype
        )
        weights = init_attention_weights(rng, channels, attn_config, dtype=dtype)
        attention_layers.append(
            AttentionBlockParams(
                conv_kernel=kernel,
                attention=weights,
                attention_config=attn_config,
                norm=NormParams.identity(spec.out_channels, dtype),
            )
        )
        channels = spec.out_channels

    classifier_weight = he_uniform(rng, (channels, config.num_classes), fan_in=channels, dtype=dtype)
    classifier_bias = Tensor(np.zeros(config.num_classes, dtype=dtype), requires_grad=True)
    return Model(
        config=config,
        stem=stem,
        backbone=backbone,
        attention_layers=attention_layers,
        classifier_weight=classifier_weight,
        classifier_bias=classifier_bias,
    )


def forward_logits(model: Model, batch: Tensor, training: bool) -> Tensor:
    """Pre-softmax class scores for a (H,W,3) image or (B,H,W,3) batch."""
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.ndim not in (3, 4):
        raise ShapeError(f"input must be (H,W,3) or (B,H,W,3), got {batch.shape}")
    size = model.config.input_size
    if batch.shape[-3] != size or batch.shape[-2] != size or batch.shape[-1] != 3:
        raise ShapeError(
            f"input spatial shape {batch.shape[-3:]} does not match the "
            f"configured ({size}, {size}, 3)"
        )
    x = conv_block_forward(batch, model.stem, training)
    for block in model.backbone:
        x = dws_block_forward(x, block, training)
    for layer in model.attention_layers:
        x = attention_block_forward(x, layer, training)
    pooled = global_avg_pool(x)
    return dense(pooled, model.classifier_weight, model.classifier_bias)


def forward(model: Model, batch: Tensor, mode: str = "eval") -> Tensor:
    """Class probabilities per image; ``mode`` is "train" or "eval"."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return softmax(forward_logits(model, batch, training=mode == "train"), axis=-1)


def describe_layers(model: Model) -> list[tuple]:
    """Structural summary: (kind, in_channels, out_channels, stride) per
    layer, head stages included."""
    rows: list[tuple] = []
    if model.stem is not None:
        k, _, m, n = model.stem.kernel.shape
        rows.append(("conv", m, n, model.stem.stride))
    for block in model.backbone:
        _, _, m = block.depthwise_kernel.shape
        n = block.pointwise_kernel.shape[3]
        rows.append(("dws", m, n, block.stride))
    for layer in model.attention_layers:
        _, _, m, n = layer.conv_kernel.shape
        rows.append(("attention_conv", m, n + layer.attention_config.value_depth, 1))
    if model.classifier_weight is not None:
        rows.append(("global_avg_pool", rows[-1][2] if rows else 0, rows[-1][2] if rows else 0, 1))
        rows.append(("dense", model.classifier_weight.shape[0], model.classifier_weight.shape[1], 1))
        rows.append(("softmax", model.classifier_weight.shape[1], model.classifier_weight.shape[1], 1))
    return rows


def count_parameters(model: Model) -> int:
    """Total tensor entries, running statistics included."""
    return sum(t.size for t in model.state_tensors())


def count_madds(model: Model) -> int:
    """Total multiply-accumulates of the convolution and dense stages for one
    input image, each layer costed on the grid where its kernel is evaluated.
    Attention projection products are not included in this convolution-cost
    measure."""
    return sum(row[4] for row in cost_table(model))


def cost_table(model: Model) -> list[tuple[str, str, int, int, int]]:
    """Per-layer cost rows: (layer name, kind, feature grid size,
    standard-convolution cost, actual cost).

    The standard cost of a depthwise-separable block is what a full
    convolution of the same channel counts would have spent on the same grid;
    for layers that already are standard convolutions the two entries match.
    """
    rows: list[tuple[str, str, int, int, int]] = []
    grid = model.config.input_size
    if model.stem is not None:
        grid = _same_out(grid, model.stem.stride)
        k, _, m, n = model.stem.kernel.shape
        p = CostParams(kernel_size=k, in_channels=m, out_channels=n, feature_size=grid)
        rows.append(("stem", "conv", grid, cost_standard(p), cost_standard(p)))
    for i, block in enumerate(model.backbone):
        grid = _same_out(grid, block.stride)
        k, _, m = block.depthwise_kernel.shape
        n = block.pointwise_kernel.shape[3]
        p = CostParams(kernel_size=k, in_channels=m, out_channels=n, feature_size=grid)
        rows.append((f"dws_{i + 1}", "dws", grid, cost_standard(p), cost_dws(p)))
    for i, layer in enumerate(model.attention_layers):
        k, _, m, n = layer.conv_kernel.shape
        p = CostParams(kernel_size=k, in_channels=m, out_channels=n, feature_size=grid)
        rows.append((f"attention_{i + 1}", "attention_conv", grid, cost_standard(p), cost_standard(p)))
    if model.classifier_weight is not None:
        f, classes = model.classifier_weight.shape
        p = CostParams(kernel_size=1, in_channels=f, out_channels=classes, feature_size=1)
        rows.append(("classifier", "dense", 1, cost_standard(p), cost_standard(p)))
    return rows


# ---------------------------------------------------------------------------
# configuration serialisation
# ---------------------------------------------------------------------------


def config_to_dict(config: ModelConfig) -> dict:
    return {
        "input_size": config.input_size,
        "num_classes": config.num_classes,
        "width_multiplier": config.width_multiplier,
        "attention_blocks": [
            [s.conv_channels, s.value_depth, s.key_depth, s.num_heads]
            for s in config.attention_blocks
        ],
        "seed": config.seed,
        "attention_memory_budget": config.attention_memory_budget,
    }


def config_from_dict(data: dict) -> ModelConfig:
    known = set(config_to_dict(ModelConfig()))
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown model config fields: {sorted(unknown)}")
    fields = dict(data)
    blocks = fields.pop("attention_blocks", [])
    specs = tuple(
        AttentionBlockSpec(conv_channels=c, value_depth=v, key_depth=k, num_heads=h)
        for c, v, k, h in blocks
    )
    return ModelConfig(attention_blocks=specs, **fields)


def config_json(config: ModelConfig) -> str:
    """Canonical single-line encoding: sorted keys, no whitespace."""
    return json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: ModelConfig) -> str:
    return hashlib.sha256(config_json(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def save_model(model: Model, path) -> None:
    """Write magic, format version, payload digest, then the config and
    every state tensor in tape order."""
    body = io.BytesIO()
    config_bytes = config_json(model.config).encode()
    body.write(struct.pack("<I", len(config_bytes)))
    body.write(config_bytes)
    tensors = model.state_tensors()
    body.write(struct.pack("<I", len(tensors)))
    for t in tensors:
        write_tensor(body, t)
    payload = body.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fp:
        fp.write(MODEL_MAGIC)
        fp.write(bytes([MODEL_FORMAT_VERSION]))
        fp.write(digest)
        fp.write(payload)


def load_model(path) -> Model:
    """Rebuild a model from a file written by :func:`save_model`."""
    with open(path, "rb") as fp:
        raw = fp.read()
    header_len = len(MODEL_MAGIC) + 1 + 32
    if len(raw) < header_len:
        raise ModelFormatError(f"truncated model file: {len(raw)} bytes")
    if raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"not a model file: bad magic {raw[:len(MODEL_MAGIC)]!r}")
    version = raw[len(MODEL_MAGIC)]
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version}; this build reads "
            f"version {MODEL_FORMAT_VERSION}"
        )
    digest = raw[len(MODEL_MAGIC) + 1 : header_len]
    payload = raw[header_len:]
    if hashlib.sha256(payload).digest() != digest:
        raise ModelFormatError("model file digest mismatch: contents corrupted")

    buf = io.BytesIO(payload)
    try:
        (config_len,) = struct.unpack("<I", buf.read(4))
        config_raw = buf.read(config_len)
        if len(config_raw) < config_len:
            raise ModelFormatError("truncated model file: config cut short")
        config = config_from_dict(json.loads(config_raw.decode()))
        (n_tensors,) = struct.unpack("<I", buf.read(4))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file header: {exc}") from exc

    model = build_adsnn(config)
    slots = model.state_tensors()
    if n_tensors != len(slots):
        raise ModelFormatError(
            f"model file carries {n_tensors} tensors but the embedded config "
            f"builds {len(slots)}"
        )
    for i, slot in enumerate(slots):
        try:
            stored = read_tensor(buf)
        except Exception as exc:
            raise ModelFormatError(f"tensor block {i} unreadable: {exc}") from exc
        if stored.shape != slot.shape:
            raise ModelFormatError(
                f"tensor block {i} has shape {stored.shape}, expected {slot.shape}"
            )
        slot.data = stored.data.astype(slot.data.dtype)
    return model
