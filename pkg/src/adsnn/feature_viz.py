"""Interpretability outputs: per-layer activation maps and gradient-ascent
filter visualization.

Layer indexing counts constructed feature layers in forward order: 0 is
the stem convolution, 1..13 the separable backbone blocks, then one index
per attention block. The pooling stage and classifier head have no
spatial activations and are not addressable here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adsnn.conv_layers import conv_block_forward, dws_block_forward
from adsnn.model import Model, attention_block_forward
from adsnn.tensor import (
    Tensor,
    backward,
    global_avg_pool,
    mul,
    no_grad,
    tensor_sum,
)

__all__ = [
    "ActivationGrid",
    "FeatureLayer",
    "VizConfig",
    "VizResult",
    "activation_maps",
    "deprocess",
    "export_grid",
    "feature_layers",
    "filter_visualization",
    "gradient_ascent",
    "normalize_gradient",
]

_BLANK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FeatureLayer:
    """One addressable layer: its name, parameter object, forward routine,
    and output channel count."""

    name: str
    params: object
    forward: object  # callable(x, params, training) -> Tensor
    out_channels: int

    def apply(self, x: Tensor, training: bool = False) -> Tensor:
        return self.forward(x, self.params, training)


def feature_layers(model: Model) -> list[FeatureLayer]:
    """The model's spatial layers in forward order."""
    layers: list[FeatureLayer] = []
    if model.stem is not None:
        layers.append(
            FeatureLayer(
                name="stem_conv",
                params=model.stem,
                forward=conv_block_forward,
                out_channels=model.stem.kernel.shape[-1],
            )
        )
    for i, block in enumerate(model.backbone, start=1):
        layers.append(
            FeatureLayer(
                name=f"dws_{i}",
                params=block,
                forward=dws_block_forward,
                out_channels=block.pointwise_kernel.shape[-1],
            )
        )
    for i, block in enumerate(model.attention_layers, start=1):
        layers.append(
            FeatureLayer(
                name=f"attention_{i}",
                params=block,
                forward=attention_block_forward,
                out_channels=block.conv_kernel.shape[-1] + block.attention_config.value_depth,
            )
        )
    return layers


def _layer_at(model: Model, layer_index: int) -> tuple[list[FeatureLayer], FeatureLayer]:
    layers = feature_layers(model)
    if not 0 <= layer_index < len(layers):
        raise ValueError(
            f"layer index {layer_index} out of range; model has {len(layers)} feature layers"
        )
    return layers, layers[layer_index]


def _forward_through(model: Model, x: Tensor, layer_index: int) -> Tensor:
    layers, _ = _layer_at(model, layer_index)
    out = x
    for layer in layers[: layer_index + 1]:
        out = layer.apply(out, training=False)
    return out


@dataclass(frozen=True)
class ActivationGrid:
    """Per-channel activation maps of one layer, rendered to 8 bits.

    ``maps[c]`` is the (H, W) uint8 image of channel c, min-max normalized
    per channel; channels that are constant over space render mid-gray
    (128) and their indices land in ``blank``.
    """

    layer_index: int
    layer_name: str
    maps: np.ndarray  # (C, H, W) uint8
    blank: tuple[int, ...]

    @property
    def channel_count(self) -> int:
        return self.maps.shape[0]


def activation_maps(model: Model, image: np.ndarray, layer_index: int) -> ActivationGrid:
    """Forward ``image`` (H, W, 3 floats) to the layer and normalize each
    output channel independently to [0, 255]."""
    layers, layer = _layer_at(model, layer_index)
    x = Tensor(np.asarray(image, dtype=np.float32))
    if x.data.ndim != 3 or x.data.shape[-1] != 3:
        raise ValueError(f"activation input must be (H, W, 3), got {x.data.shape}")
    with no_grad():
        acts = _forward_through(model, x, layer_index).data  # (H', W', C)
    channels = acts.shape[-1]
    maps = np.empty((channels, acts.shape[0], acts.shape[1]), dtype=np.uint8)
    blank: list[int] = []
    for c in range(channels):
        plane = acts[..., c].astype(np.float64)
        low, high = float(plane.min()), float(plane.max())
        if high - low <= _BLANK_TOLERANCE * max(1.0, abs(high)):
            maps[c] = 128
            blank.append(c)
        else:
            scaled = (plane - low) / (high - low) * 255.0
            maps[c] = np.floor(scaled + 0.5).astype(np.uint8)
    return ActivationGrid(
        layer_index=layer_index,
        layer_name=layer.name,
        maps=maps,
        blank=tuple(blank),
    )


@dataclass(frozen=True)
class VizConfig:
    steps: int = 30
    step_size: float = 1.0
    seed: int = 0
    input_size: int | None = None  # None: use the model's configured size
    gradient_epsilon: float = 1e-5

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.input_size is not None and self.input_size < 1:
            raise ValueError(f"input_size must be positive, got {self.input_size}")


@dataclass(frozen=True)
class VizResult:
    image: np.ndarray  # (S, S, 3) uint8, deprocessed final input
    raw: np.ndarray  # (S, S, 3) float32 final input before deprocessing
    trace: tuple[float, ...]  # loss at the start of each step
    zero_gradient: bool  # gradient vanished at initialization


def normalize_gradient(gradient: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Scale to unit L2 norm (plus a small epsilon for stability)."""
    return gradient / (float(np.linalg.norm(gradient)) + epsilon)


def deprocess(raw: np.ndarray) -> np.ndarray:
    """Map a free-range ascent image to displayable 8-bit RGB:
    standardize, scale by 0.1, center at 0.5, clip to [0, 1], quantize."""
    values = np.asarray(raw, dtype=np.float64)
    spread = float(values.max() - values.min()) if values.size else 0.0
    if spread <= _BLANK_TOLERANCE * max(1.0, float(np.abs(values).max(initial=0.0))):
        display = np.full_like(values, 0.5)
    else:
        centered = (values - values.mean()) / values.std()
        display = np.clip(centered * 0.1 + 0.5, 0.0, 1.0)
    return np.floor(display * 255.0 + 0.5).astype(np.uint8)


def gradient_ascent(activation_fn, filter_index: int, cfg: VizConfig, input_size: int) -> VizResult:
    """Ascend the mean activation of one output channel in input space.

    Starts from mid-gray plus seeded uniform noise of amplitude 12.7 (on
    the 0-255 scale), takes ``cfg.steps`` steps of size ``cfg.step_size``
    along the L2-normalized input gradient, and records the loss at the
    start of every step. A zero gradient at initialization short-circuits:
    the initialization comes back unchanged with an all-zero trace.
    """
    rng = np.random.default_rng(cfg.seed)
    init = (0.5 + rng.uniform(-12.7, 12.7, size=(input_size, input_size, 3)) / 255.0).astype(
        np.float32
    )
    x = init.copy()
    trace: list[float] = []
    for step in range(cfg.steps):
        tensor = Tensor(x.copy(), requires_grad=True)
        acts = activation_fn(tensor)
        channels = acts.shape[-1]
        if not 0 <= filter_index < channels:
            raise ValueError(
                f"filter index {filter_index} out of range; layer has {channels} channels"
            )
        one_hot = np.zeros(channels, dtype=acts.data.dtype)
        one_hot[filter_index] = 1.0
        loss = tensor_sum(mul(global_avg_pool(acts), one_hot))
        backward(loss)
        gradient = tensor.grad
        if step == 0 and not np.any(gradient):
            return VizResult(
                image=deprocess(init),
                raw=init,
                trace=(0.0,) * cfg.steps,
                zero_gradient=True,
            )
        trace.append(float(loss.data))
        x = x + cfg.step_size * normalize_gradient(gradient, cfg.gradient_epsilon).astype(
            np.float32
        )
    return VizResult(
        image=deprocess(x),
        raw=x,
        trace=tuple(trace),
        zero_gradient=False,
    )


def filter_visualization(
    model: Model, layer_index: int, filter_index: int, cfg: VizConfig = VizConfig()
) -> VizResult:
    """Gradient-ascent visualization of one filter of one model layer."""
    _, layer = _layer_at(model, layer_index)
    if not 0 <= filter_index < layer.out_channels:
        raise ValueError(
            f"filter index {filter_index} out of range; layer {layer.name!r} has "
            f"{layer.out_channels} channels"
        )
    size = cfg.input_size if cfg.input_size is not None else model.config.input_size
    return gradient_ascent(
        lambda x: _forward_through(model, x, layer_index), filter_index, cfg, size
    )


def export_grid(images, columns: int, path) -> np.ndarray:
    """Write a row-major PNG mosaic with 2-pixel black separators and
    return the mosaic array. All images must share one shape."""
    from adsnn.preprocess import Image, write_image

    images = list(images)
    if not images:
        raise ValueError("export_grid needs at least one image")
    if columns < 1:
        raise ValueError(f"columns must be >= 1, got {columns}")
    planes = []
    for img in images:
        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            raise ValueError(f"mosaic tiles must be uint8, got {arr.dtype}")
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"mosaic tiles must be (H, W) or (H, W, 3), got {arr.shape}")
        planes.append(arr)
    shapes = {p.shape for p in planes}
    if len(shapes) > 1:
        raise ValueError(f"mosaic tiles differ in shape: {sorted(shapes)}")
    h, w, _ = planes[0].shape
    rows = math.ceil(len(planes) / columns)
    canvas = np.zeros((rows * (h + 2) + 2, columns * (w + 2) + 2, 3), dtype=np.uint8)
    for i, plane in enumerate(planes):
        r, c = divmod(i, columns)
        top, left = 2 + r * (h + 2), 2 + c * (w + 2)
        canvas[top : top + h, left : left + w] = plane
    write_image(path, Image(canvas))
    return canvas
