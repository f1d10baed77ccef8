"""Synthetic image generators for self-contained experiments and tests.

Two families:

- Leaf-like photographs: a dark ellipse at a known angle on a bright
  background, optionally with speckle noise — ground truth for the
  preprocessing pipeline.
- A four-class colored-shape classification set (blue triangles, green
  circles, red squares, yellow rings) whose classes are separable by colour
  and shape, small enough to train on a CPU in minutes.

All generation is deterministic under the given seed. Images are built as
8-bit pixels first, so writing them to disk and reloading reproduces the
in-memory dataset exactly.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from adsnn.preprocess import Image, write_image
from adsnn.train_eval import Dataset, Sample

__all__ = [
    "SHAPE_CLASSES",
    "draw_ellipse_mask",
    "make_leaf_image",
    "make_shape_dataset",
    "write_dataset_tree",
]

SHAPE_CLASSES = ("blue_triangle", "green_circle", "red_square", "yellow_ring")


def draw_ellipse_mask(
    height: int,
    width: int,
    center_row: float,
    center_col: float,
    major_radius: float,
    minor_radius: float,
    angle_degrees: float,
) -> np.ndarray:
    """Boolean mask of a filled ellipse; the angle is measured from the
    column axis toward the row axis (matching principal_axis_angle)."""
    yy, xx = np.mgrid[0:height, 0:width]
    theta = math.radians(angle_degrees)
    dx = xx - center_col
    dy = yy - center_row
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / major_radius) ** 2 + (v / minor_radius) ** 2 <= 1.0


def make_leaf_image(
    height: int = 300,
    width: int = 400,
    angle_degrees: float = 25.0,
    seed: int = 0,
    speckles: int = 0,
    color: tuple[int, int, int] = (46, 110, 34),
) -> Image:
    """Leaf-like test subject: a dark ellipse on a near-white background,
    with optional small dark speckles that opening should remove."""
    rng = np.random.default_rng(seed)
    pixels = np.full((height, width, 3), 255, dtype=np.float64)
    pixels -= rng.uniform(0.0, 6.0, size=pixels.shape)

    mask = draw_ellipse_mask(
        height,
        width,
        center_row=height / 2,
        center_col=width / 2,
        major_radius=min(height, width) * 0.42,
        minor_radius=min(height, width) * 0.14,
        angle_degrees=angle_degrees,
    )
    texture = rng.uniform(-18.0, 18.0, size=(height, width, 3))
    for c in range(3):
        channel = pixels[:, :, c]
        channel[mask] = color[c] + texture[:, :, c][mask]

    for _ in range(speckles):
        r = int(rng.integers(0, height))
        c = int(rng.integers(0, width))
        pixels[max(0, r - 1) : r + 1, max(0, c - 1) : c + 1] = rng.uniform(20.0, 60.0)

    return Image(pixels.clip(0, 255).astype(np.uint8))


def _shape_mask(kind: str, size: int, center: tuple[float, float], radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - center[0]
    dx = xx - center[1]
    if kind == "red_square":
        return (np.abs(dx) <= radius) & (np.abs(dy) <= radius)
    if kind == "green_circle":
        return dx**2 + dy**2 <= radius**2
    if kind == "blue_triangle":
        # Upward triangle: widens linearly from apex to base.
        within_rows = (dy >= -radius) & (dy <= radius)
        return within_rows & (np.abs(dx) <= (dy + radius) / 2)
    if kind == "yellow_ring":
        rho = dx**2 + dy**2
        return (rho <= radius**2) & (rho >= (radius * 0.55) ** 2)
    raise ValueError(f"unknown shape class {kind!r}")


_SHAPE_COLORS = {
    "red_square": (220, 30, 30),
    "green_circle": (30, 200, 40),
    "blue_triangle": (40, 60, 220),
    "yellow_ring": (230, 210, 30),
}


def make_shape_dataset(n_per_class: int = 100, size: int = 64, seed: int = 0) -> Dataset:
    """Four-class colored-shape set with jittered position, size, and pixel
    noise; class names sorted as a directory loader would order them."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    samples: list[Sample] = []
    for label, name in enumerate(SHAPE_CLASSES):
        base = np.array(_SHAPE_COLORS[name], dtype=np.float64)
        for i in range(n_per_class):
            pixels = np.full((size, size, 3), 245.0)
            pixels += rng.uniform(-8.0, 8.0, size=pixels.shape)
            center = (
                size / 2 + rng.uniform(-size / 8, size / 8),
                size / 2 + rng.uniform(-size / 8, size / 8),
            )
            radius = size * rng.uniform(0.18, 0.3)
            mask = _shape_mask(name, size, center, radius)
            jitter = rng.uniform(-25.0, 25.0, size=3)
            for c in range(3):
                channel = pixels[:, :, c]
                channel[mask] = base[c] + jitter[c]
            pixels += rng.uniform(-6.0, 6.0, size=pixels.shape)
            quantized = pixels.clip(0, 255).astype(np.uint8)
            samples.append(
                Sample(
                    image=quantized.astype(np.float32) / 255.0,
                    label=label,
                    source=f"synthetic://{name}/{i:04d}",
                )
            )
    return Dataset(samples=samples, class_names=SHAPE_CLASSES)


def write_dataset_tree(dataset: Dataset, root) -> list[Path]:
    """Write a dataset as PNGs under one subdirectory per class; returns the
    written paths. Reloading the tree reproduces the dataset pixels."""
    root = Path(root)
    written = []
    counters = {name: 0 for name in dataset.class_names}
    for sample in dataset.samples:
        name = dataset.class_names[sample.label]
        class_dir = root / name
        class_dir.mkdir(parents=True, exist_ok=True)
        index = counters[name]
        counters[name] += 1
        path = class_dir / f"{index:04d}.png"
        pixels = np.round(sample.image * 255.0).clip(0, 255).astype(np.uint8)
        write_image(path, Image(pixels))
        written.append(path)
    return written
