"""Leaf image preparation: grayscale, Otsu threshold, morphological opening,
largest-component detection, principal-axis re-alignment, crop, and resize.

The pipeline assumes photographs of single leaves on a bright background:
the foreground is the darker threshold class by default. Threshold selection
uses exact rational comparisons of the between-class variance so that tie
handling (smallest winning threshold) is deterministic and independent of
floating-point rounding.

Angles follow image coordinates: degrees measured from the column axis
toward the row axis, in (-90, 90]. Rotating an image by that angle with
:func:`rotate_image` brings the measured axis to horizontal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

__all__ = [
    "Image",
    "Mask",
    "BoundingBox",
    "ThresholdResult",
    "AngleResult",
    "PipelineConfig",
    "PipelineResult",
    "NoForegroundError",
    "to_grayscale",
    "otsu_threshold",
    "binarize",
    "morphological_open",
    "largest_component",
    "principal_axis_angle",
    "rotate_image",
    "rotate_mask",
    "resize_image",
    "preprocess_pipeline",
    "read_image",
    "write_image",
]


class NoForegroundError(ValueError):
    """Raised when thresholding/opening leaves no foreground pixels."""


@dataclass(frozen=True)
class Image:
    """8-bit image, grayscale (H, W) or RGB (H, W, 3), row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.dtype != np.uint8:
            raise ValueError("pixels must be a uint8 array")
        if p.ndim == 3 and p.shape[2] == 1:
            object.__setattr__(self, "pixels", p[:, :, 0])
            p = self.pixels
        if not (p.ndim == 2 or (p.ndim == 3 and p.shape[2] == 3)):
            raise ValueError(f"image must be (H,W) or (H,W,3), got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"image must have positive size, got {p.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3


@dataclass(frozen=True)
class Mask:
    """Binary per-pixel foreground map."""

    bits: np.ndarray

    def __post_init__(self):
        b = self.bits
        if not isinstance(b, np.ndarray) or b.dtype != bool or b.ndim != 2:
            raise ValueError("mask bits must be a 2-D bool array")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel bounds of a region."""

    top: int
    left: int
    bottom: int
    right: int

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.top, self.left, self.bottom, self.right)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: int
    degenerate: bool  # single-valued image: no two classes to separate


@dataclass(frozen=True)
class AngleResult:
    degrees: float
    symmetric: bool  # second moments carry no direction; degrees forced to 0


def to_grayscale(img: Image) -> Image:
    """Luma mix 0.299/0.587/0.114 rounded half-up; grayscale passes through."""
    if img.channels == 1:
        return img
    rgb = img.pixels.astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return Image(np.floor(luma + 0.5).clip(0, 255).astype(np.uint8))


def otsu_threshold(gray: Image) -> ThresholdResult:
    """Threshold maximising between-class variance over the 256-bin
    histogram, class zero being pixels <= t; ties resolved to the smallest t.

    Candidate thresholds are compared with exact rational arithmetic: the
    between-class variance is proportional to (S0*w1 - S1*w0)^2 / (w0*w1)
    where w/S are the class pixel counts and intensity sums.
    """
    if gray.channels != 1:
        raise ValueError("otsu_threshold expects a grayscale image")
    hist = np.bincount(gray.pixels.ravel(), minlength=256)
    nonzero = np.nonzero(hist)[0]
    if len(nonzero) == 1:
        return ThresholdResult(threshold=int(nonzero[0]), degenerate=True)

    counts = [int(c) for c in hist]
    sums = [int(c) * v for v, c in enumerate(counts)]
    total_count = sum(counts)
    total_sum = sum(sums)
    best_t, best_var = 0, Fraction(-1)
    w0 = s0 = 0
    for t in range(256):
        w0 += counts[t]
        s0 += sums[t]
        w1 = total_count - w0
        if w0 == 0 or w1 == 0:
            continue
        s1 = total_sum - s0
        var = Fraction((s0 * w1 - s1 * w0) ** 2, w0 * w1)
        if var > best_var:
            best_t, best_var = t, var
    return ThresholdResult(threshold=best_t, degenerate=False)


def binarize(gray: Image, threshold: int, foreground: str = "dark") -> Mask:
    """Foreground mask from a threshold; ``foreground`` picks the class:
    "dark" keeps pixels <= threshold, "light" keeps pixels > threshold."""
    if gray.channels != 1:
        raise ValueError("binarize expects a grayscale image")
    if foreground not in ("dark", "light"):
        raise ValueError(f"foreground must be 'dark' or 'light', got {foreground!r}")
    below = gray.pixels <= threshold
    return Mask(below if foreground == "dark" else ~below)


def morphological_open(mask: Mask, kernel_size: int = 5) -> Mask:
    """Erosion then dilation with a square structuring element; pixels
    outside the image count as background."""
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and >= 3, got {kernel_size}")
    structure = np.ones((kernel_size, kernel_size), dtype=bool)
    opened = ndimage.binary_opening(mask.bits, structure=structure, border_value=0)
    return Mask(opened)


def largest_component(mask: Mask) -> tuple[Mask, BoundingBox]:
    """Largest 8-connected foreground component and its bounding box; ties
    in size go to the component whose bounding box is top-left-most
    (by (top, left) order)."""
    labels, count = ndimage.label(mask.bits, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        raise NoForegroundError("no foreground pixels in mask")
    sizes = np.bincount(labels.ravel())[1:]
    boxes = [
        BoundingBox(int(sl[0].start), int(sl[1].start), int(sl[0].stop) - 1, int(sl[1].stop) - 1)
        for sl in ndimage.find_objects(labels)
    ]
    best = max(
        range(count),
        key=lambda i: (sizes[i], -boxes[i].top, -boxes[i].left),
    )
    return Mask(labels == best + 1), boxes[best]


def principal_axis_angle(mask: Mask) -> AngleResult:
    """Major-axis orientation from second-order central moments:
    0.5 * atan2(2*m11, m20 - m02) in degrees, range (-90, 90]."""
    ys, xs = np.nonzero(mask.bits)
    if len(ys) == 0:
        raise NoForegroundError("no foreground pixels in mask")
    x = xs - xs.mean()
    y = ys - ys.mean()
    m20 = float((x * x).sum())
    m02 = float((y * y).sum())
    m11 = float((x * y).sum())
    scale = m20 + m02
    if scale == 0.0 or (abs(m20 - m02) <= 1e-12 * scale and abs(2 * m11) <= 1e-12 * scale):
        return AngleResult(degrees=0.0, symmetric=True)
    return AngleResult(degrees=math.degrees(0.5 * math.atan2(2 * m11, m20 - m02)), symmetric=False)


def rotate_image(img: Image, degrees: float, fill: int = 255) -> Image:
    """Bilinear rotation on an expanded canvas; uncovered pixels take
    ``fill``. Rotating by the angle reported by
    :func:`principal_axis_angle` aligns that axis horizontally."""
    rotated = ndimage.rotate(
        img.pixels.astype(np.float64),
        degrees,
        axes=(1, 0),
        reshape=True,
        order=1,
        mode="constant",
        cval=float(fill),
    )
    return Image(np.floor(rotated + 0.5).clip(0, 255).astype(np.uint8))


def rotate_mask(mask: Mask, degrees: float) -> Mask:
    """Rotation matching :func:`rotate_image`; pixels at least half covered
    stay foreground."""
    rotated = ndimage.rotate(
        mask.bits.astype(np.float64),
        degrees,
        axes=(1, 0),
        reshape=True,
        order=1,
        mode="constant",
        cval=0.0,
    )
    return Mask(rotated >= 0.5)


def resize_image(img: Image, size: int) -> Image:
    """Bilinear resize to a square of ``size`` pixels per side."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    pil = PILImage.fromarray(img.pixels)
    return Image(np.asarray(pil.resize((size, size), PILImage.Resampling.BILINEAR)))


@dataclass(frozen=True)
class PipelineConfig:
    kernel_size: int = 5
    target_size: int = 224
    pad_margin: int = 4
    foreground: str = "dark"

    def __post_init__(self):
        if self.pad_margin < 0:
            raise ValueError(f"pad_margin must be >= 0, got {self.pad_margin}")
        if self.target_size < 1:
            raise ValueError(f"target_size must be >= 1, got {self.target_size}")


@dataclass(frozen=True)
class PipelineResult:
    image: Image
    metadata: dict


def preprocess_pipeline(
    img: Image, config: PipelineConfig = PipelineConfig(), source: str = ""
) -> PipelineResult:
    """Full preparation of one photograph; metadata records every stage.

    Stages: grayscale, Otsu threshold (foreground defaults to the darker
    class), opening, largest component, rotation aligning the component's
    major axis horizontally (white fill), crop to the re-measured bounding
    box plus margin, bilinear resize to the target square.
    """
    label = f" ({source})" if source else ""
    gray = to_grayscale(img)
    thresh = otsu_threshold(gray)
    if thresh.degenerate:
        raise NoForegroundError(
            f"image{label} is uniform at value {thresh.threshold}; nothing to segment"
        )
    mask = binarize(gray, thresh.threshold, config.foreground)
    opened = morphological_open(mask, config.kernel_size)
    try:
        component, bbox = largest_component(opened)
    except NoForegroundError as exc:
        raise NoForegroundError(f"{exc}{label}") from exc
    angle = principal_axis_angle(component)

    rgb = img if img.channels == 3 else Image(np.stack([img.pixels] * 3, axis=2))
    rotated = rotate_image(rgb, angle.degrees, fill=255)
    rotated_component = rotate_mask(component, angle.degrees)
    try:
        _, rotated_bbox = largest_component(rotated_component)
    except NoForegroundError as exc:
        raise NoForegroundError(f"component lost during rotation{label}") from exc

    top = max(0, rotated_bbox.top - config.pad_margin)
    left = max(0, rotated_bbox.left - config.pad_margin)
    bottom = min(rotated.height - 1, rotated_bbox.bottom + config.pad_margin)
    right = min(rotated.width - 1, rotated_bbox.right + config.pad_margin)
    cropped = Image(rotated.pixels[top : bottom + 1, left : right + 1])
    out = resize_image(cropped, config.target_size)

    metadata = {
        "source": source,
        "input_size": [img.height, img.width],
        "threshold": thresh.threshold,
        "angle_degrees": angle.degrees,
        "axis_symmetric": angle.symmetric,
        "bbox": list(bbox.as_tuple()),
        "bbox_rotated": [top, left, bottom, right],
        "foreground_pixels": component.foreground_count,
        "kernel_size": config.kernel_size,
        "pad_margin": config.pad_margin,
        "target_size": config.target_size,
    }
    return PipelineResult(image=out, metadata=metadata)


# ---------------------------------------------------------------------------
# file I/O (PNG and binary PPM)
# ---------------------------------------------------------------------------


def read_image(path) -> Image:
    """Decode a PNG or binary PPM file to an 8-bit image."""
    path = Path(path)
    try:
        with PILImage.open(path) as pil:
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("RGB")
            data = np.asarray(pil)
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from exc
    return Image(data.astype(np.uint8))


def write_image(path, img: Image) -> None:
    """Encode to PNG or binary PPM according to the file extension."""
    path = Path(path)
    pil = PILImage.fromarray(img.pixels)
    if path.suffix.lower() == ".ppm":
        if img.channels == 1:
            pil = pil.convert("RGB")
        pil.save(path, format="PPM")
    else:
        pil.save(path, format="PNG")
