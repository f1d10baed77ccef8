"""Training loop, stratified k-fold protocol, and the exact-rational metric
suite with cross-fold aggregation.

Per-class precision, recall, and F1 are computed as exact fractions from
integer confusion-matrix counts; means and sample standard deviations (n-1
divisor) are taken only at the reporting layer, where values are scaled to
percentages and rendered in ``mean (sd)`` style.

Convention for degenerate classes (zero denominator in precision or recall):
the metric is 0 and the class is flagged in the report rather than raising.
"""

from __future__ import annotations

import csv
import math
import statistics
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from adsnn.model import Model, forward, forward_logits
from adsnn.tensor import Tensor, backward, cross_entropy_loss

__all__ = [
    "Sample",
    "Dataset",
    "ConfusionMatrix",
    "TrainOptions",
    "TrainingDiverged",
    "EpochStats",
    "FoldResult",
    "CvReport",
    "load_dataset",
    "kfold_split",
    "train_val_split",
    "train",
    "evaluate",
    "precision",
    "recall",
    "f1",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "degenerate_classes",
    "aggregate_cv",
    "format_mean_sd",
    "write_metrics_csv",
    "write_history_csv",
]

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass(frozen=True)
class Sample:
    """One example: float32 RGB image scaled to [0, 1], its label, and the
    originating path (empty for synthetic data)."""

    image: np.ndarray
    label: int
    source: str = ""


@dataclass
class Dataset:
    samples: list[Sample]
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError(f"class names must be unique, got {self.class_names}")
        m = len(self.class_names)
        for s in self.samples:
            if not 0 <= s.label < m:
                raise ValueError(f"label {s.label} out of range [0, {m}) for {s.source!r}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            samples=[self.samples[int(i)] for i in indices],
            class_names=self.class_names,
        )

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (B, H, W, 3) float32 images and (B,) integer labels."""
        images = np.stack([self.samples[int(i)].image for i in indices])
        labels = np.array([self.samples[int(i)].label for i in indices], dtype=np.int64)
        return images, labels


def load_dataset(root, expected_size: int | None = None) -> Dataset:
    """Read a class-per-subdirectory image tree; labels follow the sorted
    subdirectory order. All images must share one square size."""
    from adsnn.preprocess import read_image  # deferred: optional heavy deps

    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"dataset root {root} contains no class directories")

    samples: list[Sample] = []
    seen_shape: tuple[int, int] | None = None
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise ValueError(f"class directory {class_dir} contains no images")
        for path in files:
            img = read_image(path)
            pixels = img.pixels
            if pixels.ndim == 2:
                pixels = np.stack([pixels] * 3, axis=2)
            shape = pixels.shape[:2]
            if expected_size is not None and shape != (expected_size, expected_size):
                raise ValueError(
                    f"image {path} is {shape[0]}x{shape[1]}, expected "
                    f"{expected_size}x{expected_size}"
                )
            if seen_shape is None:
                seen_shape = shape
            elif shape != seen_shape:
                raise ValueError(
                    f"image {path} is {shape[0]}x{shape[1]} but earlier images "
                    f"are {seen_shape[0]}x{seen_shape[1]}"
                )
            samples.append(
                Sample(
                    image=(pixels.astype(np.float32) / 255.0),
                    label=label,
                    source=str(path),
                )
            )
    return Dataset(samples=samples, class_names=tuple(d.name for d in class_dirs))


def _indices_by_class(labels: np.ndarray) -> dict[int, np.ndarray]:
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def kfold_split(dataset: Dataset, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k folds: per class, shuffled indices are dealt round-robin
    into k test buckets, so the test folds partition the dataset."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    labels = dataset.labels
    per_class = _indices_by_class(labels)
    for c, idx in per_class.items():
        if len(idx) < k:
            raise ValueError(
                f"k={k} too large: class {dataset.class_names[c]!r} has only "
                f"{len(idx)} samples"
            )
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(k)]
    for c in sorted(per_class):
        shuffled = rng.permutation(per_class[c])
        for i, sample_idx in enumerate(shuffled):
            buckets[i % k].append(int(sample_idx))
    all_indices = set(range(len(dataset)))
    folds = []
    for bucket in buckets:
        test = np.array(sorted(bucket), dtype=np.int64)
        train = np.array(sorted(all_indices - set(bucket)), dtype=np.int64)
        folds.append((train, test))
    return folds


def train_val_split(
    dataset: Dataset, indices, ratio: float = 0.7, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified split of ``indices`` into train/validation parts; the
    train part holds round(ratio * n) samples of each class."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    indices = np.asarray(indices, dtype=np.int64)
    labels = dataset.labels[indices]
    rng = np.random.default_rng(seed)
    train_parts, val_parts = [], []
    for c in sorted(_indices_by_class(labels)):
        class_positions = indices[labels == c]
        shuffled = rng.permutation(class_positions)
        n_train = int(round(ratio * len(shuffled)))
        train_parts.append(shuffled[:n_train])
        val_parts.append(shuffled[n_train:])
    train = np.sort(np.concatenate(train_parts))
    val = np.sort(np.concatenate(val_parts)) if any(len(v) for v in val_parts) else np.array([], dtype=np.int64)
    if len(val) == 0:
        warnings.warn("validation set is empty; best-epoch selection disabled", stacklevel=2)
    return train, val


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the 1-based epoch and batch."""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class EpochStats:
    epoch: int  # 1-based
    train_loss: float  # mean cross-entropy over the epoch's batches
    val_accuracy: float  # fraction in [0, 1]; NaN when there is no val set


def train(
    model: Model,
    train_set: Dataset,
    val_set: Dataset | None = None,
    options: TrainOptions = TrainOptions(),
) -> tuple[Model, list[EpochStats]]:
    """Mini-batch SGD with momentum over cross-entropy, mutating ``model``
    in place. After the last epoch the weights from the epoch with the best
    validation accuracy are restored (ties keep the earliest epoch); with an
    empty or absent validation set the final weights stand.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    has_val = val_set is not None and len(val_set) > 0
    rng = np.random.default_rng(options.seed)
    params = model.trainable_parameters()
    velocities = [np.zeros_like(p.data) for p in params]
    state = model.state_tensors()
    best_accuracy = -1.0
    best_state: list[np.ndarray] | None = None

    history: list[EpochStats] = []
    for epoch in range(1, options.epochs + 1):
        order = rng.permutation(len(train_set))
        batch_losses = []
        for batch_no, start in enumerate(range(0, len(order), options.batch_size), start=1):
            chunk = order[start : start + options.batch_size]
            images, labels = train_set.batch(chunk)
            logits = forward_logits(model, Tensor(images), training=True)
            loss = cross_entropy_loss(logits, labels)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise TrainingDiverged(
                    f"loss became {loss_value} at epoch {epoch}, batch {batch_no}",
                    epoch=epoch,
                    batch=batch_no,
                )
            backward(loss)
            for p, v in zip(params, velocities):
                v *= options.momentum
                v -= options.learning_rate * p.grad
                p.data += v
                p.grad = np.zeros_like(p.data)
            batch_losses.append(loss_value)

        if has_val:
            val_acc = float(accuracy(evaluate(model, val_set)))
            if val_acc > best_accuracy:
                best_accuracy = val_acc
                best_state = [t.data.copy() for t in state]
        else:
            val_acc = float("nan")
        history.append(
            EpochStats(epoch=epoch, train_loss=float(np.mean(batch_losses)), val_accuracy=val_acc)
        )

    if best_state is not None:
        for t, data in zip(state, best_state):
            t.data = data
    return model, history


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = samples of actual class i predicted as class j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if not np.issubdtype(c.dtype, np.integer) or (c < 0).any():
            raise ValueError("confusion matrix entries must be non-negative integers")
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def evaluate(model: Model, test_set: Dataset, batch_size: int = 64) -> ConfusionMatrix:
    """Argmax predictions in eval mode; ties go to the lowest class index."""
    m = len(test_set.class_names)
    counts = np.zeros((m, m), dtype=np.int64)
    for start in range(0, len(test_set), batch_size):
        indices = range(start, min(start + batch_size, len(test_set)))
        images, labels = test_set.batch(indices)
        probs = forward(model, Tensor(images), mode="eval").data
        predictions = np.argmax(probs, axis=1)
        np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def precision(cm: ConfusionMatrix, i: int) -> Fraction:
    """Correct predictions of class i over all predictions of class i
    (column sum); 0 when the class is never predicted."""
    column = int(cm.counts[:, i].sum())
    return Fraction(int(cm.counts[i, i]), column) if column else Fraction(0)


def recall(cm: ConfusionMatrix, i: int) -> Fraction:
    """Correct predictions of class i over all actual class-i samples
    (row sum); 0 when the class never occurs."""
    row = int(cm.counts[i, :].sum())
    return Fraction(int(cm.counts[i, i]), row) if row else Fraction(0)


def f1(cm: ConfusionMatrix, i: int) -> Fraction:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    p, r = precision(cm, i), recall(cm, i)
    return 2 * p * r / (p + r) if p + r else Fraction(0)


def accuracy(cm: ConfusionMatrix) -> Fraction:
    """Diagonal mass over all counts; 0 for an empty matrix."""
    return Fraction(int(np.trace(cm.counts)), cm.total) if cm.total else Fraction(0)


def macro_precision(cm: ConfusionMatrix) -> Fraction:
    return sum(precision(cm, i) for i in range(cm.num_classes)) / cm.num_classes


def macro_recall(cm: ConfusionMatrix) -> Fraction:
    return sum(recall(cm, i) for i in range(cm.num_classes)) / cm.num_classes


def macro_f1(cm: ConfusionMatrix) -> Fraction:
    return sum(f1(cm, i) for i in range(cm.num_classes)) / cm.num_classes


def degenerate_classes(cm: ConfusionMatrix) -> list[int]:
    """Classes with a zero denominator in precision or recall."""
    return [
        i
        for i in range(cm.num_classes)
        if cm.counts[:, i].sum() == 0 or cm.counts[i, :].sum() == 0
    ]


@dataclass(frozen=True)
class FoldResult:
    fold: int  # 1-based
    confusion: ConfusionMatrix
    history: list[EpochStats] = field(default_factory=list)
    train_minutes: float = 0.0


def format_mean_sd(mean: float, sd: float) -> str:
    """Render ``94.65 (2.07)``-style summary values."""
    return f"{mean:.2f} ({sd:.2f})"


@dataclass(frozen=True)
class CvReport:
    """Cross-validation summary; every metric column is in percent."""

    class_names: tuple[str, ...]
    columns: tuple[str, ...]
    fold_rows: tuple[dict, ...]  # one dict per fold, keyed by column
    means: dict
    sds: dict
    flagged: tuple[tuple[int, str], ...]  # (fold, class name) degenerate pairs

    def summary(self, column: str) -> str:
        return format_mean_sd(self.means[column], self.sds[column])

    def render(self) -> str:
        lines = ["metric: mean (sd) over %d folds, percent" % len(self.fold_rows)]
        for column in self.columns:
            if column == "fold":
                continue
            lines.append(f"  {column}: {self.summary(column)}")
        if self.flagged:
            pairs = ", ".join(f"fold {f}: {name}" for f, name in self.flagged)
            lines.append(f"  degenerate classes (metrics forced to 0): {pairs}")
        return "\n".join(lines)


def _percent(value: Fraction) -> float:
    return float(value * 100)


def aggregate_cv(folds: list[FoldResult], class_names) -> CvReport:
    """Mean and sample standard deviation (n-1) of every metric column
    across folds, plus per-class breakdowns and degeneracy flags."""
    if not folds:
        raise ValueError("no fold results to aggregate")
    class_names = tuple(class_names)
    columns = ["fold", "accuracy", "precision_macro", "recall_macro", "f1_macro", "train_minutes"]
    for name in class_names:
        columns += [f"precision_{name}", f"recall_{name}", f"f1_{name}"]

    rows = []
    flagged = []
    for result in folds:
        cm = result.confusion
        if cm.num_classes != len(class_names):
            raise ValueError(
                f"fold {result.fold} confusion matrix has {cm.num_classes} classes, "
                f"expected {len(class_names)}"
            )
        row = {
            "fold": result.fold,
            "accuracy": _percent(accuracy(cm)),
            "precision_macro": _percent(macro_precision(cm)),
            "recall_macro": _percent(macro_recall(cm)),
            "f1_macro": _percent(macro_f1(cm)),
            "train_minutes": result.train_minutes,
        }
        for i, name in enumerate(class_names):
            row[f"precision_{name}"] = _percent(precision(cm, i))
            row[f"recall_{name}"] = _percent(recall(cm, i))
            row[f"f1_{name}"] = _percent(f1(cm, i))
        rows.append(row)
        for i in degenerate_classes(cm):
            flagged.append((result.fold, class_names[i]))

    numeric = [c for c in columns if c != "fold"]
    means = {c: statistics.fmean(r[c] for r in rows) for c in numeric}
    sds = {
        c: statistics.stdev([r[c] for r in rows]) if len(rows) > 1 else 0.0
        for c in numeric
    }
    return CvReport(
        class_names=class_names,
        columns=tuple(columns),
        fold_rows=tuple(rows),
        means=means,
        sds=sds,
        flagged=tuple(flagged),
    )


def write_metrics_csv(path, report: CvReport) -> None:
    """Per-fold metric rows (percent) followed by `mean` and `sd` rows."""
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(report.columns)
        for row in report.fold_rows:
            writer.writerow([row[c] for c in report.columns])
        writer.writerow(["mean"] + [report.means[c] for c in report.columns[1:]])
        writer.writerow(["sd"] + [report.sds[c] for c in report.columns[1:]])


def write_history_csv(path, history: list[EpochStats]) -> None:
    """Epoch rows: mean train loss and validation accuracy (fraction)."""
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for entry in history:
            writer.writerow([entry.epoch, entry.train_loss, entry.val_accuracy])
