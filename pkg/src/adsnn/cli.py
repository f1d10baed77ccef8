"""Command-line entry point wiring the toolkit together.

Subcommands: ``preprocess`` (segment/align/crop image trees), ``train``
(k-fold training with metrics and a saved model), ``eval`` (score a saved
model on a dataset), ``tune`` (Bayesian optimization of attention filter
counts), ``visualize`` (activation maps and gradient-ascent filter
images), and ``cost`` (per-layer multiply-add table).

Options come from an optional JSON config file merged with command-line
flags (flags win; unknown config keys are rejected with a suggestion).

Exit codes: 0 success, 1 usage or configuration error, 2 data error
(missing or malformed inputs), 3 numeric failure (divergence, failed
factorization).

Every artifact-producing run writes ``manifest.json`` into the output
directory. The manifest is fully deterministic for a fixed config and
seed: it records versions, the resolved config and its hash, a digest per
artifact, and a combined digest over all numeric outputs. Wall-clock
times live in a separate ``timings.json`` (referenced by name, never
hashed), and CSV digests mask the wall-clock columns ``train_minutes``
and ``seconds``, so re-running with the same config and seed reproduces
``manifest.json`` byte for byte.

The environment variable ``ADSNN_THREADS`` caps worker parallelism for
batch image preprocessing (unset or 0 picks the CPU count).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import difflib
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "RunConfig",
    "UsageError",
    "main",
    "parse_config",
    "run",
]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_TIMING_COLUMNS = {"train_minutes", "seconds"}


class UsageError(Exception):
    """Bad command line (missing flags, malformed values)."""


class ConfigError(Exception):
    """Bad configuration (file contents, invalid combinations)."""


class DataError(Exception):
    """Missing or malformed input data."""


class NumericError(Exception):
    """Training divergence or a failed numeric routine."""


@dataclass(frozen=True)
class RunConfig:
    """Flat resolved configuration shared by all subcommands."""

    dataset: str | None = None
    out: str | None = None
    input_size: int = 64
    num_classes: int = 4
    width_multiplier: float = 0.25
    attention_filters: tuple[int, ...] = (64, 64)
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    folds: int = 5
    val_ratio: float = 0.7
    seed: int = 0
    budget: int = 12
    init: int | None = None
    tune_folds: int = 3
    size: int | None = None  # preprocess target edge (defaults to input_size)
    kernel: int = 5
    foreground: str = "dark"
    steps: int = 30

    def as_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["attention_filters"] = list(self.attention_filters)
        return data


_CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _coerce_attention_filters(value) -> tuple[int, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        value = [v for v in value.replace(" ", "").split(",") if v]
        if value == ["none"]:
            value = []
    return tuple(int(v) for v in value)


def parse_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Load the JSON config (if given), apply flag overrides on top, and
    validate the result. Unknown keys fail with a close-match suggestion."""
    data: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in data:
        if key not in _CONFIG_KEYS:
            close = difflib.get_close_matches(key, _CONFIG_KEYS, n=1)
            hint = f"; did you mean {close[0]!r}?" if close else ""
            raise ConfigError(f"unknown config key {key!r}{hint}")
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    if "attention_filters" in merged:
        merged["attention_filters"] = _coerce_attention_filters(merged["attention_filters"])
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _worker_count() -> int:
    raw = os.environ.get("ADSNN_THREADS", "0")
    try:
        requested = int(raw)
    except ValueError as exc:
        raise ConfigError(f"ADSNN_THREADS must be an integer, got {raw!r}") from exc
    if requested < 0:
        raise ConfigError(f"ADSNN_THREADS must be >= 0, got {requested}")
    return requested if requested > 0 else (os.cpu_count() or 1)


def _model_config(cfg: RunConfig, num_classes: int | None = None):
    from adsnn.model import (
        BACKBONE_FILTERS,
        MemoryBudgetError,
        ModelConfig,
        default_attention_block_specs,
        scale_channels,
    )

    specs = ()
    if cfg.attention_filters:
        backbone_out = scale_channels(BACKBONE_FILTERS[-1], cfg.width_multiplier)
        specs = default_attention_block_specs(
            backbone_out, conv_channels=list(cfg.attention_filters)
        )
    try:
        return ModelConfig(
            input_size=cfg.input_size,
            num_classes=num_classes if num_classes is not None else cfg.num_classes,
            width_multiplier=cfg.width_multiplier,
            attention_blocks=specs,
            seed=cfg.seed,
        )
    except (ValueError, MemoryBudgetError) as exc:
        raise ConfigError(str(exc)) from exc


def _build_model(config):
    from adsnn.model import MemoryBudgetError, build_adsnn

    try:
        return build_adsnn(config)
    except MemoryBudgetError as exc:
        raise ConfigError(str(exc)) from exc


def _check_out(cfg: RunConfig) -> None:
    """Flag-presence check that runs before any input is touched."""
    if not cfg.out:
        raise UsageError("--out is required")


def _require_out(cfg: RunConfig) -> Path:
    """Create the output directory; called only after inputs validated."""
    _check_out(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg: RunConfig, expected_size: int | None):
    from adsnn.train_eval import load_dataset

    if not cfg.dataset:
        raise UsageError("a dataset directory is required")
    root = Path(cfg.dataset)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    try:
        return load_dataset(root, expected_size=expected_size)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _artifact_digest(path: Path) -> str:
    """SHA-256 of the artifact with wall-clock CSV columns masked, so the
    digest depends only on numeric outputs."""
    if path.suffix == ".csv":
        rows = list(csv.reader(path.open(newline="")))
        if rows:
            masked = [i for i, name in enumerate(rows[0]) if name in _TIMING_COLUMNS]
            for row in rows[1:]:
                for i in masked:
                    if i < len(row):
                        row[i] = ""
        buffer = io.StringIO()
        csv.writer(buffer, lineterminator="\n").writerows(rows)
        payload = buffer.getvalue().encode()
    else:
        payload = path.read_bytes()
    return hashlib.sha256(payload).hexdigest()


def _write_manifest(
    out: Path, command: str, cfg: RunConfig, artifacts: list[Path], timings: dict
) -> Path:
    import PIL
    import scipy

    from adsnn import __version__

    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    config_dict = cfg.as_dict()
    # Filesystem locations are run environment, not configuration: the input
    # content is bound through the artifact digests instead.
    config_dict["dataset"] = None
    config_dict["out"] = None
    config_json = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    digests = {
        str(path.relative_to(out)): _artifact_digest(path) for path in sorted(artifacts)
    }
    combined = "\n".join(f"{name}:{digest}" for name, digest in sorted(digests.items()))
    manifest = {
        "command": command,
        "versions": {
            "adsnn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pillow": PIL.__version__,
        },
        "seed": cfg.seed,
        "config": config_dict,
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "artifacts": digests,
        "numeric_outputs_hash": hashlib.sha256(combined.encode()).hexdigest(),
        "timings_file": "timings.json",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# subcommands


def cmd_preprocess(cfg: RunConfig) -> int:
    from adsnn.preprocess import (
        NoForegroundError,
        PipelineConfig,
        preprocess_pipeline,
        read_image,
        write_image,
    )

    if not cfg.dataset:
        raise UsageError("--in is required")
    _check_out(cfg)
    in_dir = Path(cfg.dataset)
    if not in_dir.is_dir():
        raise DataError(f"input directory {in_dir} does not exist")
    suffixes = {".png", ".ppm"}
    sources = sorted(
        p for p in in_dir.rglob("*") if p.is_file() and p.suffix.lower() in suffixes
    )
    if not sources:
        raise DataError(f"no .png or .ppm images under {in_dir}")
    out = _require_out(cfg)
    pipeline = PipelineConfig(
        kernel_size=cfg.kernel,
        target_size=cfg.size if cfg.size is not None else cfg.input_size,
        foreground=cfg.foreground,
    )

    def process(source: Path) -> tuple[Path, Path]:
        relative = source.relative_to(in_dir)
        try:
            result = preprocess_pipeline(read_image(source), pipeline, source=str(source))
        except (NoForegroundError, ValueError) as exc:
            raise DataError(str(exc)) from exc
        target = (out / relative).with_suffix(".png")
        target.parent.mkdir(parents=True, exist_ok=True)
        write_image(target, result.image)
        sidecar = target.with_suffix(".json")
        sidecar.write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n")
        return target, sidecar

    started = time.perf_counter()
    artifacts: list[Path] = []
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        for target, sidecar in pool.map(process, sources):
            artifacts.extend([target, sidecar])
    timings = {
        "images": len(sources),
        "total_seconds": time.perf_counter() - started,
    }
    _write_manifest(out, "preprocess", cfg, artifacts, timings)
    print(f"preprocessed {len(sources)} images into {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    from adsnn.model import save_model
    from adsnn.train_eval import (
        FoldResult,
        TrainOptions,
        TrainingDiverged,
        accuracy,
        aggregate_cv,
        evaluate,
        kfold_split,
        train,
        train_val_split,
        write_history_csv,
        write_metrics_csv,
    )

    _check_out(cfg)
    try:
        options = TrainOptions(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dataset = _load_dataset(cfg, expected_size=cfg.input_size)
    out = _require_out(cfg)
    model_config = _model_config(cfg, num_classes=len(dataset.class_names))
    try:
        folds = kfold_split(dataset, k=cfg.folds, seed=cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    started = time.perf_counter()
    fold_results: list[FoldResult] = []
    fold_seconds: list[float] = []
    best_model = None
    best_accuracy = -1.0
    for i, (train_idx, test_idx) in enumerate(folds, start=1):
        train_sub_idx, val_idx = train_val_split(
            dataset, train_idx, ratio=cfg.val_ratio, seed=cfg.seed
        )
        model = _build_model(model_config)
        fold_start = time.perf_counter()
        try:
            model, history = train(
                model,
                dataset.subset(train_sub_idx),
                dataset.subset(val_idx) if len(val_idx) else None,
                options,
            )
        except TrainingDiverged as exc:
            raise NumericError(f"fold {i}: {exc}") from exc
        minutes = (time.perf_counter() - fold_start) / 60.0
        confusion = evaluate(model, dataset.subset(test_idx))
        fold_results.append(
            FoldResult(fold=i, confusion=confusion, history=history, train_minutes=minutes)
        )
        fold_seconds.append(minutes * 60.0)
        fold_accuracy = float(accuracy(confusion))
        if fold_accuracy > best_accuracy:
            best_accuracy, best_model = fold_accuracy, model

    report = aggregate_cv(fold_results, dataset.class_names)
    artifacts: list[Path] = []
    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, report)
    artifacts.append(metrics_path)
    for result in fold_results:
        history_path = out / f"history_fold_{result.fold}.csv"
        write_history_csv(history_path, result.history)
        artifacts.append(history_path)
    model_path = out / "model.adsnn"
    save_model(best_model, model_path)
    artifacts.append(model_path)
    timings = {
        "fold_seconds": fold_seconds,
        "total_seconds": time.perf_counter() - started,
    }
    _write_manifest(out, "train", cfg, artifacts, timings)
    print(report.render())
    print(f"saved best fold model (accuracy {best_accuracy:.4f}) to {model_path}")
    return EXIT_OK


def _load_model(path_text: str | None):
    from adsnn.model import ModelFormatError, load_model

    if not path_text:
        raise UsageError("--model is required")
    path = Path(path_text)
    if not path.is_file():
        raise DataError(f"model file {path} does not exist")
    try:
        return load_model(path)
    except ModelFormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_eval(cfg: RunConfig, model_path: str | None) -> int:
    from adsnn.train_eval import FoldResult, aggregate_cv, evaluate, write_metrics_csv

    _check_out(cfg)
    model = _load_model(model_path)
    dataset = _load_dataset(cfg, expected_size=model.config.input_size)
    if len(dataset.class_names) != model.config.num_classes:
        raise DataError(
            f"dataset has {len(dataset.class_names)} classes but the model was built "
            f"for {model.config.num_classes}"
        )
    out = _require_out(cfg)
    started = time.perf_counter()
    confusion = evaluate(model, dataset)
    report = aggregate_cv(
        [FoldResult(fold=1, confusion=confusion, history=[], train_minutes=0.0)],
        dataset.class_names,
    )
    artifacts: list[Path] = []
    confusion_path = out / "confusion.csv"
    with confusion_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["actual\\predicted", *dataset.class_names])
        for name, row in zip(dataset.class_names, confusion.counts):
            writer.writerow([name, *row.tolist()])
    artifacts.append(confusion_path)
    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, report)
    artifacts.append(metrics_path)
    timings = {"total_seconds": time.perf_counter() - started}
    _write_manifest(out, "eval", cfg, artifacts, timings)
    print(report.render())
    return EXIT_OK


def _load_space(path_text: str | None, base_config):
    from adsnn.bayes_opt import Dimension, SearchSpace, default_filter_space

    if path_text is None:
        return default_filter_space(base_config)
    path = Path(path_text)
    if not path.is_file():
        raise DataError(f"search-space file {path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"space parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        if "dims" in data:
            dims = tuple(
                Dimension(
                    name=d["name"],
                    lower=d["lower"],
                    upper=d["upper"],
                    kind=d.get("kind", "integer"),
                )
                for d in data["dims"]
            )
            return SearchSpace(dims)
        return default_filter_space(base_config, lower=data["lower"], upper=data["upper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid search space {path}: {exc}") from exc


def cmd_tune(cfg: RunConfig, space_path: str | None) -> int:
    from adsnn.bayes_opt import FactorizationError, tune_attention_filters, write_tuning_csv
    from adsnn.model import config_to_dict
    from adsnn.train_eval import TrainOptions

    if not cfg.attention_filters:
        raise ConfigError("tuning needs at least one attention block (attention_filters)")
    _check_out(cfg)
    dataset = _load_dataset(cfg, expected_size=cfg.input_size)
    out = _require_out(cfg)
    base_config = _model_config(cfg, num_classes=len(dataset.class_names))
    space = _load_space(space_path, base_config)
    try:
        options = TrainOptions(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            momentum=cfg.momentum,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    started = time.perf_counter()
    try:
        tuned = tune_attention_filters(
            base_config,
            dataset,
            space=space,
            budget=cfg.budget,
            n_init=cfg.init,
            seed=cfg.seed,
            folds=cfg.tune_folds,
            train_options=options,
        )
    except FactorizationError as exc:
        raise NumericError(str(exc)) from exc
    except RuntimeError as exc:
        raise NumericError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    artifacts: list[Path] = []
    tuning_path = out / "tuning.csv"
    write_tuning_csv(tuning_path, tuned.result.history)
    artifacts.append(tuning_path)
    best_path = out / "best_config.json"
    best_path.write_text(
        json.dumps(config_to_dict(tuned.best_config), indent=2, sort_keys=True) + "\n"
    )
    artifacts.append(best_path)
    timings = {"total_seconds": time.perf_counter() - started}
    _write_manifest(out, "tune", cfg, artifacts, timings)
    filters = [spec.conv_channels for spec in tuned.best_config.attention_blocks]
    print(f"best filters {filters} with accuracy {tuned.best_accuracy:.4f}")
    return EXIT_OK


def cmd_visualize(
    cfg: RunConfig,
    model_path: str | None,
    layer: int | None,
    filter_index: int | None,
    all_filters: bool,
    input_path: str | None,
) -> int:
    from adsnn.feature_viz import (
        VizConfig,
        activation_maps,
        export_grid,
        feature_layers,
        filter_visualization,
    )
    from adsnn.preprocess import Image, read_image, write_image

    _check_out(cfg)
    model = _load_model(model_path)
    if layer is None:
        raise UsageError("--layer is required")
    layers = feature_layers(model)
    if not 0 <= layer < len(layers):
        raise ConfigError(f"layer index {layer} out of range; model has {len(layers)} layers")
    out = _require_out(cfg)
    started = time.perf_counter()
    artifacts: list[Path] = []

    if input_path is not None:
        source = Path(input_path)
        if not source.is_file():
            raise DataError(f"input image {source} does not exist")
        try:
            pixels = read_image(source).pixels
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        if pixels.ndim == 2:
            pixels = np.repeat(pixels[:, :, None], 3, axis=2)
        image = pixels.astype(np.float32) / 255.0
        grid = activation_maps(model, image, layer)
        columns = max(1, math.ceil(math.sqrt(grid.channel_count)))
        grid_path = out / f"activations_layer_{layer}.png"
        export_grid(list(grid.maps), columns, grid_path)
        artifacts.append(grid_path)
        sidecar = out / f"activations_layer_{layer}.json"
        sidecar.write_text(
            json.dumps(
                {
                    "layer_index": grid.layer_index,
                    "layer_name": grid.layer_name,
                    "channels": grid.channel_count,
                    "blank_channels": list(grid.blank),
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        artifacts.append(sidecar)
        print(f"wrote activation grid for layer {layer} ({grid.channel_count} channels)")
    else:
        if all_filters:
            filters = list(range(layers[layer].out_channels))
        elif filter_index is not None:
            filters = [filter_index]
        else:
            raise UsageError("one of --filter or --all is required without --input")
        viz_config = VizConfig(steps=cfg.steps, seed=cfg.seed)
        tiles = []
        for n in filters:
            try:
                result = filter_visualization(model, layer, n, viz_config)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            tiles.append(result.image)
            image_path = out / f"layer{layer}_filter{n}.png"
            write_image(image_path, Image(result.image))
            artifacts.append(image_path)
            trace_path = out / f"layer{layer}_filter{n}_trace.csv"
            with trace_path.open("w", newline="") as handle:
                writer = csv.writer(handle)
                writer.writerow(["step", "loss"])
                for step, loss in enumerate(result.trace, start=1):
                    writer.writerow([step, repr(loss)])
            artifacts.append(trace_path)
        if len(tiles) > 1:
            columns = max(1, math.ceil(math.sqrt(len(tiles))))
            mosaic_path = out / f"filters_layer_{layer}.png"
            export_grid(tiles, columns, mosaic_path)
            artifacts.append(mosaic_path)
        print(f"visualized {len(filters)} filter(s) of layer {layer}")

    timings = {"total_seconds": time.perf_counter() - started}
    _write_manifest(out, "visualize", cfg, artifacts, timings)
    return EXIT_OK


def _cost_rows(model) -> list[list[str]]:
    from adsnn.model import cost_table

    rows = [["layer", "type", "grid", "standard_madds", "actual_madds", "reduction"]]
    for name, kind, grid, standard, actual in cost_table(model):
        reduction = f"{actual / standard:.6f}" if standard else ""
        rows.append([name, kind, str(grid), str(standard), str(actual), reduction])
    return rows


def cmd_cost(cfg: RunConfig) -> int:
    model = _build_model(_model_config(cfg))
    rows = _cost_rows(model)
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="\n").writerows(rows)
    text = buffer.getvalue()
    print(text, end="")
    if cfg.out:
        out = _require_out(cfg)
        cost_path = out / "cost.csv"
        cost_path.write_text(text)
        _write_manifest(out, "cost", cfg, [cost_path], {"total_seconds": 0.0})
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing and dispatch


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); usage errors are exit 1
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its keys")
    parser.add_argument("--out", help="output directory for artifacts")
    parser.add_argument("--seed", type=int, help="global random seed")


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input-size", type=int, dest="input_size", help="square input edge")
    parser.add_argument(
        "--width", type=float, dest="width_multiplier", help="channel width multiplier"
    )
    parser.add_argument(
        "--attention-filters",
        dest="attention_filters",
        help="comma-separated conv filter counts of the attention layers ('none' disables)",
    )


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", dest="dataset", help="dataset root (class subdirectories)")
    parser.add_argument("--epochs", type=int, help="training epochs")
    parser.add_argument("--batch-size", type=int, dest="batch_size", help="mini-batch size")
    parser.add_argument(
        "--learning-rate", type=float, dest="learning_rate", help="SGD learning rate"
    )
    parser.add_argument("--momentum", type=float, help="SGD momentum")
    parser.add_argument("--folds", type=int, help="cross-validation fold count")
    parser.add_argument(
        "--val-ratio", type=float, dest="val_ratio", help="train share within each fold"
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="adsnn", description=__doc__, add_help=True)
    commands = parser.add_subparsers(dest="command", metavar="<command>")

    p = commands.add_parser("preprocess", help="segment, align, and crop an image tree")
    p.add_argument("--in", dest="dataset", help="input directory of PNG/PPM images")
    p.add_argument("--size", type=int, help="output edge length in pixels")
    p.add_argument("--kernel", type=int, help="morphological opening kernel (odd, >= 3)")
    p.add_argument(
        "--foreground", choices=("dark", "light"), help="which side of the threshold is kept"
    )
    _add_common(p)

    p = commands.add_parser("train", help="k-fold training with metrics and a saved model")
    _add_train_flags(p)
    _add_model_flags(p)
    _add_common(p)

    p = commands.add_parser("eval", help="score a saved model on a dataset")
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--data", dest="dataset", help="dataset root (class subdirectories)")
    _add_common(p)

    p = commands.add_parser("tune", help="Bayesian optimization of attention filter counts")
    p.add_argument("--budget", type=int, help="total objective evaluations")
    p.add_argument("--init", type=int, help="random evaluations before the surrogate starts")
    p.add_argument("--space", help="JSON search-space file")
    _add_train_flags(p)
    _add_model_flags(p)
    _add_common(p)

    p = commands.add_parser("visualize", help="activation maps or filter visualizations")
    p.add_argument("--model", help="model file written by train")
    p.add_argument("--layer", type=int, help="feature layer index (0 = stem)")
    p.add_argument("--filter", type=int, dest="filter_index", help="filter index to visualize")
    p.add_argument("--all", action="store_true", dest="all_filters", help="all filters")
    p.add_argument("--input", dest="input_path", help="image for activation maps")
    p.add_argument("--steps", type=int, help="gradient-ascent steps")
    _add_common(p)

    p = commands.add_parser("cost", help="per-layer multiply-add cost table")
    p.add_argument("--num-classes", type=int, dest="num_classes", help="classifier classes")
    _add_model_flags(p)
    _add_common(p)

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "model", "layer", "filter_index", "all_filters", "input_path", "space"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def run(command: str, cfg: RunConfig, **params) -> int:
    """Dispatch one subcommand against a resolved configuration."""
    if command == "preprocess":
        return cmd_preprocess(cfg)
    if command == "train":
        return cmd_train(cfg)
    if command == "eval":
        return cmd_eval(cfg, params.get("model"))
    if command == "tune":
        return cmd_tune(cfg, params.get("space"))
    if command == "visualize":
        return cmd_visualize(
            cfg,
            params.get("model"),
            params.get("layer"),
            params.get("filter_index"),
            params.get("all_filters", False),
            params.get("input_path"),
        )
    if command == "cost":
        return cmd_cost(cfg)
    raise UsageError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (see --help)")
        cfg = parse_config(args.config, _overrides(args))
        params = {
            k: v
            for k, v in vars(args).items()
            if k in ("model", "layer", "filter_index", "all_filters", "input_path", "space")
        }
        return run(args.command, cfg, **params)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
