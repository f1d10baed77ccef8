"""Seeing what individual filters respond to.

Runs gradient ascent on the input image to maximize single channels of
the stem convolution, writes the resulting pattern mosaic, and renders
the activation maps a real image produces at a deeper layer.

Run:  python3 demos/07_visualize_filters.py
Output lands in demos/output/visualize/.
"""

from pathlib import Path

from adsnn.datasets import make_shape_dataset
from adsnn.feature_viz import (
    VizConfig,
    activation_maps,
    export_grid,
    feature_layers,
    filter_visualization,
)
from adsnn.model import build_adsnn, desk_config

out_dir = Path(__file__).parent / "output" / "visualize"
out_dir.mkdir(parents=True, exist_ok=True)

model = build_adsnn(desk_config(num_classes=4, seed=0))
layers = feature_layers(model)
print("spatial layers:")
for i, layer in enumerate(layers):
    print(f"  [{i:>2}] {layer.name:<14} {layer.out_channels:>4} channels")

# Gradient ascent on the stem: start from near-gray noise, repeatedly
# nudge the input toward higher mean activation of one channel.
cfg = VizConfig(steps=30, step_size=1.0, seed=5, input_size=64)
tiles = []
for filter_index in range(layers[0].out_channels):
    result = filter_visualization(model, 0, filter_index, cfg)
    tiles.append(result.image)
    marker = " (never activated)" if result.zero_gradient else ""
    print(f"stem filter {filter_index}: activation "
          f"{result.trace[0]:+.4f} -> {result.trace[-1]:+.4f} "
          f"over {len(result.trace)} steps{marker}")

mosaic_path = out_dir / "stem_filters.png"
export_grid(tiles, columns=4, path=mosaic_path)
print(f"wrote {mosaic_path}")

# Activation maps: push one synthetic shape image through to layer 3 and
# tile the per-channel responses.
shapes = make_shape_dataset(n_per_class=1, size=64, seed=2)
grid = activation_maps(model, shapes.samples[0].image, layer_index=3)
maps_path = out_dir / f"{grid.layer_name}_maps.png"
export_grid(list(grid.maps), columns=8, path=maps_path)
print(f"layer {grid.layer_index} ({grid.layer_name}): {grid.channel_count} channels, "
      f"{len(grid.blank)} blank; wrote {maps_path}")
