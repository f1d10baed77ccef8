"""Exact multiply-add accounting for depthwise-separable convolutions.

Shows the closed-form cost ratio on a worked example, then prints the
per-layer cost table of the small 64-pixel model configuration.

Run:  python3 demos/02_cost_model.py
"""

from fractions import Fraction

from adsnn.conv_layers import CostParams, cost_dws, cost_standard
from adsnn.model import build_adsnn, cost_table, desk_config

# One layer's worth of numbers: 3x3 kernel, 32 -> 64 channels on a 56x56 grid.
p = CostParams(kernel_size=3, in_channels=32, out_channels=64, feature_size=56)
standard = cost_standard(p)
separable = cost_dws(p)
ratio = Fraction(separable, standard)

print("standard convolution :", f"{standard:,}", "multiply-adds")
print("depthwise separable  :", f"{separable:,}", "multiply-adds")
print("exact ratio          :", ratio, f"= {float(ratio):.6f}")

# The ratio is exactly 1/out_channels + 1/kernel_size^2, independent of
# the input channel count and grid size.
predicted = Fraction(1, p.out_channels) + Fraction(1, p.kernel_size**2)
assert ratio == predicted
print("matches 1/out_channels + 1/kernel_size^2 =", predicted)

# The same accounting applied to every layer of the small desk model.
model = build_adsnn(desk_config(num_classes=4))
print()
print(f"{'layer':<14} {'kind':<10} {'grid':>4} {'standard':>14} {'actual':>14}")
total_standard = total_actual = 0
for name, kind, grid, std, actual in cost_table(model):
    total_standard += std
    total_actual += actual
    print(f"{name:<14} {kind:<10} {grid:>4} {std:>14,} {actual:>14,}")
print(f"{'total':<14} {'':<10} {'':>4} {total_standard:>14,} {total_actual:>14,}")
print(f"whole-model reduction: {total_actual / total_standard:.4f}x")
