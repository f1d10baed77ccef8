"""Two-dimensional multi-head self-attention over an image grid.

Demonstrates the attention weight matrix (every row a probability
distribution over positions), then the augmented block that concatenates
a convolution branch with the attention branch.

Run:  python3 demos/03_attention_block.py
"""

import numpy as np

from adsnn.attention import (
    AttentionConfig,
    attention_augmented_conv,
    init_attention_weights,
    single_head_attention,
)
from adsnn.tensor import Tensor, no_grad, softmax

rng = np.random.default_rng(3)

# A 5x6 feature map with 8 channels, flattened to 30 positions.
h, w, channels = 5, 6, 8
x = rng.normal(size=(h * w, channels))
wq = rng.normal(size=(channels, 4))
wk = rng.normal(size=(channels, 4))
wv = rng.normal(size=(channels, 4))

with no_grad():
    out = single_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), key_depth=4)
    # Recompute the attention map itself to inspect it.
    scores = (x @ wq) @ (x @ wk).T / np.sqrt(4.0)
    attn = softmax(Tensor(scores)).data

print("attention map shape      :", attn.shape, "(positions x positions)")
print("row sums (first five)    :", np.round(attn.sum(axis=1)[:5], 12))
print("max row-sum error        :", f"{np.abs(attn.sum(axis=1) - 1).max():.2e}")
print("output shape             :", out.shape)

# Every output position mixes VALUES from every input position, so a
# single attention layer already has a global receptive field.
most_attended = int(np.argmax(attn[0]))
print(f"position 0 attends most to position {most_attended} "
      f"(weight {attn[0, most_attended]:.3f})")

# The augmented block: convolution channels and attention channels side
# by side. 12 conv filters + 8 value channels -> 20 output channels.
config = AttentionConfig(num_heads=2, key_depth=8, value_depth=8)
weights = init_attention_weights(rng, channels, config)
image = Tensor(rng.normal(size=(h, w, channels)).astype(np.float32))
kernel = Tensor(rng.normal(size=(3, 3, channels, 12)).astype(np.float32) * 0.1)

with no_grad():
    augmented = attention_augmented_conv(image, kernel, weights, config)

print()
print("augmented block input    :", image.shape)
print("augmented block output   :", augmented.shape, "= (H, W, conv 12 + values 8)")
assert augmented.shape == (h, w, 12 + config.value_depth)
print("channel arithmetic checks out.")
