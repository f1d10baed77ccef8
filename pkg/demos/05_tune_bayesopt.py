"""Bayesian optimization with a Gaussian-process surrogate.

First maximizes a cheap analytic function so every step is visible, then
tunes the attention filter counts of a tiny model on a tiny dataset.

Run:  python3 demos/05_tune_bayesopt.py
"""

from adsnn.bayes_opt import Dimension, SearchSpace, bo_loop, tune_attention_filters
from adsnn.datasets import make_shape_dataset
from adsnn.model import ModelConfig, default_attention_block_specs, scale_channels
from adsnn.train_eval import TrainOptions

# Part 1: a continuous toy problem with a known optimum at x = 3.
space = SearchSpace(dims=[Dimension(name="x", lower=0.0, upper=10.0)])
result = bo_loop(lambda p: -((p[0] - 3.0) ** 2), space, n_init=5, budget=20, seed=1)

print("toy objective: maximize -(x - 3)^2 on [0, 10]")
print(f"  best x found : {result.best_point[0]:.4f}  (truth: 3.0)")
print(f"  best value   : {result.best_value:.6f}")
print("  best-so-far trace:",
      " ".join(f"{r.best_value:.3f}" for r in result.history[::4]))

# The trace never decreases; each record carries the incumbent.
assert all(a.best_value <= b.best_value
           for a, b in zip(result.history, result.history[1:]))

# Part 2: the real use - choosing attention filter counts by
# cross-validated accuracy. Tiny scale so the demo stays quick.
dataset = make_shape_dataset(n_per_class=8, size=16, seed=0)

config = ModelConfig(
    input_size=16,
    num_classes=len(dataset.class_names),
    width_multiplier=0.125,
    attention_blocks=default_attention_block_specs(
        scale_channels(1024, 0.125), conv_channels=[16]
    ),
    seed=0,
)
options = TrainOptions(epochs=2, batch_size=8, learning_rate=0.02, momentum=0.9, seed=0)

filter_space = SearchSpace(
    dims=[Dimension(name="block_1_filters", lower=8, upper=32, kind="integer")]
)
tuned = tune_attention_filters(
    config, dataset, space=filter_space, budget=6, seed=0, folds=2, train_options=options
)

print("\nfilter search over one attention block, budget 6:")
for record in tuned.result.history:
    print(f"  eval {record.iteration:>2}: filters={record.point[0]:>2.0f} "
          f"accuracy={record.value:.3f} best={record.best_value:.3f}")
print(f"chosen filter count: {tuned.best_config.attention_blocks[0].conv_channels}")
