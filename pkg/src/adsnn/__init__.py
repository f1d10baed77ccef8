"""Attention-augmented depthwise-separable networks on a small numpy core.

The package covers the full desk-scale pipeline: leaf-image preprocessing,
model construction, k-fold training with multi-class metrics, Gaussian-process
Bayesian hyperparameter tuning, and feature visualization.
"""

from adsnn.tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "no_grad", "__version__"]
