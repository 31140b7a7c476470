"""Differentiable view-synthesis lab for robust self-supervised depth losses.

Depth and camera poses are optimised directly, per pixel, on rendered
synthetic triplets, so every loss term can be studied (and gradient-checked)
without a network in the loop.
"""
from .engine import DepthPoseOptimizer, NumericalAbort
from .augment import Augmenter, AugmentationSpec, AugmentationPlan
from .metrics import DepthMetrics, evaluate

__all__ = ["DepthPoseOptimizer", "NumericalAbort", "Augmenter", "AugmentationSpec", "AugmentationPlan",
           "DepthMetrics", "evaluate"]
__version__ = "0.1.0"
