"""Regression learners and the cross-validation harness."""
from .ffnn import FeedForwardNet, MlpSpec
from .forest import Forest, ForestConfig, forest_predict, train_forest
from .harness import (AlgorithmSpec, OutputMode, TrainedModel, cross_validate,
                      holdout_validate, predict_socket, train_model)
from .nn import AdamState, adam_step, smooth_l1
from .pointset import PointSetNet, PointSetSpec, ball_query, farthest_point_sampling

__all__ = [
    "AdamState", "AlgorithmSpec", "FeedForwardNet", "Forest", "ForestConfig", "MlpSpec",
    "OutputMode", "PointSetNet", "PointSetSpec", "TrainedModel", "adam_step", "ball_query",
    "cross_validate", "farthest_point_sampling", "forest_predict", "holdout_validate", "predict_socket",
    "smooth_l1", "train_forest", "train_model",
]
