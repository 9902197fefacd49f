"""Graph neural network surrogate for predicting the accuracy of NAS-Bench-101 style cells."""

from .encoder import GraphBatch, aggregate, encode, encode_batch, propagate_round
from .graph import (
    CellGraph,
    NodeType,
    canonical_hash,
    depth_width_features,
    neighborhoods,
    one_hot_encode,
    validate_graph,
)
from .layers import EncoderConfig, ParamRegistry, init_params
from .predictor import SurrogateModel, loss_mse, predict

__all__ = [
    "CellGraph",
    "EncoderConfig",
    "GraphBatch",
    "NodeType",
    "ParamRegistry",
    "SurrogateModel",
    "aggregate",
    "canonical_hash",
    "depth_width_features",
    "encode",
    "encode_batch",
    "init_params",
    "loss_mse",
    "neighborhoods",
    "one_hot_encode",
    "predict",
    "propagate_round",
    "validate_graph",
]
