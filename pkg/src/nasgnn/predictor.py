"""Encoder + MLP regressor trained end to end on validation accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .encoder import GraphBatch, encode, encode_batch
from .graph import CellGraph
from .layers import EncoderConfig, ParamRegistry, init_params, load_checkpoint, mlp_forward, save_checkpoint


class MissingLabel(ValueError):
    pass


def labels_of(graphs: Sequence[CellGraph]) -> np.ndarray:
    missing = [i for i, g in enumerate(graphs) if g.val_acc is None]
    if missing:
        raise MissingLabel(f"{len(missing)} graph(s) without val_acc, first at position {missing[0]}")
    return np.array([g.val_acc for g in graphs], dtype=np.float64)


def mse(pred: DiffNode, labels: np.ndarray) -> DiffNode:
    diff = pred - ad.constant(labels.reshape(pred.shape))
    return ad.mean(diff * diff)


@dataclass
class SurrogateModel:
    config: EncoderConfig
    params: ParamRegistry

    def __post_init__(self):
        if self.params["mlp.layer0.weight"].shape[1] != self.config.d_g:
            raise ValueError("regressor input size must equal d_g")

    @classmethod
    def create(cls, config: EncoderConfig | None = None, seed: int = 0) -> "SurrogateModel":
        config = config or EncoderConfig()
        return cls(config, init_params(config, seed))

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        params, config = load_checkpoint(path)
        return cls(config, params)

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.config)

    def forward(self, graphs: Sequence[CellGraph] | GraphBatch) -> DiffNode:
        """Predictions as a ``[B, 1]`` column."""
        return mlp_forward(self.params, "mlp", encode_batch(self.params, self.config, graphs))

    def loss(self, graphs: Sequence[CellGraph]) -> DiffNode:
        return mse(self.forward(graphs), labels_of(graphs))

    def predict_many(self, graphs: Sequence[CellGraph], chunk: int = 512) -> np.ndarray:
        out = [self.forward(graphs[i : i + chunk]).value[:, 0] for i in range(0, len(graphs), chunk)]
        return np.concatenate(out) if out else np.zeros(0)


def predict(model: SurrogateModel, g: CellGraph) -> float:
    """Raw regressor output for one cell; not clipped to [0, 1]."""
    h_g = encode(model.params, model.config, g)
    return mlp_forward(model.params, "mlp", h_g).item()


def loss_mse(model, batch: Sequence[CellGraph]) -> DiffNode:
    """Mean squared error between predictions and ``val_acc`` labels."""
    return model.loss(batch)
