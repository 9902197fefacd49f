"""Bidirectional message-passing encoder for architecture cells.

Node states live in one ``[num_nodes, d_n]`` matrix. A batch of cells is the
disjoint union of their graphs, so one pass encodes many cells and every
message only ever travels along edges of its own cell.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode, ShapeMismatch
from .graph import CellGraph
from .layers import EncoderConfig, dense, gru_cell


@dataclass(frozen=True)
class GraphBatch:
    node_types: np.ndarray  # [N]
    src: np.ndarray  # [E]
    dst: np.ndarray  # [E]
    graph_index: np.ndarray  # [N], owning cell of each node
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @classmethod
    def from_graphs(cls, graphs: Sequence[CellGraph]) -> "GraphBatch":
        if not graphs:
            empty = np.zeros(0, dtype=np.intp)
            return cls(empty, empty, empty, empty, 0)
        parts = [_graph_arrays(g) for g in graphs]
        sizes = np.array([len(p[0]) for p in parts])
        offsets = np.cumsum(sizes) - sizes
        return cls(
            node_types=np.concatenate([p[0] for p in parts]),
            src=np.concatenate([p[1] + off for p, off in zip(parts, offsets)]),
            dst=np.concatenate([p[2] + off for p, off in zip(parts, offsets)]),
            graph_index=np.repeat(np.arange(len(graphs)), sizes),
            num_graphs=len(graphs),
        )


@functools.lru_cache(maxsize=1 << 16)
def _graph_arrays(g: CellGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    types = np.array([int(t) for t in g.nodes], dtype=np.intp)
    # ascending (receiver, sender) order fixes the neighbor summation order
    edges = sorted(g.edges, key=lambda e: (e[1], e[0]))
    src = np.array([u for u, _ in edges], dtype=np.intp)
    dst = np.array([v for _, v in edges], dtype=np.intp)
    return types, src, dst


def _as_batch(g) -> GraphBatch:
    if isinstance(g, GraphBatch):
        return g
    if isinstance(g, CellGraph):
        return GraphBatch.from_graphs([g])
    return GraphBatch.from_graphs(list(g))


def _messages(params, prefix: str, h: DiffNode, receiver, sender, num_nodes: int) -> DiffNode:
    """Sum over edges of ``Lin([h_receiver ; h_sender])`` into the receiving node."""
    width = params[f"{prefix}.weight"].shape[0]
    if len(receiver) == 0:
        return ad.constant(np.zeros((num_nodes, width)))
    pair = ad.concat([ad.take_rows(h, receiver), ad.take_rows(h, sender)])
    return ad.segment_sum(dense(params, prefix, pair), receiver, num_nodes)


def propagate_round(params: Mapping[str, DiffNode], t: int, g, h) -> DiffNode:
    """One synchronous round: every node reads only the round-input states.

    Forward messages come from predecessors, reverse messages from
    successors; their sum is the GRU input and ``h_v`` the hidden state.
    """
    batch = _as_batch(g)
    h = ad._wrap(h)
    if h.value.ndim != 2 or h.shape[0] != batch.num_nodes:
        raise ShapeMismatch(f"propagate_round: states {h.shape} for {batch.num_nodes} nodes")
    fwd = _messages(params, f"round{t}.msg_fwd", h, batch.dst, batch.src, batch.num_nodes)
    rev = _messages(params, f"round{t}.msg_rev", h, batch.src, batch.dst, batch.num_nodes)
    return gru_cell(params, f"round{t}.update", fwd + rev, h)


def aggregate(params: Mapping[str, DiffNode], h, graph_index=None, num_graphs: int | None = None) -> DiffNode:
    """Gated sum of node states.

    Returns ``[d_g]`` when ``graph_index`` is omitted (all rows form one
    cell), else ``[num_graphs, d_g]``.
    """
    h = ad._wrap(h)
    values = dense(params, "aggregate.A1", h)
    gate = ad.sigmoid(dense(params, "aggregate.gate", h))  # [N, 1]
    # broadcast the scalar gate across the d_g columns with an outer product
    gated = values * ad.matmul(gate, ad.constant(np.ones((1, values.shape[1]))))
    if graph_index is None:
        return ad.sum_rows(gated)
    return ad.segment_sum(gated, graph_index, num_graphs)


def initial_states(params: Mapping[str, DiffNode], batch: GraphBatch) -> DiffNode:
    return ad.take_rows(params["embedding"], batch.node_types)


def node_states(params: Mapping[str, DiffNode], config: EncoderConfig, g) -> DiffNode:
    batch = _as_batch(g)
    h = initial_states(params, batch)
    for t in range(config.rounds):
        h = propagate_round(params, t, batch, h)
    return h


def encode_batch(params: Mapping[str, DiffNode], config: EncoderConfig, graphs) -> DiffNode:
    """Graph embeddings ``[len(graphs), d_g]``."""
    batch = _as_batch(graphs)
    h = node_states(params, config, batch)
    return aggregate(params, h, batch.graph_index, batch.num_graphs)


def encode(params: Mapping[str, DiffNode], config: EncoderConfig, g: CellGraph) -> DiffNode:
    """Graph embedding ``h_G`` of a single cell, shape ``[d_g]``."""
    h = node_states(params, config, g)
    return aggregate(params, h)
