"""Architecture cells: validation, neighborhoods, structural features and hashing.

A cell is a small DAG whose nodes are typed (input, output and one of three
operations). Limits follow the NAS-Bench-101 search space: at most 7 nodes
and 9 edges.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_NODES = 7
MAX_EDGES = 9


class NodeType(enum.IntEnum):
    INPUT = 0
    OUTPUT = 1
    CONV3X3 = 2
    CONV1X1 = 3
    MAXPOOL3X3 = 4

    @property
    def label(self) -> str:
        return _NAMES[self]

    @classmethod
    def parse(cls, raw) -> "NodeType":
        if isinstance(raw, NodeType):
            return raw
        try:
            return _BY_NAME[raw]
        except (KeyError, TypeError):
            raise UnknownNodeType(f"unknown node type {raw!r}") from None


_NAMES = {
    NodeType.INPUT: "input",
    NodeType.OUTPUT: "output",
    NodeType.CONV3X3: "conv3x3",
    NodeType.CONV1X1: "conv1x1",
    NodeType.MAXPOOL3X3: "maxpool3x3",
}
_BY_NAME = {name: t for t, name in _NAMES.items()}

OPERATIONS = (NodeType.CONV3X3, NodeType.CONV1X1, NodeType.MAXPOOL3X3)
NUM_NODE_TYPES = len(NodeType)


class GraphValidationError(ValueError):
    """Base class for every rejected cell."""


class NodeLimitExceeded(GraphValidationError):
    pass


class EdgeLimitExceeded(GraphValidationError):
    pass


class CycleDetected(GraphValidationError):
    pass


class BadEndpoints(GraphValidationError):
    pass


class DisconnectedNode(GraphValidationError):
    pass


class UnknownNodeType(GraphValidationError):
    pass


class MalformedEdge(GraphValidationError):
    pass


class MalformedLabel(GraphValidationError):
    pass


@dataclass(frozen=True)
class CellGraph:
    """A validated cell. Build instances with :func:`validate_graph`."""

    nodes: tuple[NodeType, ...]
    edges: tuple[tuple[int, int], ...]
    val_acc: float | None = None
    test_acc: float | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def input_index(self) -> int:
        return self.nodes.index(NodeType.INPUT)

    @property
    def output_index(self) -> int:
        return self.nodes.index(NodeType.OUTPUT)

    @property
    def labeled(self) -> bool:
        return self.val_acc is not None

    def with_labels(self, val_acc: float | None, test_acc: float | None = None) -> "CellGraph":
        return validate_graph(self.nodes, self.edges, val_acc=val_acc, test_acc=test_acc)

    def permuted(self, perm: Sequence[int]) -> "CellGraph":
        """Relabel so that old node ``i`` becomes new node ``perm[i]``."""
        n = self.num_nodes
        if sorted(perm) != list(range(n)):
            raise ValueError(f"not a permutation of range({n}): {perm!r}")
        nodes = [None] * n
        for old, new in enumerate(perm):
            nodes[new] = self.nodes[old]
        edges = [(perm[u], perm[v]) for u, v in self.edges]
        return validate_graph(nodes, edges, val_acc=self.val_acc, test_acc=self.test_acc)

    def reversed(self) -> "CellGraph":
        """Same node types with every edge flipped.

        The flipped cell runs output->input, so it is returned unvalidated;
        it is only meaningful as encoder input.
        """
        return CellGraph(
            nodes=self.nodes,
            edges=tuple((v, u) for u, v in self.edges),
            val_acc=self.val_acc,
            test_acc=self.test_acc,
        )

    def to_record(self) -> dict:
        record = {
            "nodes": [t.label for t in self.nodes],
            "edges": [[u, v] for u, v in self.edges],
        }
        if self.val_acc is not None:
            record["val_acc"] = self.val_acc
        if self.test_acc is not None:
            record["test_acc"] = self.test_acc
        return record

    @classmethod
    def from_record(cls, record: dict) -> "CellGraph":
        if not isinstance(record, dict) or "nodes" not in record or "edges" not in record:
            raise GraphValidationError("record must be an object with 'nodes' and 'edges'")
        return validate_graph(
            record["nodes"],
            record["edges"],
            val_acc=record.get("val_acc"),
            test_acc=record.get("test_acc"),
        )


@dataclass(frozen=True)
class Neighborhoods:
    incoming: tuple[tuple[int, ...], ...]
    outgoing: tuple[tuple[int, ...], ...]


def _check_label(name: str, value) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedLabel(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise MalformedLabel(f"{name}={value} is outside [0, 1]")
    return value


def _topological_order(n: int, edges: Iterable[tuple[int, int]]) -> list[int]:
    """Kahn's algorithm, smallest available index first.

    Raises CycleDetected if fewer than ``n`` nodes can be ordered.
    """
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != n:
        stuck = sorted(set(range(n)) - set(order))
        raise CycleDetected(f"cycle among nodes {stuck} or their descendants")
    return order


def _reachable(start: int, adj: list[list[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def validate_graph(raw_nodes, raw_edges, val_acc=None, test_acc=None) -> CellGraph:
    """Check a raw cell description and return it as a :class:`CellGraph`.

    Node types may be given as :class:`NodeType` values or as their JSONL
    names. Input and Output are located by type, not by position.
    """
    nodes = tuple(NodeType.parse(t) for t in raw_nodes)
    n = len(nodes)
    if n > MAX_NODES:
        raise NodeLimitExceeded(f"{n} nodes, at most {MAX_NODES} allowed")
    if n < 2:
        raise NodeLimitExceeded(f"{n} nodes, at least 2 required")

    edges = []
    seen = set()
    for raw in raw_edges:
        try:
            u, v = raw
        except (TypeError, ValueError):
            raise MalformedEdge(f"edge {raw!r} is not an index pair") from None
        if not all(isinstance(i, (int, np.integer)) and not isinstance(i, bool) for i in (u, v)):
            raise MalformedEdge(f"edge {raw!r} has non-integer endpoints")
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise MalformedEdge(f"edge ({u}, {v}) out of range for {n} nodes")
        if u == v:
            raise MalformedEdge(f"self-loop on node {u}")
        if (u, v) in seen:
            raise MalformedEdge(f"duplicate edge ({u}, {v})")
        seen.add((u, v))
        edges.append((u, v))
    if len(edges) > MAX_EDGES:
        raise EdgeLimitExceeded(f"{len(edges)} edges, at most {MAX_EDGES} allowed")

    n_in = nodes.count(NodeType.INPUT)
    n_out = nodes.count(NodeType.OUTPUT)
    if n_in != 1 or n_out != 1:
        raise BadEndpoints(f"need exactly one input and one output, got {n_in} and {n_out}")

    _topological_order(n, edges)

    succ: list[list[int]] = [[] for _ in range(n)]
    pred: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        succ[u].append(v)
        pred[v].append(u)
    src = nodes.index(NodeType.INPUT)
    dst = nodes.index(NodeType.OUTPUT)
    on_path = _reachable(src, succ) & _reachable(dst, pred)
    if len(on_path) != n:
        off = sorted(set(range(n)) - on_path)
        raise DisconnectedNode(f"nodes {off} are not on any input->output path")

    return CellGraph(
        nodes=nodes,
        edges=tuple(edges),
        val_acc=_check_label("val_acc", val_acc),
        test_acc=_check_label("test_acc", test_acc),
    )


def topological_order(g: CellGraph) -> list[int]:
    return _topological_order(g.num_nodes, g.edges)


def neighborhoods(g: CellGraph) -> Neighborhoods:
    incoming: list[list[int]] = [[] for _ in range(g.num_nodes)]
    outgoing: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for u, v in g.edges:
        incoming[v].append(u)
        outgoing[u].append(v)
    return Neighborhoods(
        incoming=tuple(tuple(sorted(x)) for x in incoming),
        outgoing=tuple(tuple(sorted(x)) for x in outgoing),
    )


def levels(g: CellGraph) -> list[int]:
    """Longest-path distance of every node from the Input node."""
    order = topological_order(g)
    nb = neighborhoods(g)
    level = [0] * g.num_nodes
    for v in order:
        if nb.incoming[v]:
            level[v] = max(level[u] for u in nb.incoming[v]) + 1
    return level


def depth_width_features(g: CellGraph) -> np.ndarray:
    """``[|V|, |E|, depth, width, #conv3x3, #conv1x1, #maxpool3x3]``.

    depth is the edge count of the longest input->output path, width the
    largest number of nodes sharing one level.
    """
    level = levels(g)
    depth = level[g.output_index]
    width = max(np.bincount(level))
    counts = [g.nodes.count(op) for op in OPERATIONS]
    return np.array([g.num_nodes, g.num_edges, depth, width, *counts], dtype=np.float64)


ONE_HOT_LENGTH = MAX_NODES * NUM_NODE_TYPES + MAX_NODES * MAX_NODES


def one_hot_encode(g: CellGraph) -> np.ndarray:
    """Zero-padded node one-hot block (7x5) followed by the 7x7 adjacency matrix.

    Uses the node order as stored, so it is not permutation invariant.
    """
    out = np.zeros(ONE_HOT_LENGTH, dtype=np.float64)
    for i, t in enumerate(g.nodes):
        out[i * NUM_NODE_TYPES + int(t)] = 1.0
    base = MAX_NODES * NUM_NODE_TYPES
    for u, v in g.edges:
        out[base + u * MAX_NODES + v] = 1.0
    return out


def canonical_form(g: CellGraph) -> CellGraph:
    """Relabel nodes into smallest-index-first topological order."""
    order = topological_order(g)
    perm = [0] * g.num_nodes
    for new, old in enumerate(order):
        perm[old] = new
    nodes = tuple(g.nodes[old] for old in order)
    edges = tuple(sorted((perm[u], perm[v]) for u, v in g.edges))
    return CellGraph(nodes=nodes, edges=edges, val_acc=g.val_acc, test_acc=g.test_acc)


def canonical_hash(g: CellGraph) -> str:
    """sha256 of the canonical node order, types and edges; labels excluded."""
    c = canonical_form(g)
    payload = json.dumps(
        {"nodes": [t.label for t in c.nodes], "edges": [list(e) for e in c.edges]},
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
