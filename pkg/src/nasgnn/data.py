"""Cell datasets: JSONL import/export, exhaustive enumeration and a synthetic oracle.

The synthetic oracle stands in for CIFAR-10 accuracies so the whole pipeline
can be exercised without the real benchmark export.
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .graph import (
    MAX_EDGES,
    MAX_NODES,
    OPERATIONS,
    CellGraph,
    GraphValidationError,
    NodeType,
    canonical_hash,
    depth_width_features,
    validate_graph,
)
from .io import atomic_write_text
from .predictor import MissingLabel
from .training import NUM_BINS, bin_edges, bin_index

log = logging.getLogger(__name__)

META_PREFIX = "#!meta "
ORACLE_VERSION = 1
# unique cells in the full NAS-Bench-101 export
NASBENCH101_TOTAL = 423_624


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(ValueError):
    def __init__(self, line: int, cause: GraphValidationError):
        super().__init__(f"line {line}: {type(cause).__name__}: {cause}")
        self.line = line
        self.cause = cause


class DuplicateGraph(ValueError):
    pass


class ExhaustedSpace(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[CellGraph, ...]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[CellGraph]:
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]


# ---------------------------------------------------------------- JSONL


def load_jsonl(path, dedup: bool = False) -> Dataset:
    """Read one cell per line. ``#!meta`` lines carry provenance."""
    graphs: list[CellGraph] = []
    provenance: dict = {"source": "imported", "path": str(path)}
    seen: dict[str, int] = {}
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith(META_PREFIX):
                try:
                    provenance.update(json.loads(line[len(META_PREFIX) :]))
                except json.JSONDecodeError as exc:
                    raise ParseError(lineno, f"bad meta header: {exc}") from None
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, str(exc)) from None
            try:
                g = CellGraph.from_record(record)
            except GraphValidationError as exc:
                raise ValidationError(lineno, exc) from exc
            h = canonical_hash(g)
            if h in seen:
                if not dedup:
                    raise DuplicateGraph(f"line {lineno} repeats the cell from line {seen[h]}")
                dropped += 1
                continue
            seen[h] = lineno
            graphs.append(g)
    if dedup:
        provenance["duplicates_dropped"] = dropped
        if dropped:
            log.info("dropped %d duplicate cells from %s", dropped, path)
    if len(graphs) > 400_000 and len(graphs) != NASBENCH101_TOTAL:
        log.warning("%d cells; a full NAS-Bench-101 export has %d", len(graphs), NASBENCH101_TOTAL)
    return Dataset(tuple(graphs), provenance)


def dumps_jsonl(dataset: Dataset | Sequence[CellGraph], meta: Mapping | None = None) -> str:
    lines = []
    if meta is not None:
        lines.append(META_PREFIX + json.dumps(dict(meta), sort_keys=True))
    graphs = dataset.graphs if isinstance(dataset, Dataset) else dataset
    lines += [json.dumps(g.to_record()) for g in graphs]
    return "\n".join(lines) + "\n"


def write_jsonl(path, dataset: Dataset | Sequence[CellGraph], meta: Mapping | None = None) -> None:
    atomic_write_text(path, dumps_jsonl(dataset, meta))


# ---------------------------------------------------------------- enumeration


def _on_all_paths(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    """Every slot reachable from slot 0 and reaching slot n-1 (slots are topological)."""
    fwd = 1
    for u, v in edges:  # edges sorted by source, and sources precede targets
        if fwd >> u & 1:
            fwd |= 1 << v
    bwd = 1 << (n - 1)
    for u, v in reversed(edges):
        if bwd >> v & 1:
            bwd |= 1 << u
    full = (1 << n) - 1
    return fwd == full and bwd == full


@functools.lru_cache(maxsize=None)
def _wirings(n: int, max_edges: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    out = []
    for k in range(min(len(pairs), max_edges) + 1):
        for es in itertools.combinations(pairs, k):
            if _on_all_paths(n, es):
                out.append(es)
    return tuple(out)


def enumerate_cells(max_nodes: int = MAX_NODES, max_edges: int = MAX_EDGES) -> Iterator[CellGraph]:
    """Yield every valid cell up to the limits, once per canonical hash.

    Node slots are in topological order: slot 0 is Input, the last slot is
    Output and edges only go from lower to higher slots.
    """
    if not (2 <= max_nodes <= MAX_NODES) or not (0 <= max_edges <= MAX_EDGES):
        raise ValueError(f"limits must satisfy 2 <= max_nodes <= {MAX_NODES}, max_edges <= {MAX_EDGES}")
    seen: set[str] = set()
    for n in range(2, max_nodes + 1):
        for edges in _wirings(n, max_edges):
            for ops in itertools.product(OPERATIONS, repeat=n - 2):
                nodes = (NodeType.INPUT, *ops, NodeType.OUTPUT)
                try:
                    g = validate_graph(nodes, edges)
                except GraphValidationError:
                    continue
                h = canonical_hash(g)
                if h not in seen:
                    seen.add(h)
                    yield g


# sizes whose cell counts are cheap to enumerate exactly
_EXACT_CAPACITY_MAX = 6


def cell_count(n: int) -> int:
    """Number of distinct valid cells with exactly ``n`` nodes (n <= 6)."""
    if n > _EXACT_CAPACITY_MAX:
        raise ValueError(f"exact count only computed up to {_EXACT_CAPACITY_MAX} nodes")
    return len(_wirings(n, MAX_EDGES)) * len(OPERATIONS) ** (n - 2)


# ---------------------------------------------------------------- synthetic oracle


def synthetic_oracle(g: CellGraph) -> float:
    """Deterministic stand-in accuracy, linear in structural features, clamped to [0, 1]."""
    n_v, _, depth, width, c3, c1, mp = depth_width_features(g)
    acc = 0.70 + 0.030 * c3 + 0.015 * c1 - 0.020 * mp + 0.020 * depth / (n_v - 1) + 0.010 * min(width, 3)
    return float(min(max(acc, 0.0), 1.0))


def _random_cell(rng: np.random.Generator, n: int) -> CellGraph | None:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    k = int(rng.integers(n - 1, min(len(pairs), MAX_EDGES) + 1))
    chosen = sorted(pairs[i] for i in rng.choice(len(pairs), size=k, replace=False))
    if not _on_all_paths(n, chosen):
        return None
    ops = [OPERATIONS[i] for i in rng.integers(0, len(OPERATIONS), size=n - 2)]
    return validate_graph([NodeType.INPUT, *ops, NodeType.OUTPUT], chosen)


def _normalize_sizes(size_distribution) -> dict[int, float]:
    if size_distribution is None:
        size_distribution = range(2, MAX_NODES + 1)
    if isinstance(size_distribution, Mapping):
        dist = {int(k): float(v) for k, v in size_distribution.items() if v > 0}
    else:
        dist = {int(k): 1.0 for k in size_distribution}
    if not dist or any(not 2 <= k <= MAX_NODES for k in dist):
        raise ValueError(f"sizes must be within 2..{MAX_NODES}, got {sorted(dist)}")
    return dist


def gen_synthetic(n: int, seed: int, size_distribution=None, max_stale: int = 20_000) -> Dataset:
    """Sample ``n`` distinct cells labeled by :func:`synthetic_oracle`.

    ``size_distribution`` is an iterable of node counts (uniform) or a
    mapping size -> weight. A size whose cells are all taken is dropped and
    the remaining weights renormalized. Sizes without an exact count give up
    after ``max_stale`` consecutive duplicate draws.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    dist = _normalize_sizes(size_distribution)
    capacity = {k: cell_count(k) for k in dist if k <= _EXACT_CAPACITY_MAX}
    if all(k in capacity for k in dist) and sum(capacity.values()) < n:
        raise ExhaustedSpace(f"only {sum(capacity.values())} distinct cells with sizes {sorted(dist)}, asked for {n}")

    rng = np.random.default_rng(seed)
    taken: Counter[int] = Counter()
    stale: Counter[int] = Counter()
    seen: set[str] = set()
    graphs: list[CellGraph] = []
    while len(graphs) < n:
        sizes = sorted(dist)
        if not sizes:
            raise ExhaustedSpace(f"ran out of distinct cells after {len(graphs)} of {n}")
        weights = np.array([dist[k] for k in sizes])
        size = sizes[int(rng.choice(len(sizes), p=weights / weights.sum()))]
        g = None
        while g is None:
            g = _random_cell(rng, size)
        h = canonical_hash(g)
        if h in seen:
            stale[size] += 1
            if stale[size] >= max_stale:
                del dist[size]
            continue
        stale[size] = 0
        seen.add(h)
        graphs.append(g.with_labels(synthetic_oracle(g)))
        taken[size] += 1
        if size in capacity and taken[size] >= capacity[size]:
            del dist[size]
    provenance = {
        "source": "synthetic",
        "seed": seed,
        "oracle_version": ORACLE_VERSION,
        "n": n,
        "sizes": sorted(_normalize_sizes(size_distribution)),
    }
    return Dataset(tuple(graphs), provenance)


# ---------------------------------------------------------------- statistics


@dataclass
class StatsReport:
    n: int
    label_bins: list[dict]
    node_counts: dict[int, int]
    op_totals: dict[str, int]

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "label_bins": self.label_bins,
            "node_counts": {str(k): v for k, v in sorted(self.node_counts.items())},
            "op_totals": self.op_totals,
        }
        return json.dumps(doc, indent=2) + "\n"

    def bins_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for b in self.label_bins:
            w.writerow([repr(b["lo"]), repr(b["hi"]), b["count"]])
        return buf.getvalue()


def dataset_stats(d: Dataset | Sequence[CellGraph]) -> StatsReport:
    graphs = list(d)
    if any(g.val_acc is None for g in graphs):
        raise MissingLabel("dataset_stats needs val_acc on every cell")
    counts = Counter(bin_index(g.val_acc) for g in graphs)
    label_bins = [{"lo": lo, "hi": hi, "count": counts.get(k, 0)} for k, (lo, hi) in enumerate(bin_edges(NUM_BINS))]
    node_counts = Counter(g.num_nodes for g in graphs)
    op_totals = {op.label: sum(g.nodes.count(op) for g in graphs) for op in OPERATIONS}
    return StatsReport(n=len(graphs), label_bins=label_bins, node_counts=dict(node_counts), op_totals=op_totals)


def label_std(graphs: Sequence[CellGraph]) -> float:
    return float(np.std([g.val_acc for g in graphs]))
