"""Parameter registry, initialization, GRU cell, MLP head and checkpoint files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode, ShapeMismatch
from .graph import NUM_NODE_TYPES
from .io import atomic_write_text

MLP_HIDDEN = (28, 14, 7)
GRU_GATES = ("r", "z", "n")
CHECKPOINT_FORMAT = 1


class BadConfig(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_n: int = 250
    d_g: int = 56
    rounds: int = 2

    def __post_init__(self):
        for name in ("d_n", "d_g", "rounds"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise BadConfig(f"{name} must be a positive integer, got {value!r}")


class ParamRegistry(Mapping[str, DiffNode]):
    """Named leaf parameters, iterated in sorted-name order."""

    def __init__(self, params: Mapping[str, np.ndarray | DiffNode] | None = None):
        self._params: dict[str, DiffNode] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> DiffNode:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        if isinstance(value, DiffNode):
            value = value.value
        node = DiffNode(np.array(value, dtype=np.float64, order="C", copy=True))
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> DiffNode:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def num_scalars(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def state(self) -> dict[str, np.ndarray]:
        """Deep copy of all values, keyed by name."""
        return {name: self._params[name].value.copy() for name in self}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        if set(state) != set(self._params):
            missing = set(self._params) ^ set(state)
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for name, value in state.items():
            p = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionMismatch(f"{name}: expected {p.shape}, got {value.shape}")
            p.value[...] = value

    def copy(self) -> "ParamRegistry":
        return ParamRegistry(self.state())

    def renamed(self, mapping: Mapping[str, str]) -> "ParamRegistry":
        """Copy where parameter ``old`` is stored under ``mapping.get(old, old)``."""
        return ParamRegistry({mapping.get(k, k): v for k, v in self.state().items()})


def linear_shapes(prefix: str, n_in: int, n_out: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.weight": (n_out, n_in), f"{prefix}.bias": (n_out,)}


def gru_shapes(prefix: str, n_in: int, n_hidden: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for gate in GRU_GATES:
        shapes[f"{prefix}.W_i{gate}"] = (n_hidden, n_in)
        shapes[f"{prefix}.W_h{gate}"] = (n_hidden, n_hidden)
        shapes[f"{prefix}.b_i{gate}"] = (n_hidden,)
        shapes[f"{prefix}.b_h{gate}"] = (n_hidden,)
    return shapes


def mlp_shapes(prefix: str, n_in: int, hidden: Sequence[int] = MLP_HIDDEN) -> dict[str, tuple[int, ...]]:
    sizes = [n_in, *hidden, 1]
    shapes = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        shapes.update(linear_shapes(f"{prefix}.layer{i}", a, b))
    return shapes


def surrogate_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter of encoder + regressor head, by name."""
    dn, dg = config.d_n, config.d_g
    shapes: dict[str, tuple[int, ...]] = {"embedding": (NUM_NODE_TYPES, dn)}
    for t in range(config.rounds):
        shapes.update(linear_shapes(f"round{t}.msg_fwd", 2 * dn, 2 * dn))
        shapes.update(linear_shapes(f"round{t}.msg_rev", 2 * dn, 2 * dn))
        shapes.update(gru_shapes(f"round{t}.update", 2 * dn, dn))
    shapes.update(linear_shapes("aggregate.A1", dn, dg))
    shapes.update(linear_shapes("aggregate.gate", dn, 1))
    shapes.update(mlp_shapes("mlp", dg))
    return shapes


def init_from_shapes(shapes: Mapping[str, tuple[int, ...]], seed: int) -> ParamRegistry:
    """Glorot-uniform matrices, zero biases, N(0, 1/d) embedding table.

    Parameters are drawn in sorted-name order from one generator, so the
    result depends only on ``(shapes, seed)``.
    """
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()
    for name in sorted(shapes):
        shape = shapes[name]
        if name == "embedding":
            value = rng.standard_normal(shape) / math.sqrt(shape[1])
        elif len(shape) == 2:
            fan_out, fan_in = shape
            a = math.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-a, a, size=shape)
        else:
            value = np.zeros(shape)
        reg.add(name, value)
    return reg


def init_params(config: EncoderConfig, seed: int) -> ParamRegistry:
    return init_from_shapes(surrogate_shapes(config), seed)


def count_parameters(config: EncoderConfig, hidden: Sequence[int] = MLP_HIDDEN) -> int:
    """Closed-form scalar count for :func:`init_params`."""
    dn, dg = config.d_n, config.d_g
    per_round = 2 * (4 * dn * dn + 2 * dn) + (3 * 2 * dn * dn + 3 * dn * dn + 6 * dn)
    aggregation = (dg * dn + dg) + (dn + 1)
    sizes = [dg, *hidden, 1]
    mlp = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    return NUM_NODE_TYPES * dn + config.rounds * per_round + aggregation + mlp


def dense(params: Mapping[str, DiffNode], prefix: str, x) -> DiffNode:
    return ad.linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def gru_cell(params: Mapping[str, DiffNode], prefix: str, x, h) -> DiffNode:
    """Standard GRU update with ``h`` as hidden state; rows are independent cells.

    r = sig(W_ir x + b_ir + W_hr h + b_hr)
    z = sig(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h
    """
    x, h = ad._wrap(x), ad._wrap(h)
    hidden = params[f"{prefix}.W_hr"].shape[0]
    if h.shape[-1] != hidden or x.shape[:-1] != h.shape[:-1]:
        raise ShapeMismatch(f"gru_cell: x {x.shape}, h {h.shape}, hidden size {hidden}")

    def affine(gate):
        gi = ad.linear(x, params[f"{prefix}.W_i{gate}"], params[f"{prefix}.b_i{gate}"])
        gh = ad.linear(h, params[f"{prefix}.W_h{gate}"], params[f"{prefix}.b_h{gate}"])
        return gi, gh

    ir, hr = affine("r")
    iz, hz = affine("z")
    i_n, h_n = affine("n")
    r = ad.sigmoid(ir + hr)
    z = ad.sigmoid(iz + hz)
    n = ad.tanh(i_n + r * h_n)
    return (1.0 - z) * n + z * h


def mlp_layer_count(params: Mapping[str, DiffNode], prefix: str) -> int:
    count = 0
    while f"{prefix}.layer{count}.weight" in params:
        count += 1
    return count


def mlp_forward(params: Mapping[str, DiffNode], prefix: str, x) -> DiffNode:
    """Linear layers with ReLU between them and a linear final output."""
    n_layers = mlp_layer_count(params, prefix)
    out = ad._wrap(x)
    for i in range(n_layers):
        out = dense(params, f"{prefix}.layer{i}", out)
        if i < n_layers - 1:
            out = ad.relu(out)
    return out


def save_checkpoint(path, params: ParamRegistry, config: EncoderConfig) -> None:
    """Write a JSON checkpoint. Python's float repr round-trips exactly."""
    doc = {
        "header": {
            "d_n": config.d_n,
            "d_g": config.d_g,
            "rounds": config.rounds,
            "format_version": CHECKPOINT_FORMAT,
        },
        "params": {
            name: {"shape": list(p.shape), "values": p.value.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    atomic_write_text(path, json.dumps(doc, separators=(",", ":")) + "\n")


def load_checkpoint(path) -> tuple[ParamRegistry, EncoderConfig]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    header = doc["header"]
    if header.get("format_version") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {header.get('format_version')!r}")
    config = EncoderConfig(d_n=header["d_n"], d_g=header["d_g"], rounds=header["rounds"])
    expected = surrogate_shapes(config)
    reg = ParamRegistry()
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        if expected.get(name) != shape:
            raise DimensionMismatch(f"{name}: checkpoint shape {shape}, header implies {expected.get(name)}")
        reg.add(name, np.array(entry["values"], dtype=np.float64).reshape(shape))
    if set(reg) != set(expected):
        raise DimensionMismatch(f"missing parameters: {sorted(set(expected) - set(reg))}")
    return reg, config
