"""Adam, dataset splits, the training loop, binned evaluation and the MLP baseline."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .graph import CellGraph, depth_width_features, one_hot_encode
from .layers import ParamRegistry, init_from_shapes, mlp_forward, mlp_shapes
from .predictor import labels_of, mse

log = logging.getLogger(__name__)

NUM_BINS = 9


class NonFiniteGradient(ArithmeticError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


class EmptyPartition(ValueError):
    pass


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamRegistry, adam: AdamState) -> None:
    """One bias-corrected Adam update from the accumulated gradients, then zero them."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    adam.step += 1
    c1 = 1.0 - adam.beta1**adam.step
    c2 = 1.0 - adam.beta2**adam.step
    for name, p in params.items():
        g = p.grad
        if name not in adam.m:
            adam.m[name] = np.zeros_like(g)
            adam.v[name] = np.zeros_like(g)
        m, v = adam.m[name], adam.v[name]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * (g * g)
        p.value -= adam.lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
        p.zero_grad()


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class RandomSplit:
    train_frac: float = 0.7
    test_frac: float = 0.2
    val_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not math.isclose(self.train_frac + self.test_frac + self.val_frac, 1.0):
            raise ValueError("split fractions must sum to 1")


@dataclass(frozen=True)
class ZeroShotSplit:
    """Hold out every cell with ``test_size`` nodes; train on ``train_sizes``."""

    train_sizes: frozenset[int]
    test_size: int
    seed: int = 0
    val_frac: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "train_sizes", frozenset(self.train_sizes))
        if self.test_size in self.train_sizes:
            raise ValueError(f"test size {self.test_size} is also a training size")


SplitSpec = RandomSplit | ZeroShotSplit


def split(dataset: Sequence[CellGraph], spec: SplitSpec):
    """Return ``(train, test, val)`` lists; deterministic given the split's seed."""
    graphs = list(dataset)
    if not graphs:
        raise EmptyPartition("dataset is empty")
    rng = np.random.default_rng(spec.seed)
    if isinstance(spec, RandomSplit):
        n = len(graphs)
        order = rng.permutation(n)
        n_train = math.floor(spec.train_frac * n)
        n_test = math.floor(spec.test_frac * n)
        shuffled = [graphs[i] for i in order]
        train = shuffled[:n_train]
        test = shuffled[n_train : n_train + n_test]
        val = shuffled[n_train + n_test :]
    else:
        test = [g for g in graphs if g.num_nodes == spec.test_size]
        pool = [g for g in graphs if g.num_nodes in spec.train_sizes]
        order = rng.permutation(len(pool))
        n_train = math.floor((1.0 - spec.val_frac) * len(pool))
        train = [pool[i] for i in order[:n_train]]
        val = [pool[i] for i in order[n_train:]]
    for name, part in (("train", train), ("test", test), ("val", val)):
        if not part:
            raise EmptyPartition(f"{name} partition is empty")
    return train, test, val


# ---------------------------------------------------------------- evaluation


@dataclass
class BinStats:
    lo: float
    hi: float
    count: int
    mse_mean: float | None
    mse_var: float | None


@dataclass
class EvalReport:
    rmse: float
    mse: float
    n_examples: int
    bins: list[BinStats]

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "mse": self.mse,
            "n_examples": self.n_examples,
            "bins": [vars(b).copy() for b in self.bins],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        bins = [
            BinStats(
                lo=float(b["lo"]),
                hi=float(b["hi"]),
                count=int(b["count"]),
                mse_mean=None if b["mse_mean"] is None else float(b["mse_mean"]),
                mse_var=None if b["mse_var"] is None else float(b["mse_var"]),
            )
            for b in doc["bins"]
        ]
        return cls(rmse=float(doc["rmse"]), mse=float(doc["mse"]), n_examples=int(doc["n_examples"]), bins=bins)

    def bins_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "mse_mean", "mse_var"])
        for b in self.bins:
            w.writerow(
                [
                    repr(b.lo),
                    repr(b.hi),
                    b.count,
                    "" if b.mse_mean is None else repr(b.mse_mean),
                    "" if b.mse_var is None else repr(b.mse_var),
                ]
            )
        return buf.getvalue()


def bin_edges(num_bins: int = NUM_BINS) -> list[tuple[float, float]]:
    return [(k / num_bins, (k + 1) / num_bins) for k in range(num_bins)]


def bin_index(label: float, num_bins: int = NUM_BINS) -> int:
    """Equal-width bin over [0, 1]; the last bin is closed at 1."""
    k = min(max(int(math.floor(label * num_bins)), 0), num_bins - 1)
    # guard against rounding in label * num_bins at the edges
    while k > 0 and label < k / num_bins:
        k -= 1
    while k < num_bins - 1 and label >= (k + 1) / num_bins:
        k += 1
    return k


def report_from_predictions(pred: np.ndarray, labels: np.ndarray) -> EvalReport:
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    sq = (pred - labels) ** 2
    n = len(sq)
    m = float(sq.mean()) if n else float("nan")
    which = np.array([bin_index(x) for x in labels], dtype=np.intp)
    bins = []
    for k, (lo, hi) in enumerate(bin_edges()):
        errs = sq[which == k]
        if len(errs):
            bins.append(BinStats(lo, hi, len(errs), float(errs.mean()), float(errs.var())))
        else:
            bins.append(BinStats(lo, hi, 0, None, None))
    return EvalReport(rmse=math.sqrt(m), mse=m, n_examples=n, bins=bins)


def predict_parallel(model, graphs: Sequence[CellGraph], jobs: int = 1, chunk: int = 512) -> np.ndarray:
    """Predictions in dataset order; chunks may be encoded concurrently."""
    chunks = [list(graphs[i : i + chunk]) for i in range(0, len(graphs), chunk)]
    if not chunks:
        return np.zeros(0)
    if jobs <= 1 or len(chunks) == 1:
        parts = [model.predict_many(c, chunk=chunk) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda c: model.predict_many(c, chunk=chunk), chunks))
    return np.concatenate(parts)


def evaluate(model, dataset: Sequence[CellGraph], jobs: int = 1) -> EvalReport:
    """MSE/RMSE plus per-bin squared-error statistics over ground-truth accuracy."""
    graphs = list(dataset)
    labels = labels_of(graphs)
    return report_from_predictions(predict_parallel(model, graphs, jobs), labels)


def rmse(model, graphs: Sequence[CellGraph]) -> float:
    if not graphs:
        return float("nan")
    pred = model.predict_many(list(graphs))
    return float(np.sqrt(np.mean((pred - labels_of(graphs)) ** 2)))


# ---------------------------------------------------------------- training loop


@dataclass
class TrainLog:
    rows: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_rmse: float = math.inf
    best_state: dict[str, np.ndarray] | None = None

    def to_csv(self) -> str:
        lines = ["epoch,train_rmse,val_rmse"]
        lines += [f"{e},{tr!r},{va!r}" for e, tr, va in self.rows]
        return "\n".join(lines) + "\n"


def train(
    model,
    train_set: Sequence[CellGraph],
    val_set: Sequence[CellGraph],
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 1e-5,
    seed: int = 0,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainLog:
    """Minibatch Adam on the MSE loss.

    Each epoch shuffles with a generator seeded by ``(seed, epoch)``. The
    logged train RMSE is the root of the example-weighted mean minibatch loss
    over the epoch; validation RMSE is a full pass after the epoch. The model
    is left at the final parameters; the best-validation snapshot is kept in
    the log.
    """
    train_set = list(train_set)
    val_set = list(val_set)
    labels_of(train_set)
    labels_of(val_set)
    adam = AdamState(lr=lr)
    log_ = TrainLog()
    params: ParamRegistry = model.params
    params.zero_grad()
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([seed, epoch]).permutation(len(train_set))
        sq_sum = 0.0
        for start in range(0, len(order), batch_size):
            batch = [train_set[i] for i in order[start : start + batch_size]]
            loss = model.loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} in epoch {epoch}")
            sq_sum += value * len(batch)
            ad.backward(loss)
            adam_step(params, adam)
        tr = math.sqrt(sq_sum / len(train_set))
        va = rmse(model, val_set)
        log_.rows.append((epoch, tr, va))
        if va < log_.best_val_rmse:
            log_.best_val_rmse, log_.best_epoch = va, epoch
            log_.best_state = params.state()
        log.debug("epoch %d train_rmse %.5f val_rmse %.5f", epoch, tr, va)
        if on_epoch is not None:
            on_epoch(epoch, tr, va)
    return log_


# ---------------------------------------------------------------- baseline

FEATURES: dict[str, Callable[[CellGraph], np.ndarray]] = {
    "one_hot": one_hot_encode,
    "depth_width": depth_width_features,
}


class BaselineModel:
    """The regressor head alone, fed fixed per-cell feature vectors."""

    def __init__(self, features: str, seed: int = 0):
        if features not in FEATURES:
            raise ValueError(f"unknown feature set {features!r}; choose from {sorted(FEATURES)}")
        self.features = features
        self._featurize = FEATURES[features]
        self._cache: dict[CellGraph, np.ndarray] = {}
        n_in = len(self._featurize(_PROBE))
        self.params = init_from_shapes(mlp_shapes("mlp", n_in), seed)

    def featurize(self, graphs: Sequence[CellGraph]) -> np.ndarray:
        rows = []
        for g in graphs:
            x = self._cache.get(g)
            if x is None:
                x = self._cache[g] = self._featurize(g)
            rows.append(x)
        return np.stack(rows)

    def forward(self, graphs: Sequence[CellGraph]) -> DiffNode:
        return mlp_forward(self.params, "mlp", ad.constant(self.featurize(graphs)))

    def loss(self, graphs: Sequence[CellGraph]) -> DiffNode:
        return mse(self.forward(graphs), labels_of(graphs))

    def predict_many(self, graphs: Sequence[CellGraph], chunk: int = 512) -> np.ndarray:
        if not graphs:
            return np.zeros(0)
        return self.forward(list(graphs)).value[:, 0]


def _probe_graph() -> CellGraph:
    from .graph import validate_graph

    return validate_graph(["input", "output"], [(0, 1)])


_PROBE = _probe_graph()


def train_baseline_mlp(
    features: str,
    train_set: Sequence[CellGraph],
    val_set: Sequence[CellGraph],
    eval_set: Sequence[CellGraph] | None = None,
    epochs: int = 100,
    batch_size: int = 32,
    lr: float = 1e-5,
    seed: int = 0,
) -> tuple[BaselineModel, TrainLog, EvalReport]:
    """Train the 4-layer MLP on ``one_hot`` or ``depth_width`` features.

    The report covers ``eval_set`` (falls back to ``val_set``).
    """
    model = BaselineModel(features, seed=seed)
    log_ = train(model, train_set, val_set, epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    report = evaluate(model, eval_set if eval_set is not None else val_set)
    return model, log_, report
