import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasgnn import EncoderConfig, SurrogateModel
from nasgnn.graph import validate_graph
from nasgnn.layers import ParamRegistry
from nasgnn.training import (
    AdamState,
    EmptyPartition,
    EvalReport,
    NonFiniteGradient,
    RandomSplit,
    ZeroShotSplit,
    adam_step,
    bin_edges,
    bin_index,
    evaluate,
    report_from_predictions,
    rmse,
    split,
    train,
    train_baseline_mlp,
)

CFG = EncoderConfig(d_n=6, d_g=4, rounds=1)


def test_random_split_sizes():
    data = list(range(10))
    train_, test, val = split(data, RandomSplit(seed=0))
    assert (len(train_), len(test), len(val)) == (7, 2, 1)
    assert sorted(train_ + test + val) == data


@given(st.integers(3, 400), st.integers(0, 50))
@settings(max_examples=30, deadline=None)
def test_random_split_partitions(n, seed):
    data = list(range(n))
    try:
        parts = split(data, RandomSplit(seed=seed))
    except EmptyPartition:
        assert math.floor(0.2 * n) == 0 or n - math.floor(0.7 * n) - math.floor(0.2 * n) == 0
        return
    assert sorted(sum(parts, [])) == data
    assert len(parts[0]) == math.floor(0.7 * n)


def test_split_deterministic(small_dataset):
    a = split(small_dataset, RandomSplit(seed=5))
    b = split(small_dataset, RandomSplit(seed=5))
    assert a == b


def test_zero_shot_split(small_dataset):
    train_, test, val = split(small_dataset, ZeroShotSplit({2, 3, 4, 5, 7}, 6, seed=1))
    assert {g.num_nodes for g in test} == {6}
    assert 6 not in {g.num_nodes for g in train_ + val}
    assert len(test) == sum(g.num_nodes == 6 for g in small_dataset)
    assert len(train_) + len(val) == sum(g.num_nodes != 6 for g in small_dataset)


def test_zero_shot_rejects_overlap_and_empty(small_dataset):
    with pytest.raises(ValueError):
        ZeroShotSplit({5, 6}, 6)
    small = [g for g in small_dataset if g.num_nodes != 6]
    with pytest.raises(EmptyPartition):
        split(small, ZeroShotSplit({5}, 6))
    with pytest.raises(EmptyPartition):
        split([], RandomSplit())


def test_adam_first_step_moves_by_lr():
    params = ParamRegistry({"w": np.array([1.0, -2.0, 3.0])})
    params["w"].grad[:] = [0.5, -4.0, 1e-3]
    adam_step(params, AdamState(lr=1e-3))
    # bias-corrected first step is lr * g / (|g| + eps)
    np.testing.assert_allclose(params["w"].value, [1 - 1e-3, -2 + 1e-3, 3 - 1e-3], rtol=0, atol=1e-8)
    np.testing.assert_array_equal(params["w"].grad, 0.0)


def test_adam_zero_gradient_is_noop():
    params = ParamRegistry({"w": np.array([[1.0, 2.0]]), "b": np.array([3.0])})
    before = params.state()
    state = AdamState(lr=0.1)
    for _ in range(3):
        adam_step(params, state)
    for name in params:
        np.testing.assert_array_equal(params[name].value, before[name])


def test_adam_zero_lr_is_noop():
    params = ParamRegistry({"w": np.array([1.0, 2.0])})
    params["w"].grad[:] = [3.0, -1.0]
    adam_step(params, AdamState(lr=0.0))
    np.testing.assert_array_equal(params["w"].value, [1.0, 2.0])


def test_adam_rejects_nan_gradient_before_touching_params():
    params = ParamRegistry({"a": np.array([1.0]), "b": np.array([1.0])})
    params["a"].grad[:] = 1.0
    params["b"].grad[:] = np.nan
    with pytest.raises(NonFiniteGradient):
        adam_step(params, AdamState(lr=0.1))
    assert params["a"].value[0] == 1.0


def test_bin_edges_and_index():
    edges = bin_edges()
    assert len(edges) == 9 and edges[0][0] == 0 and edges[-1][1] == 1
    assert bin_index(0.0) == 0
    assert bin_index(1.0) == 8
    assert bin_index(1 / 9) == 1
    assert bin_index(2 / 9) == 2
    assert bin_index(0.95) == 8


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
def test_bins_partition_examples(labels):
    labels = np.array(labels)
    report = report_from_predictions(labels + 0.01, labels)
    assert sum(b.count for b in report.bins) == len(labels)
    for b in report.bins:
        assert (b.mse_mean is None) == (b.count == 0)


def test_evaluate_single_example():
    g = validate_graph(["input", "output"], [(0, 1)], val_acc=0.90)

    class Fixed:
        def predict_many(self, graphs, chunk=512):
            return np.full(len(graphs), 0.95)

    report = evaluate(Fixed(), [g])
    assert report.rmse == pytest.approx(0.05, abs=1e-12)
    assert report.n_examples == 1
    assert [b.count for b in report.bins] == [0] * 8 + [1]
    assert report.bins[8].mse_var == 0.0


def test_report_serialization_round_trip():
    report = report_from_predictions(np.array([0.1, 0.5, 0.52]), np.array([0.15, 0.5, 0.5]))
    doc = json.loads(report.to_json())
    assert EvalReport.from_dict(doc) == report
    lines = report.bins_csv().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count,mse_mean,mse_var"
    assert len(lines) == 10
    assert lines[3].endswith(",0,,")  # bin 2 is empty


def test_train_zero_epochs_leaves_params(small_dataset):
    model = SurrogateModel.create(CFG, seed=0)
    before = model.params.state()
    tr, _, va = split(small_dataset, RandomSplit(seed=0))
    log = train(model, tr, va, epochs=0)
    assert log.rows == [] and log.best_state is None
    for name, value in before.items():
        np.testing.assert_array_equal(model.params[name].value, value)


def test_train_is_deterministic(small_dataset):
    tr, _, va = split(small_dataset, RandomSplit(seed=0))
    logs = []
    for _ in range(2):
        model = SurrogateModel.create(CFG, seed=0)
        logs.append(train(model, tr, va, epochs=3, batch_size=8, lr=1e-3, seed=4).to_csv())
    assert logs[0] == logs[1]
    assert logs[0].splitlines()[0] == "epoch,train_rmse,val_rmse"
    assert len(logs[0].splitlines()) == 4


def test_train_reduces_loss(small_dataset):
    tr, _, va = split(small_dataset, RandomSplit(seed=0))
    model = SurrogateModel.create(CFG, seed=0)
    log = train(model, tr, va, epochs=15, batch_size=8, lr=3e-3, seed=0)
    assert log.rows[-1][1] < log.rows[0][1]
    assert log.best_epoch is not None
    assert log.best_val_rmse == min(r[2] for r in log.rows)


def test_baseline_fits_constant_labels(small_dataset):
    graphs = [g.with_labels(0.8) for g in small_dataset]
    tr, _, va = split(graphs, RandomSplit(seed=0))
    model, _, _ = train_baseline_mlp("one_hot", tr, va, epochs=200, batch_size=32, lr=1e-3, seed=0)
    assert rmse(model, tr) < 0.01


def test_baseline_rejects_unknown_features(small_dataset):
    with pytest.raises(ValueError):
        train_baseline_mlp("adjacency", list(small_dataset), list(small_dataset), epochs=1)
