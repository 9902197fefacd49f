import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nasgnn import autodiff as ad
from nasgnn.layers import (
    BadConfig,
    DimensionMismatch,
    EncoderConfig,
    ParamRegistry,
    count_parameters,
    gru_cell,
    gru_shapes,
    init_from_shapes,
    init_params,
    load_checkpoint,
    mlp_forward,
    mlp_shapes,
    save_checkpoint,
    surrogate_shapes,
)


def zero_gru(n_in, n_hidden):
    return ParamRegistry({k: np.zeros(s) for k, s in gru_shapes("g", n_in, n_hidden).items()})


def test_gru_zero_weights_halves_state():
    params = zero_gru(4, 3)
    h = np.array([[0.3, -1.7, 2.0], [5.0, 0.0, -0.25]])
    x = np.random.default_rng(0).standard_normal((2, 4))
    out = gru_cell(params, "g", x, h).value
    np.testing.assert_array_equal(out, 0.5 * h)


def test_gru_saturated_update_gate_keeps_state():
    params = zero_gru(2, 2)
    params["g.b_iz"].value[:] = 50.0
    params["g.b_hz"].value[:] = 50.0
    params["g.W_in"].value[:] = np.eye(2)
    h = np.array([[0.4, -0.9]])
    out = gru_cell(params, "g", np.array([[3.0, -3.0]]), h).value
    np.testing.assert_allclose(out, h, atol=1e-15, rtol=0)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_gru_output_between_candidate_and_state(seed):
    rng = np.random.default_rng(seed)
    params = ParamRegistry({k: rng.uniform(-1, 1, s) for k, s in gru_shapes("g", 3, 2).items()})
    x, h = rng.standard_normal((4, 3)), rng.uniform(-1, 1, (4, 2))
    out = gru_cell(params, "g", x, h).value
    # |h'| can never leave the hull of n (in [-1, 1]) and h
    assert np.all(np.abs(out) <= np.maximum(1.0, np.abs(h)) + 1e-12)


def test_gru_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        gru_cell(zero_gru(4, 3), "g", np.zeros((2, 4)), np.zeros((2, 2)))


def test_mlp_zero_weights_gives_zero():
    params = ParamRegistry({k: np.zeros(s) for k, s in mlp_shapes("mlp", 5).items()})
    out = mlp_forward(params, "mlp", np.ones((3, 5)))
    assert out.shape == (3, 1)
    np.testing.assert_array_equal(out.value, 0.0)


def test_mlp_scalar_chain():
    params = ParamRegistry({k: np.zeros(s) for k, s in mlp_shapes("m", 1, hidden=(1, 1)).items()})
    for i, w in enumerate((2.0, 3.0, -0.5)):
        params[f"m.layer{i}.weight"].value[:] = w
    # positive input survives both ReLUs, negative is cut at the first one
    assert mlp_forward(params, "m", [[1.5]]).item() == 1.5 * 2 * 3 * -0.5
    assert mlp_forward(params, "m", [[-1.0]]).item() == 0.0


def test_surrogate_shape_names():
    shapes = surrogate_shapes(EncoderConfig(8, 4, 2))
    assert len(shapes) == 45
    assert shapes["embedding"] == (5, 8)
    assert shapes["round1.msg_fwd.weight"] == (16, 16)
    assert shapes["round0.update.W_in"] == (8, 16)
    assert shapes["round0.update.W_hz"] == (8, 8)
    assert shapes["aggregate.A1.weight"] == (4, 8)
    assert shapes["aggregate.gate.weight"] == (1, 8)
    assert [shapes[f"mlp.layer{i}.weight"] for i in range(4)] == [(28, 4), (14, 28), (7, 14), (1, 7)]


@pytest.mark.parametrize("cfg", [EncoderConfig(), EncoderConfig(6, 4, 2), EncoderConfig(3, 2, 5)])
def test_count_parameters_matches_registry(cfg):
    shapes = surrogate_shapes(cfg)
    assert count_parameters(cfg) == sum(int(np.prod(s)) for s in shapes.values())


def test_init_is_deterministic_and_seed_sensitive():
    cfg = EncoderConfig(6, 4, 2)
    a, b, c = init_params(cfg, 1), init_params(cfg, 1), init_params(cfg, 2)
    for name in a:
        np.testing.assert_array_equal(a[name].value, b[name].value)
    assert not np.array_equal(a["round0.msg_fwd.weight"].value, c["round0.msg_fwd.weight"].value)


def test_init_biases_zero_and_glorot_bounded():
    reg = init_from_shapes({"w.weight": (30, 10), "w.bias": (30,)}, seed=0)
    assert np.all(reg["w.bias"].value == 0)
    assert np.abs(reg["w.weight"].value).max() <= np.sqrt(6 / 40)


def test_registry_iterates_sorted_and_copies():
    reg = ParamRegistry({"b": np.ones(2), "a": np.zeros(1)})
    assert list(reg) == ["a", "b"]
    dup = reg.copy()
    dup["b"].value[:] = 7
    assert reg["b"].value[0] == 1
    with pytest.raises(KeyError):
        reg.add("a", np.zeros(1))
    with pytest.raises(DimensionMismatch):
        reg.load_state({"a": np.zeros(1), "b": np.zeros(3)})


@pytest.mark.parametrize("bad", [dict(d_n=0), dict(d_g=-1), dict(rounds=0), dict(d_n=2.5), dict(rounds=True)])
def test_bad_config(bad):
    with pytest.raises(BadConfig):
        EncoderConfig(**bad)


def test_checkpoint_round_trip(tmp_path):
    cfg = EncoderConfig(5, 3, 1)
    reg = init_params(cfg, 9)
    reg["mlp.layer0.bias"].value[:] = 1 / 3
    path = tmp_path / "ck.json"
    save_checkpoint(path, reg, cfg)
    back, cfg2 = load_checkpoint(path)
    assert cfg2 == cfg
    for name in reg:
        np.testing.assert_array_equal(back[name].value, reg[name].value)


def test_checkpoint_shape_disagreement(tmp_path):
    cfg = EncoderConfig(5, 3, 1)
    path = tmp_path / "ck.json"
    save_checkpoint(path, init_params(cfg, 0), cfg)
    doc = json.loads(path.read_text())
    doc["header"]["d_n"] = 6
    path.write_text(json.dumps(doc))
    with pytest.raises(DimensionMismatch):
        load_checkpoint(path)
