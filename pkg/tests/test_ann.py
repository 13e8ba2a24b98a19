import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qsnn.ann import (LayerSpec, NetworkDescription, ann_forward, deep_preset, layer_activations,
                      load_weights, save_weights, shallow_preset)
from qsnn.errors import DimensionError, ParseError, ValidationError

from oracles import mlp_loops


def small_net(rng, sizes=(12, 7, 3), bias=True):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = rng.normal(size=(n_out, n_in)).astype(np.float32)
        b = rng.normal(size=n_out).astype(np.float32) if bias else np.zeros(n_out, np.float32)
        layers.append(LayerSpec("dense", w, b, activation="identity" if i == len(sizes) - 2 else "relu"))
    return NetworkDescription(tuple(layers), (sizes[0],), sizes[-1])


def test_zero_observation_zero_bias_gives_zero_q():
    net = shallow_preset(seed=3, hidden=50)
    q = ann_forward(net, np.zeros((80, 80), np.float32))
    assert q.shape == (4,) and not q.any()


def test_forward_matches_loop_oracle(rng):
    for _ in range(20):
        net = small_net(rng)
        x = rng.normal(size=12).astype(np.float32)
        want = mlp_loops(x, [(l.weights, l.bias, l.activation == "relu") for l in net.layers])
        np.testing.assert_allclose(ann_forward(net, x), want, rtol=1e-5, atol=1e-5)


def test_shallow_forward_matches_oracle(rng):
    net = shallow_preset(seed=1, hidden=40)
    x = (rng.random((80, 80)) < 0.01).astype(np.float32)
    want = mlp_loops(x, [(l.weights, l.bias, l.activation == "relu") for l in net.layers])
    np.testing.assert_allclose(ann_forward(net, x), want, rtol=1e-5, atol=1e-5)


def test_hand_built_hidden_slice():
    # hidden unit j copies pixel j, output 0 sums the first three pixels
    w1 = np.zeros((3, 6400), np.float32)
    w1[np.arange(3), np.arange(3)] = 1
    w2 = np.zeros((4, 3), np.float32)
    w2[0] = 1
    net = NetworkDescription((LayerSpec("dense", w1, np.zeros(3)), LayerSpec("dense", w2, np.zeros(4), activation="identity")),
                             (80, 80), 4)
    x = np.zeros((80, 80), np.float32)
    x[0, :3] = [0.25, 0.5, 1.0]
    np.testing.assert_allclose(ann_forward(net, x), [1.75, 0, 0, 0])


def test_layer_activations_match_single_forward(rng):
    net = small_net(rng)
    xs = rng.normal(size=(5, 12)).astype(np.float32)
    outs = layer_activations(net, xs)
    assert [o.shape for o in outs] == [(5, 7), (5, 3)]
    for x, q in zip(xs, outs[-1]):
        np.testing.assert_allclose(ann_forward(net, x), q, rtol=1e-6)
    assert (outs[0] >= 0).all()


def test_shape_mismatch_is_dimension_error():
    with pytest.raises(DimensionError):
        ann_forward(shallow_preset(hidden=8), np.zeros((84, 84)))


def test_composition_checked():
    w = np.zeros((5, 10), np.float32)
    bad = np.zeros((4, 6), np.float32)
    with pytest.raises(DimensionError):
        NetworkDescription((LayerSpec("dense", w, np.zeros(5)), LayerSpec("dense", bad, np.zeros(4), activation="identity")),
                           (10,), 4)


def test_output_layer_must_be_identity():
    w = np.zeros((4, 10), np.float32)
    with pytest.raises(ValidationError):
        NetworkDescription((LayerSpec("dense", w, np.zeros(4)),), (10,), 4)


def test_presets_have_documented_shapes():
    assert shallow_preset().layer_shapes() == [(1000,), (4,)]
    assert deep_preset().layer_shapes() == [(32, 20, 20), (64, 9, 9), (64, 7, 7), (512,), (4,)]


def test_deep_forward_runs(rng):
    net = deep_preset(seed=2)
    q = ann_forward(net, rng.random((4, 84, 84)).astype(np.float32))
    assert q.shape == (4,) and np.isfinite(q).all()


def test_forward_is_deterministic(rng):
    net = shallow_preset(seed=5, hidden=30)
    x = rng.random((80, 80)).astype(np.float32)
    assert ann_forward(net, x).tobytes() == ann_forward(net, x).tobytes()


def test_round_trip_is_bit_exact(tmp_path, rng):
    net = shallow_preset(seed=7, hidden=64)
    layers = [LayerSpec(l.kind, l.weights, rng.normal(size=l.n_out), l.stride, l.activation) for l in net.layers]
    net = net.with_layers(layers)
    path = tmp_path / "w.json"
    save_weights(net, path)
    assert load_weights(path) == net


def test_deep_round_trip(tmp_path):
    net = deep_preset(seed=1)
    save_weights(net, tmp_path / "d.json")
    back = load_weights(tmp_path / "d.json")
    assert back == net and back.layers[1].stride == 2


def test_truncated_file_is_parse_error(tmp_path):
    path = tmp_path / "w.json"
    save_weights(shallow_preset(hidden=8), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ParseError) as info:
        load_weights(path)
    assert info.value.offset is not None and "offset" in str(info.value)


def test_wrong_weight_count_names_layer(tmp_path):
    path = tmp_path / "w.json"
    save_weights(shallow_preset(hidden=8), path)
    doc = json.loads(path.read_text())
    doc["layers"][1]["shape"] = [4, 9]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="layer 1"):
        load_weights(path)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_final_layer_scaling_preserves_argmax(seed, c):
    rng = np.random.default_rng(seed)
    net = small_net(rng)
    x = rng.normal(size=12).astype(np.float32)
    scaled = net.with_layers(net.layers[:-1] + (net.layers[-1].scaled(c),))
    q, qs = ann_forward(net, x), ann_forward(scaled, x)
    # exact ties after float rounding are the only way argmax could move
    if np.sort(q)[-1] - np.sort(q)[-2] > 1e-5 * max(1.0, abs(q).max()):
        assert np.argmax(q) == np.argmax(qs)
