import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FIXTURES
from nncert.model import (
    Activation,
    Layer,
    ModelError,
    Network,
    activation_pattern,
    dump_network,
    forward,
    forward_batch,
    forward_trace,
    load_network,
    predicted_label,
    random_network,
)


def test_load_running_example():
    net = load_network((FIXTURES / "example1_model.json").read_bytes())
    assert net.num_layers == 3
    assert net.input_dim == net.output_dim == 2
    assert [l.activation for l in net.layers] == [Activation.RELU, Activation.RELU, Activation.IDENTITY]


def test_load_from_stream():
    net = load_network(io.StringIO((FIXTURES / "example1_model.json").read_text()))
    assert net.hidden_sizes == [2, 2]


def test_single_identity_layer():
    net = load_network(json.dumps({"input_dim": 1, "layers": [{"weights": [[1]], "bias": [0], "activation": "identity"}]}))
    assert forward(net, [3.5]) == pytest.approx([3.5])


def test_dimension_mismatch_names_layer():
    doc = {
        "input_dim": 2,
        "layers": [
            {"weights": [[1, 0], [0, 1], [1, 1]], "bias": [0, 0, 0], "activation": "relu"},
            {"weights": [[1, 1]], "bias": [0], "activation": "identity"},
        ],
    }
    with pytest.raises(ModelError) as err:
        load_network(json.dumps(doc))
    assert err.value.layer == 1


@pytest.mark.parametrize(
    "layer, bad",
    [
        ({"weights": [[1, float("nan")]], "bias": [0], "activation": "identity"}, "finite"),
        ({"weights": [[1, 1]], "bias": [0], "activation": "sigmoid"}, "activation"),
        ({"weights": [[1, 1]], "bias": [0, 0], "activation": "identity"}, "bias"),
    ],
)
def test_validation_errors(layer, bad):
    with pytest.raises(ModelError) as err:
        load_network(json.dumps({"layers": [layer]}).replace("NaN", "NaN"))
    assert err.value.layer == 0


def test_malformed_json():
    with pytest.raises(ModelError):
        load_network("{not json")


def test_last_layer_must_be_identity():
    with pytest.raises(ModelError):
        Network([Layer([[1.0]], [0.0], Activation.RELU)])


def test_empty_network_rejected():
    with pytest.raises(ModelError):
        Network([])


@pytest.mark.parametrize("x, y", [((0, 0), (0, 0)), ((0.5, 0.5), (1, -2)), ((1, -1), (6, -16))])
def test_forward_hand_values(net, x, y):
    assert forward(net, x) == pytest.approx(y, abs=1e-12)


def test_forward_wrong_dimension(net):
    with pytest.raises(ModelError):
        forward(net, [1.0, 2.0, 3.0])


def test_predicted_label(net):
    assert predicted_label(net, [0.5, 0.5]) == 0
    # f(-1, 0) = (0, 0): tie goes to the lowest index
    assert forward(net, [-1, 0]) == pytest.approx([0, 0])
    assert predicted_label(net, [-1, 0]) == 0


def test_single_output_label():
    net = Network([Layer([[2.0, -1.0]], [0.3], Activation.IDENTITY)])
    assert predicted_label(net, [5.0, -4.0]) == 0


def test_trace_and_pattern(net):
    trace = forward_trace(net, [0.5, 0.5])
    assert trace[0] == pytest.approx([1.0, 0.0])
    assert activation_pattern(net, [0.5, 0.5]) == ((True, False), (True, False))


def test_layers_are_read_only(net):
    with pytest.raises(ValueError):
        net.layers[0].weight[0, 0] = 7.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_round_trip_bit_identical(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [4, 5], 2)
    again = load_network(dump_network(net))
    for a, b in zip(net.layers, again.layers):
        assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
        assert a.activation == b.activation


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_relu_outputs_nonnegative_and_batch_matches(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [6, 4], 3)
    xs = rng.normal(size=(20, 3))
    for x, y in zip(xs, forward_batch(net, xs)):
        trace = forward_trace(net, x)
        for layer, pre in zip(net.layers[:-1], trace[:-1]):
            assert np.all(np.maximum(pre, 0) >= 0)
        assert forward(net, x) == pytest.approx(y, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 1))
def test_linear_within_one_pattern(seed, t):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 2, [5, 5], 2)
    x1 = rng.normal(size=2)
    # a nearby point very likely shares the pattern; skip when it does not
    x2 = x1 + 1e-4 * rng.normal(size=2)
    xt = t * x1 + (1 - t) * x2
    pats = {activation_pattern(net, p) for p in (x1, x2, xt)}
    if len(pats) != 1:
        return
    expect = t * forward(net, x1) + (1 - t) * forward(net, x2)
    assert np.allclose(forward(net, xt), expect, atol=1e-9)
