import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncert.explain import (
    ExplanationError,
    check_explanation,
    gradients,
    integrated_gradients,
    ore_greedy,
)
from nncert.model import Activation, Layer, Network, forward, forward_trace, predicted_label, random_network


def _jacobian(net, x):
    """Product of masked weight matrices at x (independent of the backward pass)."""
    J = np.eye(net.input_dim)
    for layer, pre in zip(net.layers, forward_trace(net, x)):
        J = layer.weight @ J
        if layer.is_relu:
            J = (pre > 0)[:, None] * J
    return J


def _pattern(net, x):
    return tuple(bool(v) for layer, pre in zip(net.layers, forward_trace(net, x)) if layer.is_relu for v in pre > 0)


def segment_ig(net, x, base, target, n=4000):
    """Exact IG: split the path where the activation pattern changes, integrate piecewise."""
    x, base = np.asarray(x, float), np.asarray(base, float)
    point = lambda t: base + t * (x - base)
    ts = np.linspace(0, 1, n + 1)
    cuts = [0.0]
    for a, b in zip(ts, ts[1:]):
        if _pattern(net, point(a + 1e-13)) != _pattern(net, point(b - 1e-13)):
            lo, hi = a, b
            for _ in range(60):
                mid = (lo + hi) / 2
                if _pattern(net, point(mid)) == _pattern(net, point(a + 1e-13)):
                    lo = mid
                else:
                    hi = mid
            cuts.append(hi)
    cuts.append(1.0)
    total = np.zeros_like(x)
    for a, b in zip(cuts, cuts[1:]):
        if b > a:
            total += (b - a) * _jacobian(net, point((a + b) / 2))[target]
    return (x - base) * total


def test_affine_ig():
    net = Network([Layer([[1.0, 2.0]], [0.0], Activation.IDENTITY)])
    att = integrated_gradients(net, [1, 1], target=0)
    assert att.scores == pytest.approx([1, 2])
    a1 = integrated_gradients(net, [0.3, -2.0], [1.0, 1.0], steps=1)
    a2 = integrated_gradients(net, [0.3, -2.0], [1.0, 1.0], steps=1024)
    assert np.array_equal(a1.scores, a2.scores)


def test_ig_zero_path(net):
    att = integrated_gradients(net, [0.4, -0.2], baseline=[0.4, -0.2])
    assert np.array_equal(att.scores, [0.0, 0.0])


def test_ig_running_example_against_segment_oracle(net):
    att = integrated_gradients(net, [1, 0], target=0, steps=2048)
    assert att.scores == pytest.approx(segment_ig(net, [1, 0], [0, 0], 0), abs=1e-3)


def test_ig_completeness_running_example(net):
    for x in ([1, 0], [0.5, 0.5], [1, -1], [-0.3, 0.8]):
        for target in (0, 1):
            att = integrated_gradients(net, x, target=target, steps=4096)
            assert abs(att.completeness_gap(net, x)) <= 1e-6


def test_left_rule_error_bound(net):
    # the left rule samples the kink at the baseline; error is bounded by path length * jump / steps
    att = integrated_gradients(net, [1, 0], target=0, steps=4096, rule="left")
    assert abs(att.completeness_gap(net, [1, 0])) <= 2 * 1.0 * 4.0 / 4096


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ig_random_nets_against_oracle(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [5, 4], 2)
    x, base = rng.normal(size=3), rng.normal(size=3)
    att = integrated_gradients(net, x, base, target=1, steps=4096)
    assert att.scores == pytest.approx(segment_ig(net, x, base, 1), abs=5e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, [6, 5], 2)
    x = rng.normal(size=3)
    h = 1e-6
    # skip points within reach of a kink
    if min(np.abs(pre).min() for layer, pre in zip(net.layers[:-1], forward_trace(net, x))) < 1e-3:
        return
    g = gradients(net, x, 0)[0]
    fd = np.array([(forward(net, x + h * e)[0] - forward(net, x - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert g == pytest.approx(fd, abs=1e-5)


def test_gradient_at_kink_is_zero_subgradient():
    net = Network([Layer([[1.0]], [0.0], Activation.RELU), Layer([[1.0]], [0.0], Activation.IDENTITY)])
    assert gradients(net, [0.0], 0)[0, 0] == 0.0


def test_ig_argument_checks(net):
    with pytest.raises(ExplanationError):
        integrated_gradients(net, [1, 0], steps=0)
    with pytest.raises(ExplanationError):
        integrated_gradients(net, [1, 0], target=2)
    with pytest.raises(ExplanationError):
        integrated_gradients(net, [1, 0, 0])


def test_ore_full_domain_verified(net):
    exp = ore_greedy(net, [0, 0], 1.0, 0)
    assert exp.fixed_features == () and exp.cost == 0 and exp.verified


def test_ore_zero_epsilon(net):
    exp = ore_greedy(net, [0.5, 0.5], 0.0, 0)
    assert exp.cost == 0 and exp.verified


def test_check_explanation_cases(net):
    assert check_explanation(net, [0.5, 0.5], 0.3, 0, [0, 1])
    assert check_explanation(net, [0, 0], 1.0, 0, [])
    assert not check_explanation(net, [0.5, 0.5], 0.6, 0, [], margin=1e-9)


def test_ore_label_mismatch(net):
    with pytest.raises(ExplanationError):
        ore_greedy(net, [0.5, 0.5], 0.1, 1)


def _brute_force_min(net, x, eps, label, margin):
    n = net.input_dim
    for size in range(n + 1):
        for subset in itertools.combinations(range(n), size):
            if check_explanation(net, x, eps, label, subset, margin):
                return size
    return n


@pytest.mark.parametrize("eps", [0.3, 0.95, 1.2])
def test_ore_running_example_matches_brute_force(net, eps):
    x = [0.9, 0.9]
    att = integrated_gradients(net, x, target=0)
    exp = ore_greedy(net, x, eps, 0, att, margin=1e-9)
    assert exp.cost == _brute_force_min(net, x, eps, 0, 1e-9)
    assert check_explanation(net, x, eps, 0, exp.fixed_features, 1e-9)


def test_ore_random_nets_minimal():
    rng = np.random.default_rng(21)
    done = 0
    while done < 8:
        n = int(rng.integers(2, 5))
        net = random_network(rng, n, [int(rng.integers(2, 6))], int(rng.integers(2, 4)))
        x = rng.normal(size=n)
        label = predicted_label(net, x)
        eps = float(rng.uniform(0.1, 1.0))
        exp = ore_greedy(net, x, eps, label, integrated_gradients(net, x, target=label))
        assert exp.verified and check_explanation(net, x, eps, label, exp.fixed_features)
        for i in exp.fixed_features:
            rest = [j for j in exp.fixed_features if j != i]
            assert not check_explanation(net, x, eps, label, rest)
        assert exp.cost >= _brute_force_min(net, x, eps, label, 0.0)
        done += 1


def test_report_schema(net):
    exp = ore_greedy(net, [0, 0], 1.0, 0, integrated_gradients(net, [0, 0]))
    d = exp.to_dict()
    assert set(d) == {"fixed", "epsilon", "cost", "ig", "verified"}
