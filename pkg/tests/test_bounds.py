from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nncert.bounds import (
    CrownAnalysis,
    Zonotope,
    check_with_bounds,
    crown_propagate,
    interval_propagate,
    relu_relaxation,
    zonotope_propagate,
)
from nncert.model import Activation, Layer, Network, forward, forward_batch, random_network
from nncert.property import InputBox, OutputPolytope


def fraction_crown(weights, lo, hi, alpha):
    """Exact-arithmetic CROWN on a bias-free net with ReLU on all but the last layer.

    ``alpha`` gives the lower slope of every unstable neuron. Returns the
    per-layer (lower, upper) lists.
    """
    W = [[[Fraction(v) for v in row] for row in m] for m in weights]
    lo = [Fraction(v) for v in lo]
    hi = [Fraction(v) for v in hi]
    bounds = []

    def lower_of(c, k):
        a, const = list(c), Fraction(0)
        for j in range(k, -1, -1):
            a = [sum(a[i] * W[j][i][col] for i in range(len(a))) for col in range(len(W[j][0]))]
            if j == 0:
                break
            L, U = bounds[j - 1]
            out = []
            for i, ai in enumerate(a):
                l, u = L[i], U[i]
                if u <= 0:
                    out.append(Fraction(0))
                elif l >= 0:
                    out.append(ai)
                elif ai >= 0:
                    out.append(ai * alpha)
                else:
                    out.append(ai * u / (u - l))
                    const += ai * (-u * l / (u - l))
            a = out
        return const + sum(min(ai * lo[i], ai * hi[i]) for i, ai in enumerate(a))

    for k in range(len(W)):
        n = len(W[k])
        L, U = [], []
        for i in range(n):
            e = [Fraction(int(i == r)) for r in range(n)]
            L.append(lower_of(e, k))
            U.append(-lower_of([-v for v in e], k))
        bounds.append((L, U))
    return bounds


RUNNING = [[[1, 1], [1, -1]], [[1, 3], [-1, 2]], [[1, 0], [-2, -1]]]


def test_interval_running_example(net, unit_box):
    nb, (lo, hi) = interval_propagate(net, unit_box)
    assert nb.lower[0] == pytest.approx([-2, -2]) and nb.upper[0] == pytest.approx([2, 2])
    assert nb.lower[1] == pytest.approx([0, -2]) and nb.upper[1] == pytest.approx([8, 4])
    assert lo == pytest.approx([0, -20]) and hi == pytest.approx([8, 0])


def test_interval_point_box(net):
    x = np.array([0.3, -0.7])
    _, (lo, hi) = interval_propagate(net, InputBox(x, x))
    assert lo == pytest.approx(forward(net, x)) and hi == pytest.approx(forward(net, x))


def test_crown_intermediate_bounds_running_example(net, unit_box):
    nb, _, (lo, hi) = crown_propagate(net, unit_box, "zero")
    assert nb.lower[0] == pytest.approx([-2, -2], abs=1e-9)
    assert nb.upper[0] == pytest.approx([2, 2], abs=1e-9)
    assert nb.lower[1] == pytest.approx([0, -2], abs=1e-9)
    assert nb.upper[1] == pytest.approx([7, 4], abs=1e-9)
    assert lo[0] == pytest.approx(0, abs=1e-9) and hi == pytest.approx([7, 0], abs=1e-9)


def test_crown_y2_lower_matches_exact_arithmetic(net, unit_box):
    # regression pin: full back-substitution in exact arithmetic gives -52/3
    ref = fraction_crown(RUNNING, [-1, -1], [1, 1], Fraction(0))
    assert ref[2][0][1] == Fraction(-52, 3)
    _, _, (lo, _) = crown_propagate(net, unit_box, "zero")
    assert lo[1] == pytest.approx(-52 / 3, abs=1e-12)


def test_y2_lower_depends_only_on_z4_lower_bound(net, unit_box):
    # y2 >= -14 + u4 (l4 - 3) / (u4 - l4); -17.4 needs l4 = -8/3, i.e. alpha 5/12 on z2
    for a2 in (0.0, 5 / 12, 1.0):
        ca = CrownAnalysis(net, unit_box, [np.array([0.0, a2]), np.zeros(2), None])
        l4, u4 = ca.bounds.lower[1][1], ca.bounds.upper[1][1]
        assert ca.bounds.lower[2][1] == pytest.approx(-14 + u4 * (l4 - 3) / (u4 - l4), abs=1e-12)
    assert ca.bounds.lower[2][1] == pytest.approx(-158 / 9, abs=1e-12)
    ca = CrownAnalysis(net, unit_box, [np.array([0.0, 5 / 12]), np.zeros(2), None])
    assert ca.bounds.lower[2][1] == pytest.approx(-17.4, abs=1e-12)


@pytest.mark.parametrize("alpha", [Fraction(0), Fraction(1), Fraction(1, 2)])
def test_crown_matches_fraction_oracle(net, unit_box, alpha):
    ref = fraction_crown(RUNNING, [-1, -1], [1, 1], alpha)
    policy = [np.full(2, float(alpha)), np.full(2, float(alpha)), None]
    nb = CrownAnalysis(net, unit_box, policy).bounds
    for k in range(3):
        assert nb.lower[k] == pytest.approx([float(v) for v in ref[k][0]], abs=1e-12)
        assert nb.upper[k] == pytest.approx([float(v) for v in ref[k][1]], abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_crown_matches_fraction_oracle_random(seed):
    rng = np.random.default_rng(seed)
    dims = [2, int(rng.integers(2, 5)), int(rng.integers(2, 5)), 2]
    weights = [rng.integers(-3, 4, size=(dims[i + 1], dims[i])).tolist() for i in range(3)]
    net = Network(
        [Layer(weights[i], np.zeros(dims[i + 1]), Activation.RELU if i < 2 else Activation.IDENTITY) for i in range(3)]
    )
    box = InputBox([-1, -0.5], [0.5, 1])
    ref = fraction_crown(weights, [-1, -0.5], [0.5, 1], Fraction(0))
    nb = CrownAnalysis(net, box, "zero").bounds
    for k in range(3):
        assert nb.lower[k] == pytest.approx([float(v) for v in ref[k][0]], abs=1e-9)
        assert nb.upper[k] == pytest.approx([float(v) for v in ref[k][1]], abs=1e-9)


def test_affine_network_exact():
    net = Network([Layer([[1.0, -2.0], [0.5, 3.0]], [1.0, -1.0], Activation.IDENTITY)])
    box = InputBox([-1, 0], [2, 1])
    _, lin, _ = crown_propagate(net, box)
    assert np.allclose(lin.lowerA, lin.upperA) and np.allclose(lin.lowerA, net.layers[0].weight)
    assert np.allclose(lin.lowerC, net.layers[0].bias) and np.allclose(lin.upperC, lin.lowerC)


def test_zonotope_affine_step(unit_box):
    z = Zonotope.from_box(unit_box)
    assert np.allclose(z.center, 0) and np.allclose(z.generators, np.eye(2))
    z1 = z.affine(np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros(2))
    assert np.allclose(z1.generators, [[1, 1], [1, -1]])
    lo, hi = z1.interval()
    assert lo == pytest.approx([-2, -2]) and hi == pytest.approx([2, 2])


def test_zonotope_stable_region_is_exact(net):
    # x2 > x1 throughout, so every neuron keeps one phase
    box = InputBox([0.1, 0.3], [0.2, 0.4])
    assert interval_propagate(net, box)[0].unstable(net) == []
    z, (lo, hi), _ = zonotope_propagate(net, box)
    # all neurons stable: the output zonotope is the exact affine image of the box
    xs = box.corners()
    ys = forward_batch(net, xs)
    assert lo == pytest.approx(ys.min(axis=0), abs=1e-12) and hi == pytest.approx(ys.max(axis=0), abs=1e-12)
    assert z.generators.shape[1] == 2


def test_check_with_bounds_running_example(net, unit_box, ex2_post):
    assert check_with_bounds(net, unit_box, ex2_post, "crown").verified
    chk = check_with_bounds(net, unit_box, ex2_post, "interval")
    assert chk.verified and chk.row_bounds[0] == pytest.approx(0.0)
    unknown = check_with_bounds(net, unit_box, OutputPolytope([[1.0, 0.0]], [-1.0]), "crown")
    assert not unknown.verified and unknown.status == "unknown"
    assert unknown.margins[0] < 0


def test_dominance_running_example(net, unit_box):
    _, (ilo, ihi) = interval_propagate(net, unit_box)
    _, _, (clo, chi) = crown_propagate(net, unit_box)
    assert (chi - clo)[0] == pytest.approx(7) and (ihi - ilo)[0] == pytest.approx(8)
    assert (chi - clo)[1] < (ihi - ilo)[1] == pytest.approx(20)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    net = random_network(rng, int(rng.integers(1, 5)), [int(rng.integers(1, 9)) for _ in range(depth)], int(rng.integers(1, 4)))
    c = rng.normal(size=net.input_dim)
    r = rng.uniform(0.05, 1.0, net.input_dim)
    return rng, net, InputBox(c - r, c + r)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_soundness_all_methods(seed):
    rng, net, box = _random_case(seed)
    xs = box.sample(rng, 1000)
    ys = forward_batch(net, xs)
    _, (ilo, ihi) = interval_propagate(net, box)
    _, (zlo, zhi), _ = zonotope_propagate(net, box)
    _, lin, (clo, chi) = crown_propagate(net, box)
    for lo, hi in ((ilo, ihi), (zlo, zhi), (clo, chi)):
        assert np.all(ys >= lo - 1e-7) and np.all(ys <= hi + 1e-7)
    assert np.all(xs @ lin.lowerA.T + lin.lowerC <= ys + 1e-7)
    assert np.all(xs @ lin.upperA.T + lin.upperC >= ys - 1e-7)
    # dominance over interval propagation
    assert np.all(clo >= ilo - 1e-7) and np.all(chi <= ihi + 1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.9))
def test_monotone_in_box(seed, shrink):
    rng, net, box = _random_case(seed)
    inner = InputBox(box.lower + shrink * box.widths / 2, box.upper - shrink * box.widths / 2)
    for method in ("interval", "zonotope", "crown"):
        lo, hi = _interval(method, net, box)
        ilo, ihi = _interval(method, net, inner)
        if method == "zonotope":
            # the minimal-area transformer is not monotone in general; only soundness is required
            continue
        assert np.all(ilo >= lo - 1e-9) and np.all(ihi <= hi + 1e-9)


def _interval(method, net, box):
    if method == "interval":
        return interval_propagate(net, box)[1]
    if method == "zonotope":
        return zonotope_propagate(net, box)[1]
    return crown_propagate(net, box)[2]


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, -1e-3), st.floats(1e-3, 10), st.floats(0, 1), st.integers(0, 2**31 - 1))
def test_relaxation_validity(l, u, alpha, seed):
    r = relu_relaxation(np.array([l]), np.array([u]), np.array([alpha]))
    z = np.random.default_rng(seed).uniform(l, u, 1000)
    relu = np.maximum(z, 0)
    assert np.all(r.lo_slope[0] * z <= relu + 1e-12)
    assert np.all(relu <= r.up_slope[0] * z + r.up_int[0] + 1e-9)
    assert r.up_slope[0] == pytest.approx(u / (u - l))
    assert r.up_int[0] == pytest.approx(-u * l / (u - l))


def test_split_constraints_fold_in(net, unit_box):
    splits = [np.array([1, 0]), np.array([0, 0]), None]
    ca = CrownAnalysis(net, unit_box, "zero", splits)
    assert ca.bounds.lower[0][0] == 0.0
    assert ca.relax[0].lo_slope[0] == 1.0 and ca.relax[0].up_slope[0] == 1.0
