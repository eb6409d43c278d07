import numpy as np
import pytest

from conftest import FIXTURES
from nncert.model import forward, predicted_label, random_network
from nncert.property import (
    InputBox,
    OutputPolytope,
    QuantitativeSpec,
    RobustnessSpec,
    SpecError,
    load_problem,
    robustness_to_polytope,
    satisfies,
)


def test_robustness_to_polytope_running_example():
    box, post = robustness_to_polytope(RobustnessSpec([0, 0], 1.0, 0), 2)
    assert np.array_equal(box.lower, [-1, -1]) and np.array_equal(box.upper, [1, 1])
    assert np.array_equal(post.A, [[-1, 1]]) and np.array_equal(post.b, [0])


def test_zero_radius_box():
    box, _ = robustness_to_polytope(RobustnessSpec([0.3, -0.2], 0.0, 1), 2)
    assert np.array_equal(box.lower, box.upper)


def test_three_class_rows():
    _, post = robustness_to_polytope(RobustnessSpec([0.0], 0.5, 1), 3)
    assert post.A.tolist() == [[1, -1, 0], [0, -1, 1]]
    assert post.b.tolist() == [0, 0]


@pytest.mark.parametrize("y, ok", [((1, -2), True), ((0, 0), True), ((0, 1), False)])
def test_satisfies(ex2_post, y, ok):
    assert satisfies(y, ex2_post) is ok


def test_satisfies_tolerance(ex2_post):
    assert satisfies((0, 5e-10), ex2_post)
    assert not satisfies((0, 2e-9), ex2_post)


def test_satisfies_dimension(ex2_post):
    with pytest.raises(SpecError):
        satisfies((1, 2, 3), ex2_post)


def test_invariants():
    with pytest.raises(SpecError):
        InputBox([1.0], [0.0])
    with pytest.raises(SpecError):
        InputBox([0.0, 0.0], [1.0])
    with pytest.raises(SpecError):
        RobustnessSpec([0.0], -0.1, 0)
    with pytest.raises(SpecError):
        robustness_to_polytope(RobustnessSpec([0.0], 0.1, 3), 2)
    with pytest.raises(SpecError):
        QuantitativeSpec(InputBox([0.0], [1.0]), OutputPolytope([[1.0]], [0.0]), 1.5)
    with pytest.raises(SpecError):
        QuantitativeSpec(InputBox([0.0, 0.0], [1.0, 0.0]), OutputPolytope([[1.0]], [0.0]), 0.5)


def test_box_helpers():
    box = InputBox([0.0, -1.0], [2.0, 1.0])
    assert box.volume() == 4.0
    left, right = box.split(0)
    assert left.upper[0] == 1.0 and right.lower[0] == 1.0
    assert {tuple(c) for c in box.corners()} == {(0, -1), (2, -1), (0, 1), (2, 1)}


def test_load_problem_variants():
    p = load_problem((FIXTURES / "example2_robustness.json").read_text(), 2)
    q = load_problem((FIXTURES / "example2_spec.json").read_text(), 2)
    assert np.array_equal(p.post.A, q.post.A) and np.array_equal(p.box.lower, q.box.lower)
    r = load_problem((FIXTURES / "example5_quantitative.json").read_text(), 2)
    assert r.proportion == 0.9
    with pytest.raises(SpecError):
        load_problem('{"input_box": {"lower": [0]}}', 2)
    with pytest.raises(SpecError):
        load_problem("nope", 2)


def test_negated_row_partitions(ex2_post):
    neg = ex2_post.negate_row(0)
    rng = np.random.default_rng(3)
    for y in rng.normal(size=(500, 2)):
        # strict reading of the negation: exactly one side holds off the boundary
        assert satisfies(y, ex2_post, 0.0) != bool(np.all(neg.A @ y < neg.b))


def test_robust_iff_label_on_tie_free_points():
    rng = np.random.default_rng(11)
    for _ in range(10):
        net = random_network(rng, 2, [6, 6], 3)
        spec = RobustnessSpec(rng.normal(size=2), 0.7, int(rng.integers(0, 3)))
        box, post = robustness_to_polytope(spec, 3)
        for x in box.sample(rng, 300):
            y = forward(net, x)
            top = np.sort(y)[-2:]
            if top[1] - top[0] < 1e-7:
                continue
            assert satisfies(y, post) == (predicted_label(net, x) == spec.label)
