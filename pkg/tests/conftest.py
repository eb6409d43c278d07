from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from nncert.bounds import CrownAnalysis
from nncert.model import example_network, random_network
from nncert.property import InputBox, OutputPolytope

FIXTURES = Path(str(resources.files("nncert") / "fixtures"))


@pytest.fixture
def net():
    return example_network()


@pytest.fixture
def unit_box():
    return InputBox([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture
def ex2_post():
    # y1 >= y2
    return OutputPolytope([[-1.0, 1.0]], [0.0])


def random_problem(rng: np.random.Generator, max_unstable: int = 12, input_dim=None, max_depth: int = 3):
    """Random net (<= 4 layers, <= 8 neurons per layer), box and 1-row post.

    The post threshold is drawn near the sampled maximum so that both
    verdicts occur.
    """
    while True:
        n = input_dim or int(rng.integers(1, 4))
        depth = int(rng.integers(1, max_depth + 1))
        hidden = [int(rng.integers(2, 9)) for _ in range(depth)]
        net = random_network(rng, n, hidden, int(rng.integers(1, 4)))
        c = rng.uniform(-1, 1, n)
        r = rng.uniform(0.1, 1.0, n)
        box = InputBox(c - r, c + r)
        if len(CrownAnalysis(net, box).bounds.unstable(net)) > max_unstable:
            continue
        a = rng.normal(size=net.output_dim)
        from nncert.model import forward_batch

        ys = forward_batch(net, box.sample(rng, 2000)) @ a
        b = float(np.quantile(ys, rng.choice([0.9, 1.0]))) + float(rng.uniform(-0.05, 0.3))
        return net, box, OutputPolytope([a], [b])
