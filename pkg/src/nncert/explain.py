"""Integrated gradients and verifier-backed robust explanations."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .complete import Budget, Status, verify_complete
from .model import Network, forward, predicted_label
from .property import InputBox, margin_polytope

DEFAULT_IG_STEPS = 512


class ExplanationError(ValueError):
    pass


@dataclass(frozen=True)
class Attribution:
    scores: np.ndarray
    baseline: np.ndarray
    steps: int
    target: int = 0
    rule: str = "midpoint"

    def completeness_gap(self, net: Network, x) -> float:
        """``sum(IG) - (f_t(x) - f_t(baseline))``."""
        fx = forward(net, x)[self.target]
        fb = forward(net, self.baseline)[self.target]
        return float(self.scores.sum() - (fx - fb))


def gradients(net: Network, xs: np.ndarray, target: int) -> np.ndarray:
    """Gradient of output ``target`` at each row of ``xs``.

    Each ReLU is differentiated through the activation pattern at the point;
    the derivative at exactly zero pre-activation is taken as 0.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if not 0 <= target < net.output_dim:
        raise ExplanationError(f"target {target} out of range for {net.output_dim} outputs")
    masks = []
    h = xs
    for layer in net.layers:
        pre = h @ layer.weight.T + layer.bias
        if layer.is_relu:
            m = (pre > 0).astype(float)
            masks.append(m)
            h = pre * m
        else:
            masks.append(None)
            h = pre
    g = np.zeros((xs.shape[0], net.output_dim))
    g[:, target] = 1.0
    for layer, m in zip(reversed(net.layers), reversed(masks)):
        if m is not None:
            g = g * m
        g = g @ layer.weight
    return g


def integrated_gradients(
    net: Network,
    x,
    baseline=None,
    target: int = 0,
    steps: int = DEFAULT_IG_STEPS,
    rule: str = "midpoint",
) -> Attribution:
    """Riemann approximation of the path integral of gradients from the baseline.

    ``rule`` picks the sample point in each of the ``steps`` sub-intervals:
    "midpoint" (default) or "left".
    """
    if steps < 1:
        raise ExplanationError("steps must be at least 1")
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ExplanationError(f"input has shape {x.shape}, network expects ({net.input_dim},)")
    base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=float)
    if base.shape != x.shape:
        raise ExplanationError("baseline and input differ in shape")
    if rule == "midpoint":
        ts = (np.arange(steps) + 0.5) / steps
    elif rule == "left":
        ts = np.arange(steps) / steps
    else:
        raise ExplanationError(f"unknown rule {rule!r}")
    path = base + ts[:, None] * (x - base)
    mean_grad = gradients(net, path, target).mean(axis=0)
    return Attribution((x - base) * mean_grad, base, steps, target, rule)


# ---------------------------------------------------------------- robust explanations


@dataclass(frozen=True)
class RobustExplanation:
    fixed_features: tuple[int, ...]
    free_box: InputBox
    cost: int
    verified: bool
    epsilon: float = 0.0
    ig: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "fixed": list(self.fixed_features),
            "epsilon": self.epsilon,
            "cost": self.cost,
            "ig": None if self.ig is None else self.ig.tolist(),
            "verified": self.verified,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def perturbation_box(x, epsilon: float, fixed: Sequence[int]) -> InputBox:
    """Box that pins ``fixed`` features to ``x`` and widens the rest by ``epsilon``."""
    x = np.asarray(x, dtype=float)
    r = np.full_like(x, float(epsilon))
    r[list(fixed)] = 0.0
    return InputBox(x - r, x + r)


def check_explanation(
    net: Network,
    x,
    epsilon: float,
    label: int,
    fixed: Sequence[int],
    margin: float = 0.0,
    budget: Budget | None = None,
) -> bool:
    """True iff the verifier proves ``y_label - y_j >= margin`` for all j over the box.

    Budget exhaustion answers False. With a positive margin, outputs landing
    exactly on the margin count as violations.
    """
    if epsilon < 0:
        raise ExplanationError("epsilon must be non-negative")
    box = perturbation_box(x, epsilon, fixed)
    post = margin_polytope(net.output_dim, label, margin)
    if margin > 0:
        v = verify_complete(net, box, post, budget, margin=0.0, guard=0.0)
    else:
        v = verify_complete(net, box, post, budget)
    return v.status is Status.VERIFIED


def ore_greedy(
    net: Network,
    x,
    epsilon: float,
    label: int,
    ranking: Attribution | Sequence[float] | None = None,
    margin: float = 0.0,
    budget: Budget | None = None,
) -> RobustExplanation:
    """Greedy robust explanation of cardinality cost.

    Starting from all features fixed, features are freed in ascending
    ``|score|`` (index order when no ranking is given) whenever the verifier
    still proves the label. A final pass retries every remaining fixed feature.
    """
    x = np.asarray(x, dtype=float)
    if predicted_label(net, x) != label:
        raise ExplanationError(f"network predicts {predicted_label(net, x)} at x, not label {label}")
    n = net.input_dim
    if ranking is None:
        scores = np.zeros(n)
    elif isinstance(ranking, Attribution):
        scores = ranking.scores
    else:
        scores = np.asarray(ranking, dtype=float)
    if scores.shape != (n,):
        raise ExplanationError("ranking length differs from input dimension")
    order = [int(i) for i in np.argsort(np.abs(scores), kind="stable")]

    def ok(fixed: set[int]) -> bool:
        return check_explanation(net, x, epsilon, label, sorted(fixed), margin, budget)

    fixed = set(range(n))
    for i in order:
        if ok(fixed - {i}):
            fixed.discard(i)
    changed = True
    while changed:
        changed = False
        for i in sorted(fixed, key=order.index):
            if ok(fixed - {i}):
                fixed.discard(i)
                changed = True
    verified = ok(fixed)
    ig = ranking.scores if isinstance(ranking, Attribution) else None
    return RobustExplanation(
        tuple(sorted(fixed)), perturbation_box(x, epsilon, sorted(fixed)), len(fixed), verified, float(epsilon), ig
    )
