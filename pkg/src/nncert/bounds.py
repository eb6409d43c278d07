"""Sound forward bound propagation: intervals, zonotopes and CROWN.

All bounds are pre-activation bounds ``zhat_k`` for every layer ``k`` (the last
entry being the network output). Arithmetic is plain float64 with no outward
rounding, so verdicts compare against a small guard band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .model import Network
from .property import InputBox, OutputPolytope

GUARD = 1e-9

AlphaPolicy = Union[str, Sequence[np.ndarray]]  # "zero" | "adaptive" | per-layer arrays


class InfeasibleSplit(Exception):
    """Split constraints contradict the propagated bounds: empty subdomain."""


@dataclass
class NeuronBounds:
    lower: list[np.ndarray]
    upper: list[np.ndarray]

    def layer(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.lower[k], self.upper[k]

    @property
    def output(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower[-1], self.upper[-1]

    def unstable(self, net: Network) -> list[tuple[int, int]]:
        return [
            (k, j)
            for k, j in net.relu_neurons()
            if self.lower[k][j] < 0 < self.upper[k][j]
        ]


@dataclass
class LinearBounds:
    """``lowerA x + lowerC <= f(x) <= upperA x + upperC`` over the analysed box."""

    lowerA: np.ndarray
    lowerC: np.ndarray
    upperA: np.ndarray
    upperC: np.ndarray

    def lower_at(self, x) -> np.ndarray:
        return self.lowerA @ np.asarray(x, dtype=float) + self.lowerC

    def upper_at(self, x) -> np.ndarray:
        return self.upperA @ np.asarray(x, dtype=float) + self.upperC

    def concretize(self, box: InputBox) -> tuple[np.ndarray, np.ndarray]:
        lo = _min_affine(self.lowerA, self.lowerC, box)
        hi = _max_affine(self.upperA, self.upperC, box)
        return lo, hi


@dataclass
class ReluRelaxation:
    """Per-neuron linear bounds ``lo_slope*z <= relu(z) <= up_slope*z + up_int``.

    Stable neurons get exact slopes (1 or 0).
    """

    lo_slope: np.ndarray
    up_slope: np.ndarray
    up_int: np.ndarray

    @classmethod
    def identity(cls, n: int) -> "ReluRelaxation":
        return cls(np.ones(n), np.ones(n), np.zeros(n))


def relu_relaxation(l, u, alpha=None, split=None) -> ReluRelaxation:
    """Linear relaxation of ``relu`` on ``[l, u]``.

    Unstable neurons (``l < 0 < u``) use the chord ``u/(u-l) * (z - l)`` above
    and ``alpha * z`` below; ``split`` entries of +1/-1 force the neuron
    active/inactive.
    """
    l = np.asarray(l, dtype=float)
    u = np.asarray(u, dtype=float)
    n = l.shape[0]
    alpha = np.zeros(n) if alpha is None else np.clip(np.asarray(alpha, dtype=float), 0.0, 1.0)
    split = np.zeros(n, dtype=int) if split is None else np.asarray(split)
    active = ((l >= 0) | (split > 0)) & (split >= 0)
    inactive = ((u <= 0) | (split < 0)) & ~active
    unstable = ~active & ~inactive
    lo_slope = np.where(active, 1.0, 0.0)
    up_slope = np.where(active, 1.0, 0.0)
    up_int = np.zeros(n)
    if np.any(unstable):
        lu, uu = l[unstable], u[unstable]
        slope = uu / (uu - lu)
        up_slope[unstable] = slope
        up_int[unstable] = -slope * lu
        lo_slope[unstable] = alpha[unstable]
    return ReluRelaxation(lo_slope, up_slope, up_int)


def _max_affine(A: np.ndarray, c: np.ndarray, box: InputBox) -> np.ndarray:
    return np.maximum(A, 0) @ box.upper + np.minimum(A, 0) @ box.lower + c


def _min_affine(A: np.ndarray, c: np.ndarray, box: InputBox) -> np.ndarray:
    return np.maximum(A, 0) @ box.lower + np.minimum(A, 0) @ box.upper + c


def _check_box(net: Network, box: InputBox) -> None:
    if box.dim != net.input_dim:
        raise ValueError(f"box has dimension {box.dim}, network expects {net.input_dim}")


# ---------------------------------------------------------------- intervals


def interval_propagate(net: Network, box: InputBox) -> tuple[NeuronBounds, tuple[np.ndarray, np.ndarray]]:
    _check_box(net, box)
    lo, hi = box.lower.copy(), box.upper.copy()
    lowers, uppers = [], []
    for layer in net.layers:
        mid = (lo + hi) / 2
        rad = (hi - lo) / 2
        c = layer.weight @ mid + layer.bias
        r = np.abs(layer.weight) @ rad
        lo, hi = c - r, c + r
        lowers.append(lo)
        uppers.append(hi)
        if layer.is_relu:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    bounds = NeuronBounds(lowers, uppers)
    return bounds, bounds.output


# ---------------------------------------------------------------- zonotopes


@dataclass
class Zonotope:
    """``{center + G e : e in [-1, 1]^m}``, one generator per column of ``G``."""

    center: np.ndarray
    generators: np.ndarray

    @classmethod
    def from_box(cls, box: InputBox) -> "Zonotope":
        return cls(box.center.copy(), np.diag((box.upper - box.lower) / 2))

    def affine(self, W: np.ndarray, b: np.ndarray) -> "Zonotope":
        return Zonotope(W @ self.center + b, W @ self.generators)

    def interval(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r

    def relu(self) -> "Zonotope":
        l, u = self.interval()
        c = self.center.copy()
        G = self.generators.copy()
        dead = u <= 0
        c[dead] = 0.0
        G[dead] = 0.0
        unstable = np.flatnonzero((l < 0) & (u > 0))
        if unstable.size == 0:
            return Zonotope(c, G)
        lam = u[unstable] / (u[unstable] - l[unstable])
        mu = -lam * l[unstable] / 2
        c[unstable] = lam * c[unstable] + mu
        G[unstable] *= lam[:, None]
        fresh = np.zeros((c.shape[0], unstable.size))
        fresh[unstable, np.arange(unstable.size)] = mu
        return Zonotope(c, np.hstack([G, fresh]))

    def contains_point_bounds(self, y) -> bool:
        l, u = self.interval()
        return bool(np.all(y >= l - 1e-7) and np.all(y <= u + 1e-7))


def zonotope_propagate(net: Network, box: InputBox) -> tuple[Zonotope, tuple[np.ndarray, np.ndarray], NeuronBounds]:
    _check_box(net, box)
    z = Zonotope.from_box(box)
    lowers, uppers = [], []
    for layer in net.layers:
        z = z.affine(layer.weight, layer.bias)
        l, u = z.interval()
        lowers.append(l)
        uppers.append(u)
        if layer.is_relu:
            z = z.relu()
    return z, z.interval(), NeuronBounds(lowers, uppers)


# ---------------------------------------------------------------- CROWN


def _alpha_for(policy: AlphaPolicy, k: int, l: np.ndarray, u: np.ndarray) -> np.ndarray:
    if isinstance(policy, str):
        if policy == "zero":
            return np.zeros_like(l)
        if policy == "adaptive":
            return np.where(u >= -l, 1.0, 0.0)
        raise ValueError(f"unknown alpha policy {policy!r}")
    values = policy[k]
    if values is None:
        return np.zeros_like(l)
    return np.clip(np.asarray(values, dtype=float), 0.0, 1.0)


@dataclass
class BackwardResult:
    lowerA: np.ndarray
    lowerC: np.ndarray
    upperA: np.ndarray
    upperC: np.ndarray
    # upper-bound coefficients on each hidden layer's activations, indexed by layer
    upper_lambdas: dict


class CrownAnalysis:
    """Layer-by-layer CROWN pass with full back-substitution for every layer.

    ``splits`` is an optional per-layer list of int arrays (+1 active, -1
    inactive, 0 free); split neurons use exact slopes and their bounds are
    clipped at zero.
    """

    def __init__(
        self,
        net: Network,
        box: InputBox,
        alpha: AlphaPolicy = "zero",
        splits: Sequence[np.ndarray] | None = None,
        ibp_intersect: bool = False,
    ):
        _check_box(net, box)
        self.net = net
        self.box = box
        self.alpha_policy = alpha
        self.splits = splits
        self.relax: list[ReluRelaxation | None] = []
        self.alphas: list[np.ndarray | None] = []
        lowers, uppers = [], []
        ibp_lo, ibp_hi = box.lower, box.upper
        L = net.num_layers
        for k, layer in enumerate(net.layers):
            res = self.backward(k, np.eye(layer.out_dim))
            lo = _min_affine(res.lowerA, res.lowerC, box)
            hi = _max_affine(res.upperA, res.upperC, box)
            if ibp_intersect:
                mid = (ibp_lo + ibp_hi) / 2
                rad = (ibp_hi - ibp_lo) / 2
                c = layer.weight @ mid + layer.bias
                r = np.abs(layer.weight) @ rad
                lo = np.maximum(lo, c - r)
                hi = np.minimum(hi, c + r)
            if k == L - 1:
                self.output_linear = LinearBounds(res.lowerA, res.lowerC, res.upperA, res.upperC)
            if layer.is_relu:
                split = None if splits is None else splits[k]
                if split is not None:
                    if np.any((split > 0) & (hi < 0)) or np.any((split < 0) & (lo > 0)):
                        raise InfeasibleSplit(f"layer {k}")
                    lo = np.where(split > 0, np.maximum(lo, 0.0), lo)
                    hi = np.where(split < 0, np.minimum(hi, 0.0), hi)
                lo = np.minimum(lo, hi)
                a = _alpha_for(alpha, k, lo, hi)
                self.alphas.append(a)
                self.relax.append(relu_relaxation(lo, hi, a, split))
                ibp_lo, ibp_hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
            else:
                self.alphas.append(None)
                self.relax.append(ReluRelaxation.identity(layer.out_dim))
                ibp_lo, ibp_hi = lo, hi
            lowers.append(lo)
            uppers.append(hi)
        self.bounds = NeuronBounds(lowers, uppers)

    def backward(self, k: int, C: np.ndarray) -> BackwardResult:
        """Affine bounds of ``C zhat_k`` in terms of the input."""
        net = self.net
        C = np.atleast_2d(np.asarray(C, dtype=float))
        lam_u = C.copy()
        lam_l = C.copy()
        const_u = np.zeros(C.shape[0])
        const_l = np.zeros(C.shape[0])
        lambdas = {}
        for j in range(k, -1, -1):
            layer = net.layers[j]
            const_u += lam_u @ layer.bias
            const_l += lam_l @ layer.bias
            lam_u = lam_u @ layer.weight
            lam_l = lam_l @ layer.weight
            if j == 0:
                break
            r = self.relax[j - 1]
            lambdas[j - 1] = lam_u.copy()
            pos_u, neg_u = np.maximum(lam_u, 0), np.minimum(lam_u, 0)
            const_u += pos_u @ r.up_int
            lam_u = pos_u * r.up_slope + neg_u * r.lo_slope
            pos_l, neg_l = np.maximum(lam_l, 0), np.minimum(lam_l, 0)
            const_l += neg_l @ r.up_int
            lam_l = pos_l * r.lo_slope + neg_l * r.up_slope
        return BackwardResult(lam_l, const_l, lam_u, const_u, lambdas)

    def bound_objective(self, C: np.ndarray) -> tuple[np.ndarray, np.ndarray, BackwardResult]:
        """Certified lower/upper bounds of ``C f(x)`` over the box."""
        res = self.backward(self.net.num_layers - 1, C)
        lo = _min_affine(res.lowerA, res.lowerC, self.box)
        hi = _max_affine(res.upperA, res.upperC, self.box)
        return lo, hi, res

    @property
    def output_interval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.bounds.output


def crown_propagate(
    net: Network,
    box: InputBox,
    alpha: AlphaPolicy = "zero",
    ibp_intersect: bool = False,
) -> tuple[NeuronBounds, LinearBounds, tuple[np.ndarray, np.ndarray]]:
    ca = CrownAnalysis(net, box, alpha, ibp_intersect=ibp_intersect)
    return ca.bounds, ca.output_linear, ca.output_interval


# ---------------------------------------------------------------- verdicts


@dataclass
class BoundsCheck:
    verified: bool
    row_bounds: np.ndarray  # certified upper bound of a_r . f(x)
    margins: np.ndarray  # b_r - bound

    @property
    def status(self) -> str:
        return "verified" if self.verified else "unknown"


def row_upper_bounds(net: Network, box: InputBox, post: OutputPolytope, method: str = "crown", alpha: AlphaPolicy = "zero") -> np.ndarray:
    post.check_dim(net.output_dim)
    A = post.A
    if A.shape[0] == 0:
        return np.zeros(0)
    if method == "interval":
        _, (lo, hi) = interval_propagate(net, box)
        return np.maximum(A, 0) @ hi + np.minimum(A, 0) @ lo
    if method == "zonotope":
        z, _, _ = zonotope_propagate(net, box)
        return A @ z.center + np.abs(A @ z.generators).sum(axis=1)
    if method == "crown":
        ca = CrownAnalysis(net, box, alpha)
        _, hi, _ = ca.bound_objective(A)
        # the output interval may be tighter per coordinate after IBP intersection
        lo_out, hi_out = ca.output_interval
        return np.minimum(hi, np.maximum(A, 0) @ hi_out + np.minimum(A, 0) @ lo_out)
    raise ValueError(f"unknown bound method {method!r}")


def check_with_bounds(
    net: Network, box: InputBox, post: OutputPolytope, method: str = "crown", alpha: AlphaPolicy = "zero"
) -> BoundsCheck:
    bounds = row_upper_bounds(net, box, post, method, alpha)
    margins = post.b - bounds
    return BoundsCheck(bool(np.all(margins >= -GUARD)), bounds, margins)
