"""Backward analysis: exact preimages, linear regions, and certified
under-approximations for quantitative verification."""

from __future__ import annotations

import heapq
import itertools
import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .bounds import AlphaPolicy, CrownAnalysis
from .complete import DEFAULT_PATTERN_CAP, LinearRegion, enumerate_patterns
from .geometry import (
    EXACT_2D,
    HalfspacePolytope,
    MonteCarlo,
    is_feasible,
    mc_confidence_margin,
    volume,
    volume_of_union,
)
from .model import Network
from .property import InputBox, OutputPolytope, QuantitativeSpec

DEFAULT_PREIMAGE_CAP = 4096


class PreimageCapExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------- exact


@dataclass
class TaggedPolytope:
    polytope: HalfspacePolytope
    pattern: str  # e.g. "10|11": layer-1 then layer-2 phases, 1 = active


@dataclass
class PreimageExact:
    polytopes: list[TaggedPolytope]
    # polytopes over each hidden layer's post-activation space, keyed by layer index
    hidden: dict = field(default_factory=dict)
    disjoint: bool = False

    def __len__(self) -> int:
        return len(self.polytopes)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return any(t.polytope.contains(x, tol) for t in self.polytopes)

    def contains_batch(self, xs: np.ndarray, tol: float = 0.0) -> np.ndarray:
        hit = np.zeros(len(xs), dtype=bool)
        for t in self.polytopes:
            hit |= t.polytope.contains_batch(xs, tol)
        return hit

    def volume(self, method=EXACT_2D, within: InputBox | None = None) -> float:
        """Volume of the union; members may overlap unless built with ``strict_active``."""
        polys = [t.polytope for t in self.polytopes]
        return volume_of_union(polys, method, within, disjoint=self.disjoint)


def _patterns(n: int):
    # active-first, lexicographic: (1,1), (1,0), (0,1), (0,0)
    return itertools.product((1, 0), repeat=n)


def preimage_exact(
    net: Network,
    box: InputBox,
    post: OutputPolytope,
    cap: int = DEFAULT_PREIMAGE_CAP,
    prune_with_bounds: bool = False,
    strict_active: bool = False,
) -> PreimageExact:
    """Exact preimage of ``{y : A y <= b}`` within ``box`` as a union of polytopes.

    The constraint set is pulled back one layer at a time. An affine layer
    ``y = W z + a`` turns ``A y <= b`` into ``A W z <= b - A a``; a ReLU layer
    branches on every phase vector ``s`` with ``z = diag(s) zhat`` plus the sign
    constraints of each phase. Branches that are empty (non-strictly) are
    dropped. With ``prune_with_bounds`` the emptiness check also uses the
    CROWN pre-activation bounds over the box, which discards phases the box
    cannot reach.

    Both phases admit ``zhat = 0``, so when an earlier phase forces a
    pre-activation to vanish identically the branches overlap on a
    full-dimensional set. ``strict_active`` reads the active phase as
    ``zhat > 0`` and drops such branches, which makes the members pairwise
    disjoint up to measure zero.
    """
    post.check_dim(net.output_dim)
    bounds = CrownAnalysis(net, box).bounds if prune_with_bounds else None
    # (A, b, strict-row mask, pattern tags)
    live = [(post.A.copy(), post.b.copy(), np.zeros(post.num_rows, dtype=bool), [])]
    hidden: dict[int, list[TaggedPolytope]] = {}
    for k in range(net.num_layers - 1, -1, -1):
        layer = net.layers[k]
        live = [(A @ layer.weight, b - A @ layer.bias, st, tags) for A, b, st, tags in live]
        if strict_active:
            live = [item for item in live if not _vanishing_strict(item[0], item[1], item[2])]
        if k == 0:
            break
        prev = net.layers[k - 1]
        if not prev.is_relu:
            continue
        hidden[k - 1] = [TaggedPolytope(HalfspacePolytope(A, b), "|".join(tags)) for A, b, _, tags in live]
        n = prev.out_dim
        nxt = []
        for A, b, st, tags in live:
            for s in _patterns(n):
                s = np.array(s, dtype=float)
                sign = np.diag(np.where(s > 0, -1.0, 1.0))
                As = np.vstack([A * s[None, :], sign])
                bs = np.concatenate([b, np.zeros(n)])
                ss = np.concatenate([st, s > 0])
                if strict_active and _vanishing_strict(As, bs, ss):
                    continue
                poly = HalfspacePolytope(As, bs)
                check = poly
                if bounds is not None:
                    lo, hi = bounds.layer(k - 1)
                    check = poly.add(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))
                if not is_feasible(check)[0]:
                    continue
                nxt.append((As, bs, ss, ["".join(str(int(v)) for v in s)] + tags))
                if len(nxt) > cap:
                    raise PreimageCapExceeded(f"more than {cap} live polytopes")
        live = nxt
    box_poly = HalfspacePolytope.from_box(box)
    out = []
    for A, b, _, tags in live:
        poly = HalfspacePolytope(A, b).intersect(box_poly)
        if is_feasible(poly)[0]:
            out.append(TaggedPolytope(poly, "|".join(tags)))
    return PreimageExact(out, hidden, disjoint=strict_active)


def _vanishing_strict(A: np.ndarray, b: np.ndarray, strict: np.ndarray, tol: float = 1e-12) -> bool:
    # a strict row 0 < b with b <= 0 is unsatisfiable
    zero = np.abs(A).max(axis=1, initial=0.0) <= tol
    return bool(np.any(strict & zero & (b <= tol)))


def linear_regions(net: Network, box: InputBox, cap: int = DEFAULT_PATTERN_CAP) -> list[LinearRegion]:
    """Partition of ``box`` into polytopes on which ``net`` is affine."""
    return enumerate_patterns(net, box, cap)


# ---------------------------------------------------------------- approximate


@dataclass
class Subdomain:
    box: InputBox
    polytope: HalfspacePolytope | None  # None: empty under-approximation
    covered: float
    alphas: list | None = None
    depth: int = 0

    @property
    def uncovered(self) -> float:
        return max(self.box.volume() - self.covered, 0.0)


@dataclass
class PreimageApprox:
    subdomains: list[Subdomain]
    box: InputBox
    coverage: float
    iterations: int
    estimator: str
    history: list[float] = field(default_factory=list)
    splits: list[tuple[int, float]] = field(default_factory=list)  # (dimension, split point)

    @property
    def polytopes(self) -> list[HalfspacePolytope]:
        return [s.polytope for s in self.subdomains if s.polytope is not None and s.covered > 0]

    def contains_batch(self, xs: np.ndarray) -> np.ndarray:
        hit = np.zeros(len(xs), dtype=bool)
        for p in self.polytopes:
            hit |= p.contains_batch(xs)
        return hit

    def to_dict(self) -> dict:
        return {
            "polytopes": [
                {**s.polytope.to_dict(), "pattern": None, "volume": s.covered}
                for s in self.subdomains
                if s.polytope is not None and s.covered > 0
            ],
            "coverage": self.coverage,
            "iterations": self.iterations,
            "estimator": self.estimator,
        }


@dataclass(frozen=True)
class AlphaOptimizer:
    steps: int = 20
    step_size: float = 0.1
    temperature: float = 0.01
    fd_eps: float = 1e-3
    points: int = 256


def _estimator(box: InputBox, samples: int, seed: int):
    return EXACT_2D if box.dim == 2 else MonteCarlo(samples, seed)


def _approx_polytope(net, post: OutputPolytope, sub: InputBox, alpha) -> HalfspacePolytope | None:
    """``{x in sub : g_r(x) <= b_r}`` with ``g_r`` the CROWN upper bound of row r."""
    if post.num_rows == 0:
        return HalfspacePolytope.from_box(sub)
    ca = CrownAnalysis(net, sub, alpha)
    res = ca.backward(net.num_layers - 1, post.A)
    poly = HalfspacePolytope(res.upperA, post.b - res.upperC).intersect(HalfspacePolytope.from_box(sub))
    return poly


class _Approximator:
    def __init__(self, net, box, post, alpha, alpha_opt, samples, seed, threads):
        self.net = net
        self.box = box
        self.post = post
        self.alpha = alpha
        self.alpha_opt = alpha_opt
        self.samples = samples
        self.seed = seed
        self.threads = threads
        self.method = _estimator(box, samples, seed)

    def measure(self, poly, sub: InputBox) -> float:
        if poly is None:
            return 0.0
        if isinstance(self.method, MonteCarlo):
            # each subdomain gets a share of samples proportional to its volume, at least 1000
            share = max(1000, int(self.samples * sub.volume() / self.box.volume()))
            return volume(poly, MonteCarlo(share, self.seed, 1), sub)
        return volume(poly, EXACT_2D)

    def make(self, sub: InputBox, depth: int) -> Subdomain:
        poly = _approx_polytope(self.net, self.post, sub, self.alpha)
        node = Subdomain(sub, poly, self.measure(poly, sub), None, depth)
        if self.alpha_opt is not None and self.post.num_rows and node.uncovered > 0:
            node = self.optimize(node)
        return node

    # soft volume: mean over sample points of sigmoid(-T-smoothed max violation / T)
    def _soft(self, sub: InputBox, alphas, xs: np.ndarray) -> float:
        ca = CrownAnalysis(self.net, sub, alphas)
        res = ca.backward(self.net.num_layers - 1, self.post.A)
        viol = xs @ res.upperA.T + res.upperC - self.post.b
        T = self.alpha_opt.temperature
        m = viol.max(axis=1, keepdims=True)
        smooth = (m + T * np.log(np.exp((viol - m) / T).sum(axis=1, keepdims=True)))[:, 0]
        return float(np.mean(0.5 * (1.0 - np.tanh(smooth / (2 * T)))))

    def optimize(self, node: Subdomain) -> Subdomain:
        opt = self.alpha_opt
        sub = node.box
        base = CrownAnalysis(self.net, sub, self.alpha)
        alphas = [None if a is None else a.copy() for a in base.alphas]
        # only unstable neurons have a free slope
        free = [
            (k, j)
            for k, j in self.net.relu_neurons()
            if base.bounds.lower[k][j] < 0 < base.bounds.upper[k][j]
        ]
        if not free:
            return node
        key = zlib.crc32(sub.lower.tobytes() + sub.upper.tobytes())
        rng = np.random.default_rng([self.seed, key])
        xs = sub.sample(rng, opt.points)
        for _ in range(opt.steps):
            grad = np.zeros(len(free))
            for i, (k, j) in enumerate(free):
                a0 = alphas[k][j]
                alphas[k][j] = min(a0 + opt.fd_eps, 1.0)
                hi = self._soft(sub, alphas, xs)
                up = alphas[k][j]
                alphas[k][j] = max(a0 - opt.fd_eps, 0.0)
                lo = self._soft(sub, alphas, xs)
                dn = alphas[k][j]
                alphas[k][j] = a0
                if up > dn:
                    grad[i] = (hi - lo) / (up - dn)
            if not np.any(grad):
                break
            for i, (k, j) in enumerate(free):
                alphas[k][j] = float(np.clip(alphas[k][j] + opt.step_size * grad[i], 0.0, 1.0))
        poly = _approx_polytope(self.net, self.post, sub, alphas)
        covered = self.measure(poly, sub)
        if covered > node.covered:
            return Subdomain(sub, poly, covered, alphas, node.depth)
        return node

    def children(self, node: Subdomain, dim: int) -> tuple[Subdomain, Subdomain]:
        kids = []
        for half in node.box.split(dim):
            child = self.make(half, node.depth + 1)
            # keep the parent's polytope when it covers more of this half
            if node.polytope is not None:
                inherited = node.polytope.intersect(HalfspacePolytope.from_box(half))
                vol = self.measure(inherited, half)
                if vol > child.covered:
                    child = Subdomain(half, inherited, vol, node.alphas, node.depth + 1)
            kids.append(child)
        return kids[0], kids[1]

    def best_split(self, node: Subdomain):
        dims = range(node.box.dim)
        if self.threads > 1 and node.box.dim > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                options = list(pool.map(lambda d: self.children(node, d), dims))
        else:
            options = [self.children(node, d) for d in dims]
        gains = [a.covered + b.covered for a, b in options]
        d = int(np.argmax(gains))  # ties to the lowest dimension
        return d, options[d]


def preimage_under_approx(
    net: Network,
    box: InputBox,
    post: OutputPolytope,
    target_coverage: float = 0.9,
    max_iters: int = 50,
    alpha: AlphaPolicy = "adaptive",
    alpha_opt: bool | AlphaOptimizer = False,
    seed: int = 0,
    samples: int = 100_000,
    threads: int = 1,
) -> PreimageApprox:
    """Anytime under-approximation of the preimage of ``post`` within ``box``.

    Each leaf subdomain carries one polytope built from CROWN upper-bound
    functions of the post rows. The leaf with the most uncovered volume is
    split at the midpoint of the coordinate whose split covers the most.
    Coverage never decreases between iterations.
    """
    if not 0.0 < target_coverage <= 1.0:
        raise ValueError("target_coverage must lie in (0, 1]")
    post.check_dim(net.output_dim)
    if box.volume() <= 0:
        raise ValueError("box must have non-zero volume")
    opt = AlphaOptimizer() if alpha_opt is True else (alpha_opt or None)
    ap = _Approximator(net, box, post, alpha, opt, samples, seed, threads)
    total = box.volume()
    estimator = "exact2d" if ap.method == EXACT_2D else "montecarlo"

    if post.num_rows and not is_feasible(HalfspacePolytope(post.A, post.b))[0]:
        return PreimageApprox([Subdomain(box, None, 0.0)], box, 0.0, 0, estimator, [0.0])

    root = ap.make(box, 0)
    counter = itertools.count()
    heap = [(-root.uncovered, next(counter), root)]
    covered = root.covered
    history = [covered / total]
    splits = []
    iterations = 0
    while covered / total < target_coverage and iterations < max_iters:
        neg_unc, _, node = heapq.heappop(heap)
        if -neg_unc <= 0:
            heapq.heappush(heap, (neg_unc, next(counter), node))
            break
        d, (a, b) = ap.best_split(node)
        iterations += 1
        splits.append((d, float(0.5 * (node.box.lower[d] + node.box.upper[d]))))
        covered += a.covered + b.covered - node.covered
        for child in (a, b):
            heapq.heappush(heap, (-child.uncovered, next(counter), child))
        history.append(covered / total)
    leaves = [item[2] for item in sorted(heap, key=lambda t: t[1])]
    coverage = min(max(sum(s.covered for s in leaves) / total, 0.0), 1.0)
    return PreimageApprox(leaves, box, coverage, iterations, estimator, history, splits)


# ---------------------------------------------------------------- quantitative


class QuantStatus(str, Enum):
    HOLDS = "holds"
    UNKNOWN = "unknown"


@dataclass
class QuantitativeVerdict:
    status: QuantStatus
    coverage: float
    proportion: float
    estimator: str
    margin: float = 0.0  # 99% half-width for Monte Carlo, 0 for exact
    approx: PreimageApprox | None = None

    @property
    def holds(self) -> bool:
        return self.status is QuantStatus.HOLDS


def verify_quantitative(
    net: Network,
    spec: QuantitativeSpec,
    max_iters: int = 50,
    alpha: AlphaPolicy = "adaptive",
    alpha_opt: bool | AlphaOptimizer = False,
    seed: int = 0,
    samples: int = 100_000,
    threads: int = 1,
) -> QuantitativeVerdict:
    """Holds iff the certified coverage reaches the proportion.

    Monte Carlo coverage must clear the proportion by its 99% margin. An
    under-approximation can prove the property but never refute it.
    """
    p = spec.proportion
    estimator = "exact2d" if spec.input.dim == 2 else "montecarlo"
    if p == 0.0:
        return QuantitativeVerdict(QuantStatus.HOLDS, 0.0, p, estimator)
    approx = preimage_under_approx(
        net, spec.input, spec.output, p, max_iters, alpha, alpha_opt, seed, samples, threads
    )
    margin = 0.0
    if approx.estimator == "montecarlo":
        margin = mc_confidence_margin(approx.coverage, samples)
    ok = approx.coverage - margin >= p
    status = QuantStatus.HOLDS if ok else QuantStatus.UNKNOWN
    return QuantitativeVerdict(status, approx.coverage, p, approx.estimator, margin, approx)


def export_preimage(result: PreimageExact | PreimageApprox, within: InputBox | None = None) -> str:
    if isinstance(result, PreimageApprox):
        return json.dumps(result.to_dict(), indent=2)
    method = EXACT_2D if result.polytopes and result.polytopes[0].polytope.dim == 2 else None
    polys = []
    for t in result.polytopes:
        vol = None
        if method is not None:
            vol = volume(t.polytope, method)
        elif within is not None:
            vol = volume(t.polytope, MonteCarlo(), within)
        polys.append({**t.polytope.to_dict(), "pattern": t.pattern, "volume": vol})
    total = sum(p["volume"] for p in polys) if all(p["volume"] is not None for p in polys) else None
    data = {"polytopes": polys, "coverage": None, "iterations": 0}
    if within is not None and total is not None:
        data["coverage"] = total / within.volume()
    return json.dumps(data, indent=2)
