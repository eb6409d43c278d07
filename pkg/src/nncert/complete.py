"""Complete verification by branch-and-bound over ReLU phases.

Every node fixes some unstable ReLUs to active or inactive. Nodes are bounded
with CROWN (split neurons use exact slopes), sharpened with an LP over the
triangle relaxation when CROWN is close to deciding or no unstable neuron is
left, in which case the LP is exact. Counterexamples are searched at every
node, so the answer for an unlimited budget is never Unknown.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .bounds import GUARD, AlphaPolicy, CrownAnalysis, InfeasibleSplit, NeuronBounds
from .geometry import HalfspacePolytope, LPStatus, chebyshev_center, lp_solve
from .model import Network, forward_batch, forward_trace
from .property import InputBox, OutputPolytope, margin_polytope

STRICT_MARGIN = 1e-9
DEFAULT_PATTERN_CAP = 20
LP_SHARPEN_RATIO = 0.1
SAMPLES_PER_NODE = 64


class Phase(str, Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"
    UNSTABLE = "unstable"


class Status(str, Enum):
    VERIFIED = "verified"
    FALSIFIED = "falsified"
    UNKNOWN = "unknown"


class PatternCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class ActivationPattern:
    """Phase of every ReLU neuron, one tuple per layer (identity layers empty)."""

    phases: tuple[tuple[Phase, ...], ...]

    @classmethod
    def from_bounds(cls, net: Network, bounds: NeuronBounds) -> "ActivationPattern":
        layers = []
        for k, layer in enumerate(net.layers[:-1]):
            if not layer.is_relu:
                layers.append(())
                continue
            l, u = bounds.layer(k)
            layers.append(
                tuple(
                    Phase.INACTIVE if u[j] <= 0 else Phase.ACTIVE if l[j] >= 0 else Phase.UNSTABLE
                    for j in range(layer.out_dim)
                )
            )
        return cls(tuple(layers))

    @property
    def fully_fixed(self) -> bool:
        return all(p is not Phase.UNSTABLE for layer in self.phases for p in layer)

    def tag(self) -> str:
        sym = {Phase.ACTIVE: "1", Phase.INACTIVE: "0", Phase.UNSTABLE: "?"}
        return "|".join("".join(sym[p] for p in layer) for layer in self.phases if layer)

    def masks(self) -> list[np.ndarray]:
        return [np.array([p is Phase.ACTIVE for p in layer], dtype=float) for layer in self.phases]


@dataclass
class VerificationVerdict:
    status: Status
    witness: np.ndarray | None = None
    nodes: int = 0
    elapsed: float = 0.0
    bound: float | None = None  # best certified upper bound of max_r (a_r f(x) - b_r) at termination
    violated_row: int | None = None
    splits: int = 0

    @property
    def verified(self) -> bool:
        return self.status is Status.VERIFIED

    @property
    def falsified(self) -> bool:
        return self.status is Status.FALSIFIED


@dataclass(order=True)
class BranchNode:
    priority: float
    order: int
    splits: list = field(compare=False)
    depth: int = field(compare=False, default=0)
    bound: float = field(compare=False, default=np.inf)
    lambdas: dict = field(compare=False, default_factory=dict)
    neuron_bounds: NeuronBounds | None = field(compare=False, default=None)

    def fixed(self) -> set[tuple[int, int, int]]:
        return {
            (k, j, int(s[j]))
            for k, s in enumerate(self.splits)
            if s is not None
            for j in np.flatnonzero(s)
        }


@dataclass
class Budget:
    max_nodes: int = 20_000
    timeout: float | None = None


def _empty_splits(net: Network) -> list:
    return [np.zeros(layer.out_dim, dtype=int) if layer.is_relu else None for layer in net.layers]


def branch_score(node: BranchNode, neuron: tuple[int, int]) -> float:
    """Estimated bound improvement from splitting ``neuron``.

    ``|lambda| * |u*l/(u-l)|``: the intercept the upper relaxation contributes,
    weighted by the neuron's back-substituted coefficient. Zero for stable or
    already split neurons.
    """
    k, j = neuron
    if node.neuron_bounds is None:
        return 0.0
    if node.splits[k] is None or node.splits[k][j] != 0:
        return 0.0
    l = node.neuron_bounds.lower[k][j]
    u = node.neuron_bounds.upper[k][j]
    if not (l < 0 < u):
        return 0.0
    lam = node.lambdas.get(k)
    if lam is None:
        return 0.0
    return float(abs(lam[j]) * abs(u * l / (u - l)))


def _unstable_free(net: Network, node: BranchNode) -> list[tuple[int, int]]:
    nb = node.neuron_bounds
    out = []
    for k, j in net.relu_neurons():
        if node.splits[k][j] == 0 and nb.lower[k][j] < 0 < nb.upper[k][j]:
            out.append((k, j))
    return out


def choose_branch(net: Network, node: BranchNode) -> tuple[int, int] | None:
    candidates = _unstable_free(net, node)
    if not candidates:
        return None
    scores = [branch_score(node, n) for n in candidates]
    # max score, ties to the earliest (layer, index)
    return candidates[int(np.argmax(scores))]


# ---------------------------------------------------------------- LP bounding


def _triangle_lp(net: Network, box: InputBox, bounds: NeuronBounds, splits) -> tuple[HalfspacePolytope, list[slice]]:
    """Planet-style relaxation over variables ``[x, z_1, ..., z_{L-1}]``.

    Returns the polytope and the variable slices of each hidden layer's
    post-activation vector.
    """
    n = net.input_dim
    sizes = net.hidden_sizes
    total = n + sum(sizes)
    slices = [slice(0, n)]
    off = n
    for s in sizes:
        slices.append(slice(off, off + s))
        off += s
    rows: list[np.ndarray] = []
    rhs: list[float] = []

    def row() -> np.ndarray:
        return np.zeros(total)

    for i in range(n):
        r = row()
        r[i] = -1.0
        rows.append(r)
        rhs.append(-box.lower[i])
        r = row()
        r[i] = 1.0
        rows.append(r)
        rhs.append(box.upper[i])

    for k, layer in enumerate(net.layers[:-1]):
        prev, cur = slices[k], slices[k + 1]
        l, u = bounds.layer(k)
        split = splits[k] if splits is not None else None
        for j in range(layer.out_dim):
            # zhat = w . z_prev + c
            w = layer.weight[j]
            c = layer.bias[j]
            zj = cur.start + j
            if not layer.is_relu:
                r = row(); r[zj] = 1.0; r[prev] -= w; rows.append(r); rhs.append(c)
                r = row(); r[zj] = -1.0; r[prev] += w; rows.append(r); rhs.append(-c)
                continue
            s = 0 if split is None else int(split[j])
            lj, uj = l[j], u[j]
            r = row(); r[zj] = -1.0; rows.append(r); rhs.append(0.0)  # z >= 0
            if s > 0 or (s == 0 and lj >= 0):
                r = row(); r[zj] = 1.0; r[prev] -= w; rows.append(r); rhs.append(c)  # z <= zhat
                r = row(); r[zj] = -1.0; r[prev] += w; rows.append(r); rhs.append(-c)  # z >= zhat
                if s > 0:
                    r = row(); r[prev] -= w; rows.append(r); rhs.append(c)  # zhat >= 0
            elif s < 0 or (s == 0 and uj <= 0):
                r = row(); r[zj] = 1.0; rows.append(r); rhs.append(0.0)  # z <= 0
                if s < 0:
                    r = row(); r[prev] += w; rows.append(r); rhs.append(-c)  # zhat <= 0
            else:
                slope = uj / (uj - lj)
                r = row(); r[zj] = -1.0; r[prev] += w; rows.append(r); rhs.append(-c)  # z >= zhat
                # z <= slope * (zhat - l)
                r = row(); r[zj] = 1.0; r[prev] -= slope * w; rows.append(r); rhs.append(slope * (c - lj))
    return HalfspacePolytope(np.array(rows), np.array(rhs)), slices


def _lp_row_bound(net: Network, poly: HalfspacePolytope, slices, a: np.ndarray, b: float):
    last = net.layers[-1]
    total = poly.dim
    obj = np.zeros(total)
    obj[slices[-1]] = a @ last.weight
    const = float(a @ last.bias) - b
    res = lp_solve(poly, obj, "max")
    if res.status is LPStatus.INFEASIBLE:
        return None, None
    if res.status is LPStatus.UNBOUNDED:  # cannot happen with a bounded box; be conservative
        return np.inf, None
    return res.optimum + const, res.witness[: net.input_dim]


# ---------------------------------------------------------------- BaB


class _Search:
    def __init__(self, net, box, post, alpha, budget, margin, seed, guard):
        self.net = net
        self.guard = guard
        self.box = box
        self.post = post
        self.alpha = alpha
        self.budget = budget
        self.margin = margin
        self.seed = seed
        self.nodes = 0
        self.splits = 0
        self.start = time.perf_counter()
        self.counter = itertools.count()

    def out_of_budget(self) -> bool:
        if self.nodes >= self.budget.max_nodes:
            return True
        if self.budget.timeout is not None and time.perf_counter() - self.start > self.budget.timeout:
            return True
        return False

    def violation(self, xs: np.ndarray, r: int) -> np.ndarray:
        ys = forward_batch(self.net, np.atleast_2d(xs))
        return ys @ self.post.A[r] - self.post.b[r]

    def try_witness(self, xs, r: int):
        xs = np.atleast_2d(xs)
        xs = np.clip(xs, self.box.lower, self.box.upper)
        v = self.violation(xs, r)
        i = int(np.argmax(v))
        if v[i] > self.margin:
            return xs[i]
        return None

    def root_candidates(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return np.vstack([self.box.corners(), self.box.center[None, :], self.box.sample(rng, SAMPLES_PER_NODE)])

    def row(self, r: int) -> VerificationVerdict:
        """Decide ``max_x a_r f(x) <= b_r`` over the box."""
        a = self.post.A[r]
        b = float(self.post.b[r])
        w = self.try_witness(self.root_candidates(), r)
        if w is not None:
            return VerificationVerdict(Status.FALSIFIED, w, violated_row=r)
        heap: list[BranchNode] = []
        root = BranchNode(0.0, next(self.counter), _empty_splits(self.net))
        outcome = self.expand(root, a, b, r, heap)
        if isinstance(outcome, np.ndarray):
            return VerificationVerdict(Status.FALSIFIED, outcome, violated_row=r)
        unresolved = False
        while heap:
            if self.out_of_budget():
                worst = -heap[0].priority
                return VerificationVerdict(Status.UNKNOWN, bound=worst)
            node = heapq.heappop(heap)
            if node.bound <= self.guard:
                continue
            target = choose_branch(self.net, node)
            if target is None:
                unresolved = True
                continue
            k, j = target
            self.splits += 1
            for side in (1, -1):
                splits = [None if s is None else s.copy() for s in node.splits]
                splits[k][j] = side
                child = BranchNode(0.0, next(self.counter), splits, node.depth + 1)
                outcome = self.expand(child, a, b, r, heap)
                if isinstance(outcome, np.ndarray):
                    return VerificationVerdict(Status.FALSIFIED, outcome, violated_row=r)
        if unresolved:
            return VerificationVerdict(Status.UNKNOWN, bound=np.nan)
        return VerificationVerdict(Status.VERIFIED, bound=0.0)

    def expand(self, node: BranchNode, a, b, r, heap):
        """Bound ``node``; push it if undecided. Returns a witness or None."""
        self.nodes += 1
        try:
            ca = CrownAnalysis(self.net, self.box, self.alpha, node.splits)
        except InfeasibleSplit:
            return None
        lo, hi, res = ca.bound_objective(a[None, :])
        ub = float(hi[0]) - b
        lb = float(lo[0]) - b
        node.neuron_bounds = ca.bounds
        node.lambdas = {k: lam[0] for k, lam in res.upper_lambdas.items()}
        # candidates: maximiser of the linear upper bound, and box samples
        ua = res.upperA[0]
        corner = np.where(ua > 0, self.box.upper, self.box.lower)
        rng = np.random.default_rng([self.seed, node.order])
        w = self.try_witness(np.vstack([corner, self.box.sample(rng, SAMPLES_PER_NODE)]), r)
        if w is not None:
            return w
        if ub <= self.guard:
            return None
        free = _unstable_free(self.net, node)
        if not free or ub <= LP_SHARPEN_RATIO * (ub - lb):
            poly, slices = _triangle_lp(self.net, self.box, ca.bounds, node.splits)
            lp_ub, lp_x = _lp_row_bound(self.net, poly, slices, a, b)
            if lp_ub is None:
                return None
            if lp_x is not None:
                w = self.try_witness(lp_x, r)
                if w is not None:
                    return w
            ub = min(ub, lp_ub)
            if ub <= self.guard:
                return None
        node.bound = ub
        node.priority = -ub
        heapq.heappush(heap, node)
        return None


def verify_complete(
    net: Network,
    box: InputBox,
    post: OutputPolytope,
    budget: Budget | None = None,
    alpha: AlphaPolicy = "zero",
    margin: float = STRICT_MARGIN,
    seed: int = 0,
    guard: float = GUARD,
) -> VerificationVerdict:
    """Decide ``forall x in box: A f(x) <= b``.

    Falsified witnesses violate some row by more than ``margin``; Verified means
    every row's certified maximum exceeds ``b`` by at most ``guard``.
    """
    post.check_dim(net.output_dim)
    if box.dim != net.input_dim:
        raise ValueError(f"box has dimension {box.dim}, network expects {net.input_dim}")
    budget = budget or Budget()
    search = _Search(net, box, post, alpha, budget, margin, seed, guard)
    worst = -np.inf
    unknown = None
    for r in range(post.num_rows):
        v = search.row(r)
        if v.status is Status.FALSIFIED:
            v.nodes = search.nodes
            v.splits = search.splits
            v.elapsed = time.perf_counter() - search.start
            ys = forward_batch(net, v.witness[None, :])[0]
            v.bound = float(post.A[r] @ ys - post.b[r])
            return v
        if v.status is Status.UNKNOWN:
            unknown = v
            worst = max(worst, v.bound if v.bound is not None else np.inf)
        else:
            worst = max(worst, 0.0)
    status = Status.UNKNOWN if unknown is not None else Status.VERIFIED
    return VerificationVerdict(
        status,
        nodes=search.nodes,
        splits=search.splits,
        elapsed=time.perf_counter() - search.start,
        bound=float(worst) if post.num_rows else 0.0,
    )


# ---------------------------------------------------------------- enumeration


@dataclass
class LinearRegion:
    pattern: ActivationPattern
    polytope: HalfspacePolytope
    weight: np.ndarray  # f(x) = weight @ x + offset on the region
    offset: np.ndarray


def enumerate_patterns(
    net: Network,
    box: InputBox,
    cap: int = DEFAULT_PATTERN_CAP,
    full_dimensional: bool = True,
) -> list[LinearRegion]:
    """All activation patterns realised on the box, with their input polytopes.

    Neurons are decided depth-first in layer-major order. A branch is kept when
    its polytope has non-empty interior (``full_dimensional``) or is merely
    non-empty; lower-dimensional pieces have measure zero and add nothing to
    the partition.
    """
    crown = CrownAnalysis(net, box, "zero")
    bounds = crown.bounds
    unstable = bounds.unstable(net)
    if len(unstable) > cap:
        raise PatternCapExceeded(f"{len(unstable)} unstable neurons exceed the cap of {cap}")
    unstable_set = set(unstable)
    n = net.input_dim
    base = HalfspacePolytope.from_box(box)
    regions: list[LinearRegion] = []
    tol = 1e-9

    def interior(poly: HalfspacePolytope):
        if full_dimensional:
            radius, center = chebyshev_center(poly)
            return radius > tol, center, radius
        res = lp_solve(poly, np.zeros(n))
        return res.optimal, (res.witness if res.optimal else None), 0.0

    ok, c0, r0 = interior(base)
    if not ok:
        return []

    def walk(k: int, M: np.ndarray, m: np.ndarray, poly, center, radius, phases):
        # M, m: affine map x -> z_{k-1}
        if k == net.num_layers - 1:
            last = net.layers[-1]
            regions.append(
                LinearRegion(
                    ActivationPattern(tuple(tuple(p) for p in phases)),
                    poly,
                    last.weight @ M,
                    last.weight @ m + last.bias,
                )
            )
            return
        layer = net.layers[k]
        Wk = layer.weight @ M
        ck = layer.weight @ m + layer.bias
        if not layer.is_relu:
            walk(k + 1, Wk, ck, poly, center, radius, phases + [[]])
            return
        decide(k, 0, Wk, ck, np.ones(layer.out_dim), poly, center, radius, phases + [[]])

    def decide(k, j, Wk, ck, mask, poly, center, radius, phases):
        layer = net.layers[k]
        if j == layer.out_dim:
            walk(k + 1, mask[:, None] * Wk, mask * ck, poly, center, radius, phases)
            return
        row, const = Wk[j], ck[j]
        if (k, j) not in unstable_set:
            active = bounds.lower[k][j] >= 0
            _take(k, j, Wk, ck, mask, poly, center, radius, phases, active)
            return
        norm = float(np.linalg.norm(row))
        if norm <= 1e-12:
            _take(k, j, Wk, ck, mask, poly, center, radius, phases, const > 0)
            return
        for active in (True, False):
            # active: -row.x <= const ; inactive: row.x <= -const
            child = poly.add(-row if active else row, const if active else -const)
            value = float(row @ center + const) if center is not None else 0.0
            same_side = (value > 0) if active else (value < 0)
            if full_dimensional and center is not None and same_side and abs(value) / norm > tol:
                cc, rr = center, min(radius, abs(value) / norm)
                if rr < 1e-6:
                    good, cc, rr = interior(child)
                    if not good:
                        continue
            else:
                good, cc, rr = interior(child)
                if not good:
                    continue
            _take(k, j, Wk, ck, mask, child, cc, rr, phases, active, constrained=True)

    def _take(k, j, Wk, ck, mask, poly, center, radius, phases, active, constrained=False):
        mask = mask.copy()
        mask[j] = 1.0 if active else 0.0
        phases = [list(p) for p in phases]
        phases[-1].append(Phase.ACTIVE if active else Phase.INACTIVE)
        decide(k, j + 1, Wk, ck, mask, poly, center, radius, phases)

    walk(0, np.eye(n), np.zeros(n), base, c0, r0, [])
    return regions


def verify_by_enumeration(net: Network, box: InputBox, post: OutputPolytope, cap: int = DEFAULT_PATTERN_CAP, margin: float = STRICT_MARGIN):
    """Exhaustive oracle: maximise every row over every linear region by LP."""
    regions = enumerate_patterns(net, box, cap)
    best = -np.inf
    witness = None
    for reg in regions:
        for r in range(post.num_rows):
            obj = post.A[r] @ reg.weight
            res = lp_solve(reg.polytope, obj, "max")
            if not res.optimal:
                continue
            val = res.optimum + float(post.A[r] @ reg.offset) - post.b[r]
            if val > best:
                best, witness = val, res.witness
    if best > margin:
        return Status.FALSIFIED, witness, best
    return Status.VERIFIED, None, best


# ---------------------------------------------------------------- MILP export


def _fmt(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _linexpr(terms: Sequence[tuple[float, str]]) -> str:
    parts = []
    for coef, name in terms:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        body = name if mag == 1 else f"{_fmt(mag)} {name}"
        parts.append(f"{sign} {body}")
    if not parts:
        return "0 " + terms[0][1] if terms else "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


class MilpExportError(ValueError):
    pass


def export_milp(
    net: Network,
    box: InputBox,
    post: OutputPolytope,
    bounds: NeuronBounds | None = None,
    margin: float = 1e-5,
) -> str:
    """Big-M MILP encoding of the negated property in CPLEX LP format.

    Hidden neurons are numbered globally from 1 across layers: ``zh<i>`` is the
    pre-activation, ``z<i>`` the activation and ``d<i>`` the phase indicator of
    an unstable neuron. Stable neurons get equalities and no binary.

    The negated postcondition is written as ``a.y >= b + margin``. The margin
    must clear the feasibility tolerance of the solver that reads the file
    (1e-6 for common MILP solvers), hence the 1e-5 default.
    """
    post.check_dim(net.output_dim)
    if bounds is None:
        bounds = CrownAnalysis(net, box, "zero").bounds
    n = net.input_dim
    names_prev = [f"x{i + 1}" for i in range(n)]
    cons: list[str] = []
    binaries: list[str] = []
    free_vars: list[str] = []
    nonneg: list[tuple[str, float]] = []
    gid = 0
    for k, layer in enumerate(net.layers):
        last = k == net.num_layers - 1
        cur = []
        for j in range(layer.out_dim):
            if last:
                y = f"y{j + 1}"
                terms = [(1.0, y)] + [(-float(wv), nm) for wv, nm in zip(layer.weight[j], names_prev)]
                cons.append(f" out_{y}: {_linexpr(terms)} = {_fmt(layer.bias[j])}")
                free_vars.append(y)
                continue
            gid += 1
            zh, z = f"zh{gid}", f"z{gid}"
            terms = [(1.0, zh)] + [(-float(wv), nm) for wv, nm in zip(layer.weight[j], names_prev)]
            cons.append(f" aff_{zh}: {_linexpr(terms)} = {_fmt(layer.bias[j])}")
            free_vars.append(zh)
            cur.append(z)
            l, u = float(bounds.lower[k][j]), float(bounds.upper[k][j])
            if not (np.isfinite(l) and np.isfinite(u)):
                raise MilpExportError(f"neuron {gid} has unbounded pre-activation bounds; tighten first")
            if not layer.is_relu or l >= 0:
                cons.append(f" stable_{z}: {z} - {zh} = 0")
                if layer.is_relu:
                    nonneg.append((z, u))
                else:
                    free_vars.append(z)
            elif u <= 0:
                cons.append(f" stable_{z}: {z} = 0")
                nonneg.append((z, 0.0))
            else:
                d = f"d{gid}"
                binaries.append(d)
                nonneg.append((z, u))
                cons.append(f" relu_{z}_up: {_linexpr([(1.0, z), (-u, d)])} <= 0")
                cons.append(f" relu_{z}_ge: {z} - {zh} >= 0")
                # z <= zh - l (1 - d)  <=>  z - zh - l d <= -l
                cons.append(f" relu_{z}_gap: {_linexpr([(1.0, z), (-1.0, zh), (-l, d)])} <= {_fmt(-l)}")
        names_prev = cur

    ys = [f"y{j + 1}" for j in range(net.output_dim)]
    rows = post.num_rows
    objective: list[tuple[float, str]]
    if rows == 1:
        terms = list(zip(post.A[0].tolist(), ys))
        objective = terms
        cons.append(f" neg_post: {_linexpr(terms)} >= {_fmt(post.b[0] + margin)}")
    else:
        # at least one row violated, big-M from CROWN lower bounds of each row
        crown = CrownAnalysis(net, box, "zero")
        lo, _, _ = crown.bound_objective(post.A)
        vs = []
        for r in range(rows):
            v = f"v{r + 1}"
            vs.append(v)
            binaries.append(v)
            big_m = max(0.0, float(post.b[r] + margin - lo[r])) + 1.0
            terms = list(zip(post.A[r].tolist(), ys)) + [(-big_m, v)]
            cons.append(f" neg_post_{r + 1}: {_linexpr(terms)} >= {_fmt(post.b[r] + margin - big_m)}")
        cons.append(f" neg_post_any: {_linexpr([(1.0, v) for v in vs])} >= 1")
        objective = [(1.0, v) for v in vs]

    lines = [
        "\\ MILP encoding of a ReLU network verification problem",
        "\\ feasible iff some input in the box violates the postcondition",
        "Maximize",
        f" obj: {_linexpr(objective)}",
        "Subject To",
        *cons,
        "Bounds",
    ]
    for i in range(n):
        lines.append(f" {_fmt(box.lower[i])} <= x{i + 1} <= {_fmt(box.upper[i])}")
    for z, u in nonneg:
        lines.append(f" 0 <= {z} <= {_fmt(max(u, 0.0))}")
    for v in free_vars:
        lines.append(f" {v} free")
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- MSR


@dataclass
class MSRResult:
    lower: float
    upper: float
    probes: list = field(default_factory=list)  # (epsilon, status)
    inconclusive: bool = False
    witness: np.ndarray | None = None


def msr_bounds(
    net: Network,
    x,
    label: int,
    cap: float,
    tol: float,
    margin: float = STRICT_MARGIN,
    budget: Budget | None = None,
) -> MSRResult:
    """Bracket the maximal safe l-inf radius around ``x`` by binary search.

    A probe at radius ``eps`` runs the complete verifier on the box of that
    radius against ``y_label - y_j >= margin``. Ties with the margin shift
    count as violations, so both the witness threshold and the guard are zero.
    """
    if cap <= 0 or tol <= 0:
        raise ValueError("cap and tol must be positive")
    x = np.asarray(x, dtype=float)
    post = margin_polytope(net.output_dim, label, margin)
    result = MSRResult(0.0, cap)

    def probe(eps: float) -> Status:
        v = verify_complete(net, InputBox.around(x, eps), post, budget, margin=0.0, guard=0.0)
        result.probes.append((eps, v.status.value))
        if v.status is Status.FALSIFIED:
            dist = float(np.max(np.abs(v.witness - x)))
            if dist < result.upper:
                result.upper = dist
                result.witness = v.witness
        elif v.status is Status.UNKNOWN:
            result.inconclusive = True
        return v.status

    status = probe(cap)
    if status is Status.VERIFIED:
        result.lower = cap
        return result
    if status is Status.FALSIFIED:
        result.upper = min(result.upper, cap)
    lo, hi = 0.0, result.upper
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        status = probe(mid)
        if status is Status.VERIFIED:
            lo = mid
        else:
            hi = min(mid, result.upper)
    result.lower = lo
    return result
