"""Half-space polytopes: LP, feasibility, 2-D vertices and volume."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import simplex
from .property import InputBox

FEAS_TOL = 1e-7
MERGE_TOL = 1e-9
DEFAULT_MC_SAMPLES = 100_000


class GeometryError(ValueError):
    pass


class UnboundedPolytopeError(GeometryError):
    pass


class LPNumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class HalfspacePolytope:
    """The set ``{x : A x <= b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(0, A.shape[0]) if A.size == 0 else A.reshape(1, -1)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise GeometryError(f"inconsistent shapes A{A.shape} b{b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise GeometryError("non-finite polytope entry")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_box(cls, box: InputBox) -> "HalfspacePolytope":
        d = box.dim
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([box.upper, -box.lower]))

    @classmethod
    def universe(cls, dim: int) -> "HalfspacePolytope":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.A.shape[0]

    def intersect(self, other: "HalfspacePolytope") -> "HalfspacePolytope":
        return HalfspacePolytope(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]))

    def add(self, A, b) -> "HalfspacePolytope":
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        return HalfspacePolytope(np.vstack([self.A, A]), np.concatenate([self.b, np.atleast_1d(b)]))

    def with_box(self, box: InputBox) -> "HalfspacePolytope":
        return self.intersect(HalfspacePolytope.from_box(box))

    def contains(self, x, tol: float = FEAS_TOL) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=np.float64) <= self.b + tol))

    def contains_batch(self, xs: np.ndarray, tol: float = 0.0) -> np.ndarray:
        if self.num_constraints == 0:
            return np.ones(xs.shape[0], dtype=bool)
        return np.all(xs @ self.A.T <= self.b + tol, axis=1)

    def normalized(self) -> "HalfspacePolytope":
        """Rows scaled to unit Euclidean norm; all-zero rows kept as-is."""
        norms = np.linalg.norm(self.A, axis=1)
        scale = np.where(norms > 0, norms, 1.0)
        return HalfspacePolytope(self.A / scale[:, None], self.b / scale)

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}


class LPStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LPResult:
    status: LPStatus
    optimum: float | None = None
    witness: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


def lp_solve(
    poly: HalfspacePolytope,
    objective,
    sense: str = "min",
    pricing: str = "dantzig",
) -> LPResult:
    """Optimize a linear objective over ``{x : A x <= b}`` with free ``x``.

    Single-variable rows of the form ``-x_j <= -l`` are turned into variable
    shifts instead of constraints; variables without such a lower bound are
    split into positive and negative parts.
    """
    c = np.asarray(objective, dtype=np.float64).reshape(-1)
    d = poly.dim
    if c.shape[0] != d:
        raise GeometryError(f"objective length {c.shape[0]} != dimension {d}")
    if sense not in ("min", "max"):
        raise GeometryError(f"unknown sense {sense!r}")
    sign = 1.0 if sense == "min" else -1.0
    A = poly.A
    b = poly.b

    # row scaling by the largest coefficient
    amax = np.abs(A).max(axis=1, initial=0.0)
    zero_rows = amax == 0.0
    if np.any(b[zero_rows] < -FEAS_TOL):
        return LPResult(LPStatus.INFEASIBLE)
    A = A[~zero_rows] / amax[~zero_rows, None]
    b = b[~zero_rows] / amax[~zero_rows]

    nnz = np.count_nonzero(A, axis=1)
    lower = np.full(d, -np.inf)
    bound_rows = np.zeros(A.shape[0], dtype=bool)
    for i in np.flatnonzero(nnz == 1):
        j = int(np.flatnonzero(A[i])[0])
        if A[i, j] < 0:
            lower[j] = max(lower[j], b[i] / A[i, j])
            bound_rows[i] = True
    A = A[~bound_rows]
    b = b[~bound_rows]
    has_lb = np.isfinite(lower)
    shift = np.where(has_lb, lower, 0.0)
    b = b - A @ shift
    free = np.flatnonzero(~has_lb)

    k = A.shape[0]
    # columns: x' (d) | x- for free vars | slacks (k)
    n_free = free.size
    M = np.hstack([A, -A[:, free], np.eye(k)])
    cost = np.concatenate([sign * c, -sign * c[free], np.zeros(k)])
    r = b.copy()
    slack_cols = d + n_free + np.arange(k)
    neg = r < 0
    M[neg] *= -1.0
    r[neg] *= -1.0
    basis = np.where(neg, -1, slack_cols)
    max_iter = 50 * (poly.num_constraints + d)
    try:
        status, u, _ = simplex.solve(M, r, cost, basis, max_iter=max_iter, pricing=pricing)
    except simplex.SimplexIterationLimit as exc:
        raise LPNumericalError(str(exc)) from None
    if status == "infeasible":
        return LPResult(LPStatus.INFEASIBLE)
    if status == "unbounded":
        return LPResult(LPStatus.UNBOUNDED)
    x = u[:d] + shift
    x[free] -= u[d : d + n_free]
    return LPResult(LPStatus.OPTIMAL, float(c @ x), x)


def is_feasible(poly: HalfspacePolytope) -> tuple[bool, np.ndarray | None]:
    res = lp_solve(poly, np.zeros(poly.dim))
    if res.optimal:
        return True, res.witness
    return False, None


def chebyshev_center(poly: HalfspacePolytope, max_radius: float = 1.0) -> tuple[float, np.ndarray | None]:
    """Largest inscribed ball (radius capped); radius < 0 means empty."""
    p = poly.normalized()
    norms = np.linalg.norm(p.A, axis=1)
    d = p.dim
    A = np.hstack([p.A, norms[:, None]])
    cap = np.zeros((1, d + 1))
    cap[0, -1] = 1.0
    lp = HalfspacePolytope(np.vstack([A, cap]), np.concatenate([p.b, [max_radius]]))
    obj = np.zeros(d + 1)
    obj[-1] = 1.0
    res = lp_solve(lp, obj, "max")
    if not res.optimal:
        return -np.inf, None
    return res.optimum, res.witness[:d]


def has_interior(poly: HalfspacePolytope, tol: float = 1e-9) -> bool:
    radius, _ = chebyshev_center(poly)
    return radius > tol


def vertices_2d(poly: HalfspacePolytope) -> np.ndarray:
    """Counter-clockwise vertex cycle of a bounded 2-D polygon.

    Degenerate polygons come back as one or two points; an empty polygon as a
    ``(0, 2)`` array.
    """
    if poly.dim != 2:
        raise GeometryError("vertices_2d needs a 2-D polytope")
    feasible, _ = is_feasible(poly)
    if not feasible:
        return np.zeros((0, 2))
    for direction in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        if lp_solve(poly, np.array(direction, dtype=float), "max").status is LPStatus.UNBOUNDED:
            raise UnboundedPolytopeError("polygon is unbounded")
    p = poly.normalized()
    A, b = p.A, p.b
    keep = np.linalg.norm(A, axis=1) > 0
    A, b = A[keep], b[keep]
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    points = []
    k = A.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            m = np.array([A[i], A[j]])
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det) < 1e-12:
                continue
            pt = np.linalg.solve(m, np.array([b[i], b[j]]))
            if np.all(A @ pt <= b + 1e-9 * scale):
                points.append(pt)
    if not points:
        # feasible but no vertex found numerically: fall back to the LP witness
        _, w = is_feasible(poly)
        return np.array([w])
    pts = _dedupe(np.array(points), MERGE_TOL * scale)
    if len(pts) <= 2:
        return pts
    centroid = pts.mean(axis=0)
    angles = np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0])
    pts = pts[np.argsort(angles, kind="stable")]
    return _drop_collinear(pts, MERGE_TOL * scale)


def _dedupe(pts: np.ndarray, tol: float) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= max(tol, 1e-12) * 10 for q in out):
            out.append(p)
    return np.array(out)


def _drop_collinear(pts: np.ndarray, tol: float) -> np.ndarray:
    changed = True
    while changed and len(pts) > 2:
        changed = False
        n = len(pts)
        for i in range(n):
            a, p, c = pts[i - 1], pts[i], pts[(i + 1) % n]
            cross = (p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])
            if abs(cross) <= tol:
                pts = np.delete(pts, i, axis=0)
                changed = True
                break
    return pts


def polygon_area(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass(frozen=True)
class MonteCarlo:
    samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    threads: int = 1


EXACT_2D = "exact2d"
CHUNK = 25_000


def _hits(polys: Sequence[HalfspacePolytope], within: InputBox, mc: MonteCarlo) -> int:
    n_chunks = max(1, -(-mc.samples // CHUNK))
    seeds = np.random.SeedSequence(mc.seed).spawn(n_chunks)
    sizes = [CHUNK] * (n_chunks - 1) + [mc.samples - CHUNK * (n_chunks - 1)]

    def chunk(i: int) -> int:
        rng = np.random.default_rng(seeds[i])
        xs = within.sample(rng, sizes[i])
        inside = np.zeros(sizes[i], dtype=bool)
        for p in polys:
            inside |= p.contains_batch(xs)
        return int(inside.sum())

    if mc.threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(mc.threads) as pool:
            counts = list(pool.map(chunk, range(n_chunks)))
    else:
        counts = [chunk(i) for i in range(n_chunks)]
    return sum(counts)


def volume(poly: HalfspacePolytope, method=EXACT_2D, within: InputBox | None = None) -> float:
    return volume_of_union([poly], method, within)


def volume_of_union(
    polys: Sequence[HalfspacePolytope],
    method=EXACT_2D,
    within: InputBox | None = None,
    disjoint: bool = True,
) -> float:
    """Exact 2-D: sum of member areas, which assumes the members are disjoint
    up to measure zero; pass ``disjoint=False`` for the area of the true union.
    Monte Carlo: ``vol(within)`` times the fraction of samples in any member.
    """
    if isinstance(method, MonteCarlo):
        if within is None:
            raise GeometryError("Monte Carlo volume needs a bounding box")
        if not polys:
            return 0.0
        return within.volume() * _hits(polys, within, method) / method.samples
    if method != EXACT_2D:
        raise GeometryError(f"unknown volume method {method!r}")
    if not disjoint:
        return union_area_2d(polys, within)
    total = 0.0
    for p in polys:
        if within is not None:
            p = p.with_box(within)
        total += polygon_area(vertices_2d(p))
    return total


def union_area_2d(polys: Sequence[HalfspacePolytope], within: InputBox | None = None) -> float:
    """Area of the union of possibly overlapping convex polygons."""
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    shapes = []
    for p in polys:
        if within is not None:
            p = p.with_box(within)
        v = vertices_2d(p)
        if len(v) >= 3:
            shapes.append(Polygon(v))
    if not shapes:
        return 0.0
    return float(unary_union(shapes).area)


def mc_confidence_margin(fraction: float, samples: int, z: float = 2.5758293035489) -> float:
    """Half-width of the normal-approximation 99% interval for a hit fraction."""
    return z * float(np.sqrt(max(fraction * (1 - fraction), 0.25 / samples) / samples))
