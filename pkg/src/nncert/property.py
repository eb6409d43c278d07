"""Pre/postconditions, robustness specs and quantitative specs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Union

import numpy as np

SATISFY_TOL = 1e-9


class SpecError(ValueError):
    pass


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if ndim == 2 and arr.size == 0:
        arr = arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 0)
    if arr.ndim != ndim:
        raise SpecError(f"expected a {ndim}-D array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InputBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1)
        hi = _frozen(self.upper, 1)
        if lo.shape != hi.shape:
            raise SpecError("box bounds have different lengths")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise SpecError("box bounds must be finite")
        if np.any(lo > hi):
            raise SpecError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, center, radius: float) -> "InputBox":
        c = np.asarray(center, dtype=np.float64)
        return cls(c - radius, c + radius)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def split(self, dim: int, at: float | None = None) -> tuple["InputBox", "InputBox"]:
        if at is None:
            at = 0.5 * (self.lower[dim] + self.upper[dim])
        left_hi = self.upper.copy()
        left_hi[dim] = at
        right_lo = self.lower.copy()
        right_lo[dim] = at
        return InputBox(self.lower, left_hi), InputBox(right_lo, self.upper)

    def corners(self, limit: int = 1024) -> np.ndarray:
        """Box vertices (at most ``limit`` of them, in binary counting order)."""
        n = self.dim
        count = min(2**n, limit)
        bits = (np.arange(count)[:, None] >> np.arange(n)[None, :]) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class OutputPolytope:
    """Output constraint ``{y : A y <= b}``.

    A polytope with zero rows denotes the whole output space.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2)
        b = _frozen(self.b, 1)
        if A.shape[0] != b.shape[0]:
            raise SpecError("A and b have different row counts")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise SpecError("output polytope entries must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def everything(cls, output_dim: int) -> "OutputPolytope":
        return cls(np.zeros((0, output_dim)), np.zeros(0))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def check_dim(self, output_dim: int) -> None:
        if self.dim != output_dim:
            raise SpecError(f"postcondition has {self.dim} columns, network outputs {output_dim}")

    def slack(self, y) -> np.ndarray:
        """``b - A y``; non-negative entries are satisfied rows."""
        return self.b - self.A @ np.asarray(y, dtype=np.float64)

    def negate_row(self, i: int) -> "OutputPolytope":
        """The complement half-space of row ``i``, read as ``-a y <= -b`` (strict in intent)."""
        return OutputPolytope(-self.A[i : i + 1], -self.b[i : i + 1])

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True)
class RobustnessSpec:
    center: np.ndarray
    epsilon: float
    label: int
    norm: str = "linf"

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, 1))
        if not self.epsilon >= 0:
            raise SpecError("epsilon must be non-negative")
        if self.label < 0:
            raise SpecError("label must be a non-negative index")
        if self.norm != "linf":
            raise SpecError("only the linf norm is supported")


@dataclass(frozen=True)
class QuantitativeSpec:
    input: InputBox
    output: OutputPolytope
    proportion: float

    def __post_init__(self):
        if not 0.0 <= self.proportion <= 1.0:
            raise SpecError("proportion must lie in [0, 1]")
        if self.input.volume() <= 0:
            raise SpecError("input box must have non-zero volume")


def margin_polytope(output_dim: int, label: int, margin: float = 0.0) -> OutputPolytope:
    """Rows ``y_j - y_label <= -margin`` for every ``j != label``."""
    if not 0 <= label < output_dim:
        raise SpecError(f"label {label} out of range for {output_dim} outputs")
    rows = []
    for j in range(output_dim):
        if j == label:
            continue
        row = np.zeros(output_dim)
        row[j] = 1.0
        row[label] = -1.0
        rows.append(row)
    A = np.array(rows).reshape(len(rows), output_dim)
    return OutputPolytope(A, np.full(len(rows), -margin))


def robustness_to_polytope(spec: RobustnessSpec, output_dim: int) -> tuple[InputBox, OutputPolytope]:
    if spec.label >= output_dim:
        raise SpecError(f"label {spec.label} out of range for {output_dim} outputs")
    box = InputBox.around(spec.center, spec.epsilon)
    return box, margin_polytope(output_dim, spec.label)


def satisfies(y, post: OutputPolytope, tol: float = SATISFY_TOL) -> bool:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    post.check_dim(y.shape[0])
    return bool(np.all(post.A @ y <= post.b + tol))


@dataclass
class Problem:
    """A parsed spec file: input box, postcondition, optional proportion."""

    box: InputBox
    post: OutputPolytope
    proportion: float | None = None
    robustness: RobustnessSpec | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def quantitative(self) -> QuantitativeSpec:
        p = 0.0 if self.proportion is None else self.proportion
        return QuantitativeSpec(self.box, self.post, p)


def problem_from_dict(data: dict, output_dim: int) -> Problem:
    try:
        robustness = None
        if "robustness" in data:
            r = data["robustness"]
            robustness = RobustnessSpec(r["center"], float(r["epsilon"]), int(r["label"]))
            box, post = robustness_to_polytope(robustness, output_dim)
        else:
            ib = data["input_box"]
            box = InputBox(ib["lower"], ib["upper"])
            op = data["output_polytope"]
            A = np.array(op["A"], dtype=np.float64)
            if A.size == 0:
                A = A.reshape(0, output_dim)
            post = OutputPolytope(A, op["b"])
        post.check_dim(output_dim)
        proportion = data.get("proportion")
        if proportion is not None:
            proportion = float(proportion)
            if not 0.0 <= proportion <= 1.0:
                raise SpecError("proportion must lie in [0, 1]")
    except SpecError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"malformed spec ({exc!r})") from None
    return Problem(box, post, proportion, robustness, data)


def load_problem(source: Union[str, bytes, IO], output_dim: int) -> Problem:
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        data = json.loads(source)
    except json.JSONDecodeError as exc:
        raise SpecError(f"malformed JSON: {exc}") from None
    return problem_from_dict(data, output_dim)
