"""Hinge-relaxed logical constraints.

Each constraint maps a point (or a batch of points, one per row) to a
non-negative violation value that is zero exactly on the feasible set,
together with its analytic (sub)gradient.

At a hinge boundary the gradient is taken to be zero, so feasible points are
never moved by gradient-based corrections. The same convention is used at the
centre of a ball, where the radial direction is undefined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np


class ConstraintError(ValueError):
    """Raised for malformed constraints or dimension mismatches."""


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ConstraintError(
            f"expected points of dimension {dim}, got array of shape {np.shape(x)}"
        )
    return arr, single


def _vector(values, name: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConstraintError(f"{name} must be a numeric vector, got {values!r}") from exc
    if arr.ndim != 1 or arr.size == 0:
        raise ConstraintError(f"{name} must be a non-empty 1-d vector, got {values!r}")
    if not np.all(np.isfinite(arr)):
        raise ConstraintError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _scalar(value, name: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError) as exc:
        raise ConstraintError(f"{name} must be a number, got {value!r}") from exc
    if not np.isfinite(out):
        raise ConstraintError(f"{name} must be finite")
    return out


def _radial(x: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances to ``center`` and unit directions away from it (zero at the centre)."""
    diff = x - center
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0.0, dist, 1.0)
    unit = diff / safe[:, None]
    unit[dist == 0.0] = 0.0
    return dist, unit


class Constraint:
    """Base class. Subclasses implement ``_violation`` and ``_gradient`` on (n, d) arrays."""

    dim: int

    def violation(self, x) -> np.ndarray | float:
        pts, single = _as_points(x, self.dim)
        out = self._violation(pts)
        return float(out[0]) if single else out

    def gradient(self, x) -> np.ndarray:
        pts, single = _as_points(x, self.dim)
        out = self._gradient(pts)
        return out[0] if single else out

    def is_satisfied(self, x, tol: float = 0.0) -> np.ndarray | bool:
        v = self.violation(x)
        if np.ndim(v) == 0:
            return bool(v <= tol)
        return v <= tol

    # Subclass hooks ---------------------------------------------------------
    def _violation(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_config(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class HalfSpace(Constraint):
    """Feasible set ``{x : a @ x >= b}``; violation ``max(0, b - a @ x)``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = _vector(self.a, "a")
        if not np.linalg.norm(a) > 0.0:
            raise ConstraintError("halfspace normal 'a' must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", _scalar(self.b, "b"))

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def _violation(self, x):
        return np.maximum(0.0, self.b - x @ self.a)

    def _gradient(self, x):
        active = (self.b - x @ self.a) > 0.0
        return np.where(active[:, None], -self.a[None, :], 0.0)

    def to_config(self):
        return {"type": "halfspace", "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True, eq=False)
class OutsideBall(Constraint):
    """Obstacle: feasible set ``{x : ||x - c|| >= r}``; violation ``max(0, r - ||x - c||)``."""

    c: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "c", _vector(self.c, "c"))
        r = _scalar(self.r, "r")
        if r < 0.0:
            raise ConstraintError("ball radius must be >= 0")
        object.__setattr__(self, "r", r)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def _violation(self, x):
        dist, _ = _radial(x, self.c)
        return np.maximum(0.0, self.r - dist)

    def _gradient(self, x):
        dist, unit = _radial(x, self.c)
        active = (self.r - dist) > 0.0
        return np.where(active[:, None], -unit, 0.0)

    def to_config(self):
        return {"type": "outside_ball", "c": self.c.tolist(), "r": self.r}


@dataclass(frozen=True, eq=False)
class InsideBall(Constraint):
    """Feasible set ``{x : ||x - c|| <= r}``; violation ``max(0, ||x - c|| - r)``."""

    c: np.ndarray
    r: float

    def __post_init__(self):
        object.__setattr__(self, "c", _vector(self.c, "c"))
        r = _scalar(self.r, "r")
        if r < 0.0:
            raise ConstraintError("ball radius must be >= 0")
        object.__setattr__(self, "r", r)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def _violation(self, x):
        dist, _ = _radial(x, self.c)
        return np.maximum(0.0, dist - self.r)

    def _gradient(self, x):
        dist, unit = _radial(x, self.c)
        active = (dist - self.r) > 0.0
        return np.where(active[:, None], unit, 0.0)

    def to_config(self):
        return {"type": "inside_ball", "c": self.c.tolist(), "r": self.r}


@dataclass(frozen=True, eq=False)
class Annulus(Constraint):
    """Ring ``r_min <= ||x - c|| <= r_max``, relaxed as the sum of the inner and outer hinges."""

    c: np.ndarray
    r_min: float
    r_max: float

    def __post_init__(self):
        object.__setattr__(self, "c", _vector(self.c, "c"))
        r_min = _scalar(self.r_min, "r_min")
        r_max = _scalar(self.r_max, "r_max")
        if not 0.0 < r_min < r_max:
            raise ConstraintError(
                f"annulus needs 0 < r_min < r_max, got r_min={r_min}, r_max={r_max}"
            )
        object.__setattr__(self, "r_min", r_min)
        object.__setattr__(self, "r_max", r_max)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def _violation(self, x):
        dist, _ = _radial(x, self.c)
        return np.maximum(0.0, self.r_min - dist) + np.maximum(0.0, dist - self.r_max)

    def _gradient(self, x):
        dist, unit = _radial(x, self.c)
        inner = (self.r_min - dist) > 0.0
        outer = (dist - self.r_max) > 0.0
        return np.where(inner[:, None], -unit, 0.0) + np.where(outer[:, None], unit, 0.0)

    def to_config(self):
        return {"type": "annulus", "c": self.c.tolist(), "r_min": self.r_min, "r_max": self.r_max}


@dataclass(frozen=True, eq=False)
class Conjunction(Constraint):
    """Logical AND, relaxed as the sum of the children's violations."""

    children: tuple[Constraint, ...]

    def __post_init__(self):
        children = tuple(self.children)
        if not children:
            raise ConstraintError("conjunction needs at least one child")
        dims = {ch.dim for ch in children}
        if len(dims) != 1:
            raise ConstraintError(f"conjunction children disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "children", children)

    @property
    def dim(self) -> int:
        return self.children[0].dim

    def _violation(self, x):
        total = self.children[0]._violation(x)
        for ch in self.children[1:]:
            total = total + ch._violation(x)
        return total

    def _gradient(self, x):
        total = self.children[0]._gradient(x)
        for ch in self.children[1:]:
            total = total + ch._gradient(x)
        return total

    def to_config(self):
        return {"type": "all_of", "children": [ch.to_config() for ch in self.children]}


# Functional interface --------------------------------------------------------

def evaluate(c: Constraint, x) -> np.ndarray | float:
    return c.violation(x)


def gradient(c: Constraint, x) -> np.ndarray:
    return c.gradient(x)


def is_satisfied(c: Constraint, x, tol: float = 0.0) -> np.ndarray | bool:
    if tol < 0:
        raise ConstraintError("tol must be >= 0")
    return c.is_satisfied(x, tol)


def _origin(node: Mapping, dim: int | None) -> np.ndarray:
    if "c" in node:
        return node["c"]
    if dim is None:
        raise ConstraintError(f"{node.get('type')} needs a centre 'c' (or an explicit 'dim')")
    return np.zeros(dim)


def parse_constraint(spec: Mapping[str, Any], dim: int | None = None) -> Constraint:
    """Build a constraint tree from a plain config mapping.

    Accepted ``type`` tags: ``halfspace`` (a, b), ``outside_ball`` / ``inside_ball``
    (c, r), ``annulus`` (c, r_min, r_max) and ``all_of`` (children). A missing
    centre defaults to the origin when ``dim`` is known, either from the caller
    or from a ``dim`` key in the node. If ``dim`` is given, the resulting tree is
    checked against it.
    """
    if not isinstance(spec, Mapping):
        raise ConstraintError(f"constraint spec must be a mapping, got {type(spec).__name__}")
    if "dim" in spec:
        dim = int(spec["dim"])
    kind = spec.get("type")
    try:
        if kind == "halfspace":
            out = HalfSpace(spec["a"], spec["b"])
        elif kind == "outside_ball":
            out = OutsideBall(_origin(spec, dim), spec["r"])
        elif kind == "inside_ball":
            out = InsideBall(_origin(spec, dim), spec["r"])
        elif kind == "annulus":
            out = Annulus(_origin(spec, dim), spec["r_min"], spec["r_max"])
        elif kind == "all_of":
            children = spec.get("children")
            if not isinstance(children, Sequence) or isinstance(children, (str, bytes)):
                raise ConstraintError("'all_of' needs a list of children")
            out = Conjunction(tuple(parse_constraint(ch, dim) for ch in children))
        else:
            raise ConstraintError(f"unknown constraint type {kind!r}")
    except KeyError as exc:
        raise ConstraintError(f"constraint {kind!r} is missing field {exc.args[0]!r}") from None
    if dim is not None and out.dim != dim:
        raise ConstraintError(f"constraint has dimension {out.dim}, expected {dim}")
    return out


def leaves(c: Constraint) -> list[Constraint]:
    """Flatten nested conjunctions into their primitive hinges."""
    if isinstance(c, Conjunction):
        return [leaf for ch in c.children for leaf in leaves(ch)]
    return [c]
