"""Convex feasible sets with closed-form Euclidean projections.

Only axis-aligned boxes and Euclidean balls are supported. Both admit exact
projections, which is all Greedy Projection needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Union

import numpy as np

MEMBERSHIP_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when a point does not live in the set's ambient space."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _as_vector(self.lower, "lower")
        hi = _as_vector(self.upper, "upper")
        if lo.shape != hi.shape:
            raise DimensionError("lower and upper bounds differ in dimension")
        if not np.all(lo <= hi):
            raise ValueError("box requires lower <= upper componentwise")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dimension(self) -> int:
        return self.lower.size

    def to_dict(self) -> dict:
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _as_vector(self.center, "center")
        if not np.all(np.isfinite(c)):
            raise ValueError("ball center must be finite")
        r = float(self.radius)
        if not (r > 0 and np.isfinite(r)):
            raise ValueError(f"ball radius must be positive and finite, got {self.radius}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @property
    def dimension(self) -> int:
        return self.center.size

    def to_dict(self) -> dict:
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


FeasibleSet = Union[Box, Ball]


def _check_point(fset: FeasibleSet, point) -> np.ndarray:
    x = _as_vector(point, "point")
    if x.size != fset.dimension:
        raise DimensionError(
            f"point has dimension {x.size}, feasible set has dimension {fset.dimension}"
        )
    return x


def project(fset: FeasibleSet, point) -> np.ndarray:
    """Euclidean projection of ``point`` onto ``fset``.

    Boxes clamp each coordinate; balls rescale the offset from the centre
    radially. Points already inside are returned unchanged.
    """
    x = _check_point(fset, point)
    if isinstance(fset, Box):
        return np.minimum(np.maximum(x, fset.lower), fset.upper)
    offset = x - fset.center
    dist = np.linalg.norm(offset)
    if dist <= fset.radius:
        return x.copy()
    return fset.center + offset * (fset.radius / dist)


def contains(fset: FeasibleSet, point, tol: float = 0.0) -> bool:
    """True iff ``point`` violates no constraint of ``fset`` by more than ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = _check_point(fset, point)
    if isinstance(fset, Box):
        return bool(np.all(x >= fset.lower - tol) and np.all(x <= fset.upper + tol))
    return bool(np.linalg.norm(x - fset.center) <= fset.radius + tol)


def _broadcast(value, dimension: int | None, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if dimension is None:
            raise ValueError(f"scalar {name} needs an explicit dimension")
        return np.full(dimension, float(arr))
    return _as_vector(arr, name)


def from_dict(spec: Mapping[str, Any], dimension: int | None = None) -> FeasibleSet:
    """Build a feasible set from ``{"type": "box"|"ball", ...}``.

    Scalar bounds/centres are broadcast to ``dimension``. Unknown keys are
    rejected.
    """
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind == "box":
        allowed = {"lower", "upper"}
    elif kind == "ball":
        allowed = {"center", "radius"}
    else:
        raise ValueError(f"feasible set type must be 'box' or 'ball', got {kind!r}")
    extra = set(spec) - allowed
    missing = allowed - set(spec)
    if extra:
        raise ValueError(f"unknown keys for {kind} set: {sorted(extra)}")
    if missing:
        raise ValueError(f"missing keys for {kind} set: {sorted(missing)}")

    if kind == "box":
        fset: FeasibleSet = Box(
            _broadcast(spec["lower"], dimension, "lower"),
            _broadcast(spec["upper"], dimension, "upper"),
        )
    else:
        fset = Ball(_broadcast(spec["center"], dimension, "center"), spec["radius"])
    if dimension is not None and fset.dimension != dimension:
        raise DimensionError(f"feasible set has dimension {fset.dimension}, expected {dimension}")
    return fset
