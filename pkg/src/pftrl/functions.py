"""Symbolic convex scalar functions on box domains.

Every function is one of three closed forms (constant, affine, separable
quadratic), so values, subgradients and Lipschitz constants on a box are all
computed exactly.  Sums and scalar multiples of these forms stay inside the
quadratic-diagonal family, which is what the penalty bookkeeping relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "BoxDomain",
    "Constant",
    "Affine",
    "QuadraticDiag",
    "ScalarFunc",
    "DimensionError",
    "evaluate",
    "evaluate_grid",
    "subgrad",
    "lipschitz_on_box",
    "coefficients",
    "from_coefficients",
    "minimum_on_box",
]


class DimensionError(ValueError):
    """A point or coefficient vector has the wrong number of coordinates."""


def _as_tuple(values: ArrayLike) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lo, hi = _as_tuple(self.lower), _as_tuple(self.upper)
        if len(lo) != len(hi) or not lo:
            raise DimensionError("lower and upper must be non-empty and of equal length")
        if not all(np.isfinite(lo)) or not all(np.isfinite(hi)):
            raise ValueError("box bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"need lower < upper in every coordinate, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, lo: float, hi: float) -> BoxDomain:
        return cls((lo,), (hi,))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> NDArray[np.float64]:
        return np.array(self.lower)

    @property
    def hi(self) -> NDArray[np.float64]:
        return np.array(self.upper)

    @property
    def center(self) -> NDArray[np.float64]:
        return 0.5 * (self.lo + self.hi)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def corners(self) -> NDArray[np.float64]:
        """All 2**n vertices, one per row."""
        grids = np.meshgrid(*[(a, b) for a, b in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def project(self, x: ArrayLike) -> NDArray[np.float64]:
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def contains(self, x: ArrayLike, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def grid_axes(self, points_per_axis: int) -> list[NDArray[np.float64]]:
        return [np.linspace(a, b, points_per_axis) for a, b in zip(self.lower, self.upper)]

    def grid(self, points_per_axis: int) -> NDArray[np.float64]:
        """Uniform grid in lexicographic order, shape (points_per_axis**n, n)."""
        mesh = np.meshgrid(*self.grid_axes(points_per_axis), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def grid_spacing(self, points_per_axis: int) -> float:
        return float(np.max((self.hi - self.lo) / (points_per_axis - 1)))


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Affine:
    slope: tuple[float, ...]
    intercept: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "slope", _as_tuple(self.slope))
        object.__setattr__(self, "intercept", float(self.intercept))


@dataclass(frozen=True)
class QuadraticDiag:
    """``sum_d diag[d] * x[d]**2 + <linear, x> + intercept`` with ``diag >= 0``."""

    diag: tuple[float, ...]
    linear: tuple[float, ...]
    intercept: float = 0.0

    def __post_init__(self) -> None:
        diag, linear = _as_tuple(self.diag), _as_tuple(self.linear)
        if len(diag) != len(linear):
            raise DimensionError("diag and linear must have equal length")
        if any(d < 0 for d in diag):
            raise ValueError("diag must be nonnegative for convexity")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "intercept", float(self.intercept))


ScalarFunc = Union[Constant, Affine, QuadraticDiag]


def _dim_of(func: ScalarFunc) -> int | None:
    if isinstance(func, Constant):
        return None
    if isinstance(func, Affine):
        return len(func.slope)
    return len(func.diag)


def coefficients(func: ScalarFunc, n: int) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """Return ``(diag, linear, intercept)`` with vectors of length ``n``."""
    d = _dim_of(func)
    if d is not None and d != n:
        raise DimensionError(f"function has dimension {d}, expected {n}")
    if isinstance(func, Constant):
        return np.zeros(n), np.zeros(n), func.value
    if isinstance(func, Affine):
        return np.zeros(n), np.array(func.slope), func.intercept
    return np.array(func.diag), np.array(func.linear), func.intercept


def from_coefficients(diag: ArrayLike, linear: ArrayLike, intercept: float) -> ScalarFunc:
    """Narrowest variant representing the given coefficients."""
    diag = np.asarray(diag, dtype=float)
    linear = np.asarray(linear, dtype=float)
    if np.any(diag != 0):
        return QuadraticDiag(diag, linear, intercept)
    if np.any(linear != 0):
        return Affine(linear, intercept)
    return Constant(intercept)


def _check_point(func: ScalarFunc, x: ArrayLike) -> NDArray[np.float64]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = _dim_of(func)
    if x.ndim != 1 or (d is not None and x.shape[0] != d):
        raise DimensionError(f"point of shape {x.shape} does not match function dimension {d}")
    return x


def evaluate(func: ScalarFunc, x: ArrayLike) -> float:
    x = _check_point(func, x)
    diag, linear, c = coefficients(func, x.shape[0])
    return float(diag @ (x * x) + linear @ x + c)


def evaluate_grid(func: ScalarFunc, points: NDArray[np.float64]) -> NDArray[np.float64]:
    """Vectorised evaluation at the rows of ``points``."""
    diag, linear, c = coefficients(func, points.shape[1])
    return (points * points) @ diag + points @ linear + c


def subgrad(func: ScalarFunc, x: ArrayLike) -> NDArray[np.float64]:
    x = _check_point(func, x)
    diag, linear, _ = coefficients(func, x.shape[0])
    return 2.0 * diag * x + linear


def lipschitz_on_box(func: ScalarFunc, box: BoxDomain) -> float:
    """Smallest Euclidean Lipschitz constant of ``func`` on ``box``.

    The gradient is separable, so the sup of its norm is attained coordinate by
    coordinate at a box endpoint.
    """
    diag, linear, _ = coefficients(func, box.dim)
    at_lo = np.abs(2.0 * diag * box.lo + linear)
    at_hi = np.abs(2.0 * diag * box.hi + linear)
    return float(np.linalg.norm(np.maximum(at_lo, at_hi)))


def minimum_on_box(func: ScalarFunc, box: BoxDomain) -> tuple[NDArray[np.float64], float]:
    """Exact minimiser and minimum of a separable convex quadratic on a box."""
    diag, linear, c = coefficients(func, box.dim)
    x = np.where(linear > 0, box.lo, box.hi)
    x = np.where(linear == 0, np.clip(0.0, box.lo, box.hi), x)
    curved = diag > 0
    x[curved] = np.clip(-linear[curved] / (2.0 * diag[curved]), box.lo[curved], box.hi[curved])
    return x, float(diag @ (x * x) + linear @ x + c)
