"""Running-average hinge penalties and the constants that size the penalty weight.

The round-``tau`` penalty is

    h_tau(x) = sum_j max{0, (1/tau) sum_{i<=tau} g_i^j(x)}

and because every ``g`` is a separable quadratic, each running average is
itself one.  ``PenaltyState`` keeps the running sums plus the averaged
coefficients of every prefix, so ``h_tau`` costs O(m) and the prefix penalty
``sum_{i<=tau} h_i`` costs O(tau m).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .functions import (
    BoxDomain,
    DimensionError,
    ScalarFunc,
    coefficients,
    evaluate,
    from_coefficients,
)
from .model import ProblemInstance

__all__ = [
    "PenaltyState",
    "GammaCertificate",
    "ConditionViolated",
    "NoBoundaryError",
    "push_constraints",
    "eval_h",
    "eval_prefix_penalty",
    "prefix_penalty_grid",
    "max_average_grid",
    "estimate_k_tau",
    "gamma_threshold",
    "compute_E_L",
    "slater_margin",
    "slater_search",
    "k_schedule",
    "gamma_certificate",
    "ACTIVE_TOL",
]

ACTIVE_TOL = 1e-9
ZERO_TOL = 1e-12
# Bounded working set for grid evaluations, in float64 entries.
_CHUNK = 4_000_000


class ConditionViolated(ValueError):
    """The penalty-growth requirement fails, so no finite threshold exists."""


class NoBoundaryError(ValueError):
    """The prefix-feasible set is empty or the whole box."""


class _History:
    """Append-only coefficient buffers shared by successive states."""

    _fields = ("diag", "linear", "intercept", "sum_diag", "sum_linear", "sum_intercept")

    def __init__(self, m: int, n: int, capacity: int = 64) -> None:
        self.diag = np.empty((capacity, m, n))
        self.linear = np.empty((capacity, m, n))
        self.intercept = np.empty((capacity, m))
        self.sum_diag = np.empty((capacity, m, n))
        self.sum_linear = np.empty((capacity, m, n))
        self.sum_intercept = np.empty((capacity, m))
        self.length = 0

    def append(self, sum_diag: NDArray, sum_linear: NDArray, sum_intercept: NDArray) -> None:
        if self.length == self.diag.shape[0]:
            grow = 2 * self.diag.shape[0]
            for name in self._fields:
                old = getattr(self, name)
                new = np.empty((grow,) + old.shape[1:])
                new[: self.length] = old[: self.length]
                setattr(self, name, new)
        k = self.length
        tau = k + 1
        self.sum_diag[k], self.sum_linear[k], self.sum_intercept[k] = sum_diag, sum_linear, sum_intercept
        self.diag[k] = sum_diag / tau
        self.linear[k] = sum_linear / tau
        self.intercept[k] = sum_intercept / tau
        self.length += 1

    def copy_prefix(self, tau: int) -> _History:
        m, n = self.intercept.shape[1], self.diag.shape[2]
        out = _History(m, n, capacity=max(64, 2 * tau))
        for name in self._fields:
            getattr(out, name)[:tau] = getattr(self, name)[:tau]
        out.length = tau
        return out


@dataclass(frozen=True, eq=False)
class PenaltyState:
    """Running constraint sums after ``tau`` rounds.

    Instances behave as values: ``push`` returns a new state and never alters
    what an existing state reports.  Successive states share one history buffer
    until a branch forces a copy.
    """

    m: int
    n: int
    tau: int = 0
    sum_diag: NDArray[np.float64] = field(default=None, repr=False)  # type: ignore[assignment]
    sum_linear: NDArray[np.float64] = field(default=None, repr=False)  # type: ignore[assignment]
    sum_intercept: NDArray[np.float64] = field(default=None, repr=False)  # type: ignore[assignment]
    _history: _History = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError("need m >= 1 and n >= 1")
        if self.sum_diag is None:
            object.__setattr__(self, "sum_diag", np.zeros((self.m, self.n)))
            object.__setattr__(self, "sum_linear", np.zeros((self.m, self.n)))
            object.__setattr__(self, "sum_intercept", np.zeros(self.m))
            object.__setattr__(self, "_history", _History(self.m, self.n))

    @classmethod
    def empty(cls, m: int, n: int) -> PenaltyState:
        return cls(m=m, n=n)

    @classmethod
    def from_rounds(cls, rounds: Sequence[Sequence[ScalarFunc]], n: int) -> PenaltyState:
        state = cls.empty(len(rounds[0]), n)
        for g in rounds:
            state = state.push(g)
        return state

    def push(self, constraints: Sequence[ScalarFunc]) -> PenaltyState:
        return push_constraints(self, constraints)

    def prefix(self, tau: int) -> PenaltyState:
        """The state as it was after round ``tau``."""
        if not 0 <= tau <= self.tau:
            raise ValueError(f"prefix {tau} outside 0..{self.tau}")
        if tau == self.tau:
            return self
        if tau == 0:
            return PenaltyState.empty(self.m, self.n)
        h = self._history
        return PenaltyState(
            m=self.m,
            n=self.n,
            tau=tau,
            sum_diag=h.sum_diag[tau - 1].copy(),
            sum_linear=h.sum_linear[tau - 1].copy(),
            sum_intercept=h.sum_intercept[tau - 1].copy(),
            _history=h,
        )

    def select(self, j: int) -> PenaltyState:
        """The state restricted to constraint index ``j``."""
        h, k = self._history, self.tau
        sub = _History(1, self.n, capacity=max(64, k))
        for name in _History._fields:
            getattr(sub, name)[:k] = getattr(h, name)[:k, j : j + 1]
        sub.length = k
        return PenaltyState(
            m=1,
            n=self.n,
            tau=k,
            sum_diag=self.sum_diag[j : j + 1].copy(),
            sum_linear=self.sum_linear[j : j + 1].copy(),
            sum_intercept=self.sum_intercept[j : j + 1].copy(),
            _history=sub,
        )

    def averages(self, upto: int | None = None) -> tuple[NDArray, NDArray, NDArray]:
        """Averaged coefficients of prefixes ``1..upto``: shapes (upto, m, n), (upto, m, n), (upto, m)."""
        k = self.tau if upto is None else upto
        h = self._history
        return h.diag[:k], h.linear[:k], h.intercept[:k]

    def averaged_spec(self, j: int, tau: int | None = None) -> ScalarFunc:
        """Symbolic ``(1/tau) sum_{i<=tau} g_i^j`` as a ScalarFunc."""
        k = self.tau if tau is None else tau
        if k < 1:
            raise ValueError("no rounds pushed yet")
        h = self._history
        return from_coefficients(h.diag[k - 1, j], h.linear[k - 1, j], h.intercept[k - 1, j])

    def summed_spec(self, j: int) -> ScalarFunc:
        return from_coefficients(self.sum_diag[j], self.sum_linear[j], self.sum_intercept[j])


def push_constraints(state: PenaltyState, constraints: Sequence[ScalarFunc]) -> PenaltyState:
    if len(constraints) != state.m:
        raise ValueError(f"expected {state.m} constraint functions, got {len(constraints)}")
    coeffs = [coefficients(g, state.n) for g in constraints]
    sum_diag = state.sum_diag + np.array([c[0] for c in coeffs])
    sum_linear = state.sum_linear + np.array([c[1] for c in coeffs])
    sum_intercept = state.sum_intercept + np.array([c[2] for c in coeffs])
    tau = state.tau + 1

    history = state._history
    if history.length != state.tau:
        history = history.copy_prefix(state.tau)
    history.append(sum_diag, sum_linear, sum_intercept)
    return PenaltyState(
        m=state.m,
        n=state.n,
        tau=tau,
        sum_diag=sum_diag,
        sum_linear=sum_linear,
        sum_intercept=sum_intercept,
        _history=history,
    )


def _point(state: PenaltyState, x: ArrayLike) -> NDArray[np.float64]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (state.n,):
        raise DimensionError(f"point of shape {x.shape}, expected ({state.n},)")
    return x


def _averages_at(state: PenaltyState, x: NDArray, upto: int) -> NDArray[np.float64]:
    d, l, c = state.averages(upto)
    return d @ (x * x) + l @ x + c


def eval_h(state: PenaltyState, x: ArrayLike) -> float:
    if state.tau < 1:
        raise ValueError("h is undefined before the first round")
    x = _point(state, x)
    d, l, c = state.averages()
    vals = d[-1] @ (x * x) + l[-1] @ x + c[-1]
    return float(np.maximum(vals, 0.0).sum())


def eval_prefix_penalty(state: PenaltyState, x: ArrayLike) -> float:
    """``sum_{i<=tau} h_i(x)``."""
    if state.tau < 1:
        raise ValueError("prefix penalty is undefined before the first round")
    x = _point(state, x)
    return float(np.maximum(_averages_at(state, x, state.tau), 0.0).sum())


def _grid_reduce(
    state: PenaltyState,
    points: NDArray[np.float64],
    reduce: Callable[[NDArray], NDArray],
    combine: Callable[[NDArray, NDArray], NDArray],
) -> NDArray[np.float64]:
    """Reduce the (tau, m, N) array of prefix averages over its first two axes, in chunks."""
    d, l, c = state.averages()
    sq = points * points
    step = max(1, _CHUNK // max(1, points.shape[0] * state.m))
    out = None
    for start in range(0, state.tau, step):
        sl = slice(start, start + step)
        vals = np.einsum("imn,pn->imp", d[sl], sq) + np.einsum("imn,pn->imp", l[sl], points)
        vals += c[sl][:, :, None]
        part = reduce(vals.reshape(-1, points.shape[0]))
        out = part if out is None else combine(out, part)
    return out


def prefix_penalty_grid(state: PenaltyState, points: NDArray[np.float64]) -> NDArray[np.float64]:
    return _grid_reduce(state, points, lambda v: np.maximum(v, 0.0).sum(axis=0), np.add)


def max_average_grid(state: PenaltyState, points: NDArray[np.float64]) -> NDArray[np.float64]:
    """``max_{i,j} (1/i) sum_{k<=i} g_k^j`` at every row of ``points``."""
    return _grid_reduce(state, points, lambda v: v.max(axis=0), np.maximum)


def _active_counts(state: PenaltyState, points: NDArray[np.float64], tol: float) -> NDArray[np.int64]:
    return _grid_reduce(state, points, lambda v: (v >= -tol).sum(axis=0), np.add)


def _boundary_points(
    state: PenaltyState, box: BoxDomain, points_per_axis: int
) -> NDArray[np.float64]:
    """Points on the boundary of the prefix-feasible set, refined from grid transitions."""
    axes = box.grid_axes(points_per_axis)
    shape = tuple(len(a) for a in axes)
    pts = box.grid(points_per_axis)
    zero = (prefix_penalty_grid(state, pts) <= ZERO_TOL).reshape(shape)
    if not zero.any():
        raise NoBoundaryError("prefix-feasible set is empty on the grid")
    if zero.all():
        raise NoBoundaryError("prefix-feasible set covers the whole box")

    inside, outside = [], []
    idx = np.arange(pts.shape[0]).reshape(shape)
    for axis in range(len(shape)):
        a = np.moveaxis(zero, axis, 0)
        ia = np.moveaxis(idx, axis, 0)
        fwd = a[:-1] & ~a[1:]
        bwd = ~a[:-1] & a[1:]
        inside += [ia[:-1][fwd], ia[1:][bwd]]
        outside += [ia[1:][fwd], ia[:-1][bwd]]
    p_in = pts[np.concatenate(inside)]
    p_out = pts[np.concatenate(outside)]

    # Bisection on each segment for the last point of zero penalty.
    for _ in range(64):
        mid = 0.5 * (p_in + p_out)
        ok = prefix_penalty_grid(state, mid) <= ZERO_TOL
        p_in = np.where(ok[:, None], mid, p_in)
        p_out = np.where(ok[:, None], p_out, mid)
    return p_in


def estimate_k_tau(
    state: PenaltyState,
    box: BoxDomain,
    points_per_axis: int = 2001,
    tol_active: float = ACTIVE_TOL,
) -> int:
    """Minimum number of active prefix constraints over the boundary of the prefix-feasible set."""
    if state.n > 2:
        raise DimensionError("k_tau estimation supports dimension 1 or 2")
    if points_per_axis < 100:
        raise ValueError("need at least 100 grid points per axis")
    if state.tau < 1:
        raise ValueError("no rounds pushed yet")
    boundary = _boundary_points(state, box, points_per_axis)
    return int(_active_counts(state, boundary, tol_active).min())


def gamma_threshold(E: float, L: float, beta: float) -> float:
    """Penalty weight above which iterates stay prefix-feasible: ``(E + L + 1) / beta``."""
    if not beta > 0:
        raise ConditionViolated(f"Condition 2 violated: growth rate beta={beta} is not positive")
    return (E + L + 1.0) / beta


def compute_E_L(instance: ProblemInstance, z: ArrayLike, tight: bool = False) -> tuple[float, float]:
    """Regulariser gap ``E`` and loss gap ``L`` relative to the point ``z``.

    ``E = max_y ||y||^2 - ||z||^2`` over the box.  ``L`` is ``L_f * diam(D)`` by
    default; ``tight=True`` returns ``max_{y,i} f_i(y) - f_i(z)`` instead, which is
    exact because a convex function peaks at a box corner.
    """
    box = instance.domain
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not box.contains(z, tol=0.0):
        raise ValueError(f"z={z} lies outside the domain")
    corners = box.corners()
    E = float(np.max(np.sum(corners * corners, axis=1)) - z @ z)
    if not tight:
        return E, instance.loss_lipschitz * box.diameter
    funcs = instance.losses if isinstance(instance.losses, tuple) else (instance.losses,)
    L = max(max(evaluate(f, y) for y in corners) - evaluate(f, z) for f in funcs)
    return E, float(L)


def slater_margin(state: PenaltyState, z: ArrayLike) -> float:
    """``-max_{i,j}`` of the prefix averages at ``z``; positive iff ``z`` is a common Slater point."""
    if state.tau < 1:
        raise ValueError("no rounds pushed yet")
    z = _point(state, z)
    return float(-np.max(_averages_at(state, z, state.tau)))


def slater_search(
    state: PenaltyState, box: BoxDomain, points_per_axis: int = 201
) -> tuple[NDArray[np.float64], float]:
    """Grid point with the largest common Slater margin and that margin."""
    pts = box.grid(points_per_axis)
    margins = -max_average_grid(state, pts)
    k = int(np.argmax(margins))
    return pts[k], float(margins[k])


def k_schedule(
    state: PenaltyState, box: BoxDomain, points_per_axis: int = 2001
) -> list[tuple[int, int | None]]:
    """``k_tau`` at tau = 1, 2, 4, ... and the final tau.

    ``None`` marks prefixes whose feasible set is the whole box, where no
    constraint is active and the growth requirement is vacuous.
    """
    taus = sorted({2**e for e in range(int(np.log2(state.tau)) + 1)} | {state.tau})
    out: list[tuple[int, int | None]] = []
    for tau in taus:
        try:
            out.append((tau, estimate_k_tau(state.prefix(tau), box, points_per_axis)))
        except NoBoundaryError as exc:
            if "empty" in str(exc):
                raise
            out.append((tau, None))
    return out


@dataclass(frozen=True)
class GammaCertificate:
    E: float
    L: float
    eta: float
    beta: float
    k_schedule: tuple[tuple[int, int | None], ...]
    z: tuple[float, ...]
    t_eps: int = 0

    @property
    def gamma0(self) -> float:
        return gamma_threshold(self.E, self.L, self.beta)

    def as_dict(self) -> dict:
        return {
            "E": self.E,
            "L": self.L,
            "eta": self.eta,
            "beta": self.beta,
            "k_schedule": [list(p) for p in self.k_schedule],
            "z": list(self.z),
            "t_eps": self.t_eps,
            "gamma0": self.gamma0 if self.beta > 0 else None,
        }


def gamma_certificate(
    instance: ProblemInstance,
    state: PenaltyState,
    points_per_axis: int = 2001,
    slater_points: int = 201,
    tight_L: bool = False,
) -> GammaCertificate:
    """Assemble E, L, eta, beta and the k_tau schedule for a realised constraint stream.

    ``beta`` is estimated as ``eta * min_tau k_tau / tau`` over the sampled prefixes.
    """
    z, eta = slater_search(state, instance.domain, slater_points)
    if eta <= 0:
        raise ConditionViolated(f"no common Slater point on the grid (best margin {eta:.3g})")
    schedule = k_schedule(state, instance.domain, points_per_axis)
    ratios = [k / tau for tau, k in schedule if k is not None]
    beta = eta * min(ratios) if ratios else eta
    E, L = compute_E_L(instance, z, tight=tight_L)
    return GammaCertificate(E=E, L=L, eta=eta, beta=beta, k_schedule=tuple(schedule), z=tuple(z))
