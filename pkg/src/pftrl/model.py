"""Problem instances, regularisers and the run trace shared by every algorithm."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .functions import BoxDomain, ScalarFunc, evaluate, lipschitz_on_box

__all__ = [
    "ScaledSqNorm",
    "ConstraintStream",
    "FixedStream",
    "ProblemInstance",
    "RunTrace",
    "TraceInvariantError",
    "cumulative_violation",
]


@dataclass(frozen=True)
class ScaledSqNorm:
    """The regulariser ``R_tau(x) = sqrt(tau) * ||x||^2``."""

    def value(self, tau: int, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(tau) * (x @ x))

    def weight(self, tau: int) -> float:
        return float(np.sqrt(tau))

    def modulus(self, tau: int) -> float:
        """Strong-convexity modulus, ``2 sqrt(tau)``."""
        return 2.0 * float(np.sqrt(tau))


class ConstraintStream(Protocol):
    m: int

    def at(self, tau: int) -> list[ScalarFunc]: ...

    def lipschitz(self, box: BoxDomain) -> float: ...


@dataclass(frozen=True)
class FixedStream:
    """A constraint stream given explicitly, one list of ``m`` functions per round.

    Rounds past the end of ``rounds`` repeat the last entry, so a single entry
    describes a time-invariant constraint set.
    """

    rounds: tuple[tuple[ScalarFunc, ...], ...]

    def __post_init__(self) -> None:
        rounds = tuple(tuple(r) for r in self.rounds)
        if not rounds:
            raise ValueError("need at least one round")
        if len({len(r) for r in rounds}) != 1 or not rounds[0]:
            raise ValueError("every round must carry the same positive number of constraints")
        object.__setattr__(self, "rounds", rounds)

    @classmethod
    def invariant(cls, *funcs: ScalarFunc) -> FixedStream:
        return cls((tuple(funcs),))

    @property
    def m(self) -> int:
        return len(self.rounds[0])

    def at(self, tau: int) -> list[ScalarFunc]:
        if tau < 1:
            raise ValueError("rounds are numbered from 1")
        return list(self.rounds[min(tau, len(self.rounds)) - 1])

    def lipschitz(self, box: BoxDomain) -> float:
        return max(lipschitz_on_box(g, box) for r in self.rounds for g in r)


@dataclass(frozen=True)
class ProblemInstance:
    """Domain, loss sequence, constraint stream and penalty weight.

    ``losses`` is either one function used every round or an explicit sequence
    with one entry per round.
    """

    domain: BoxDomain
    losses: ScalarFunc | tuple[ScalarFunc, ...]
    constraints: ConstraintStream
    regularizer: ScaledSqNorm = field(default_factory=ScaledSqNorm)
    gamma: float = 0.0
    loss_lipschitz: float = field(default=float("nan"))
    constraint_lipschitz: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        if isinstance(self.losses, (list, tuple)):
            object.__setattr__(self, "losses", tuple(self.losses))
        if self.constraints.m < 1:
            raise ValueError("need at least one constraint")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if np.isnan(self.loss_lipschitz):
            funcs = self.losses if isinstance(self.losses, tuple) else (self.losses,)
            object.__setattr__(
                self, "loss_lipschitz", max(lipschitz_on_box(f, self.domain) for f in funcs)
            )
        if np.isnan(self.constraint_lipschitz):
            object.__setattr__(
                self, "constraint_lipschitz", self.constraints.lipschitz(self.domain)
            )

    @property
    def m(self) -> int:
        return self.constraints.m

    def loss_at(self, tau: int) -> ScalarFunc:
        if not isinstance(self.losses, tuple):
            return self.losses
        if tau > len(self.losses):
            raise IndexError(f"loss sequence has {len(self.losses)} rounds, asked for {tau}")
        return self.losses[tau - 1]

    def with_gamma(self, gamma: float) -> ProblemInstance:
        return replace(self, gamma=gamma)


class TraceInvariantError(AssertionError):
    pass


def cumulative_violation(constraint_values: NDArray[np.float64]) -> NDArray[np.float64]:
    """``V(tau) = sum_j max{0, sum_{i<=tau} g_i^j(x_i)}`` for every tau."""
    return np.maximum(np.cumsum(constraint_values, axis=0), 0.0).sum(axis=1)


@dataclass(frozen=True, eq=False)
class RunTrace:
    """Everything one run produced, round by round.

    Row ``i`` of each array describes round ``i + 1``: the action committed,
    then the loss, penalty and raw constraint values charged to it.
    """

    algorithm: str
    actions: NDArray[np.float64]
    loss_values: NDArray[np.float64]
    penalties: NDArray[np.float64]
    constraint_values: NDArray[np.float64]
    loss_funcs: tuple[ScalarFunc, ...]
    constraint_funcs: tuple[tuple[ScalarFunc, ...], ...]
    duals: NDArray[np.float64] | None = None
    regret: NDArray[np.float64] | None = None
    seed: int | None = None
    config_digest: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return int(self.loss_values.shape[0])

    @property
    def violation_h(self) -> NDArray[np.float64]:
        return np.cumsum(self.penalties)

    @property
    def violation_sum(self) -> NDArray[np.float64]:
        return cumulative_violation(self.constraint_values)

    def with_regret(self, regret: NDArray[np.float64]) -> RunTrace:
        return replace(self, regret=np.asarray(regret, dtype=float))

    def prefix(self, t: int) -> RunTrace:
        """The same run truncated to its first ``t`` rounds."""
        cut = slice(0, t)
        return replace(
            self,
            actions=self.actions[cut],
            loss_values=self.loss_values[cut],
            penalties=self.penalties[cut],
            constraint_values=self.constraint_values[cut],
            loss_funcs=self.loss_funcs[cut],
            constraint_funcs=self.constraint_funcs[cut],
            duals=None if self.duals is None else self.duals[cut],
            regret=None if self.regret is None else self.regret[cut],
        )

    def check_invariants(self, domain: BoxDomain, tol: float = 1e-9) -> None:
        t = self.horizon
        series: Sequence[NDArray[np.float64] | None] = (
            self.actions,
            self.penalties,
            self.constraint_values,
            self.duals,
            self.regret,
        )
        for s in series:
            if s is not None and s.shape[0] != t:
                raise TraceInvariantError("trace series lengths differ")
        if len(self.loss_funcs) != t or len(self.constraint_funcs) != t:
            raise TraceInvariantError("stored functions do not cover every round")
        if np.any(self.penalties < 0):
            raise TraceInvariantError("negative penalty value recorded")
        if np.any(self.actions < domain.lo - tol) or np.any(self.actions > domain.hi + tol):
            raise TraceInvariantError("an action left the domain box")
        if self.duals is not None and np.any(self.duals < 0):
            raise TraceInvariantError("negative dual variable")
        for i in (0, t // 2, t - 1):
            if t and abs(evaluate(self.loss_funcs[i], self.actions[i]) - self.loss_values[i]) > 1e-9:
                raise TraceInvariantError(f"loss value at round {i + 1} does not re-evaluate")
