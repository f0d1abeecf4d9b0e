"""Seeded constraint sequences and the checks that classify them.

Each constraint index ``j`` draws its round-``tau`` function from a finite
family according to a law.  Randomness is counter based: the uniform variate
for ``(seed, tau, j)`` is a hash of those three numbers, so any round can be
regenerated on its own and in any order.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray

from .functions import (
    Affine,
    BoxDomain,
    Constant,
    ScalarFunc,
    coefficients,
    evaluate_grid,
    from_coefficients,
    lipschitz_on_box,
)
from .penalty import (
    NoBoundaryError,
    PenaltyState,
    k_schedule,
    slater_search,
    _grid_reduce,
)

__all__ = [
    "IID",
    "Periodic",
    "ActivationRate",
    "Perturbed",
    "FamilySpec",
    "FamilyStream",
    "Condition2Result",
    "Condition3Result",
    "Partition",
    "PerturbedDecomposition",
    "ConditionReport",
    "uniform",
    "generate",
    "check_condition3",
    "check_condition2",
    "partition_constraints",
    "perturbed_decomposition",
    "condition_report",
    "paper_example_spec",
]


def uniform(seed: int, tau: int, j: int) -> float:
    """Deterministic variate in [0, 1) for one (seed, round, constraint) triple."""
    digest = hashlib.blake2b(f"{seed}:{tau}:{j}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


@dataclass(frozen=True)
class IID:
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-12):
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got {probs}")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class Periodic:
    """Member ``k`` (k >= 1) is emitted at multiples of ``periods[k-1]``; member 0 otherwise.

    When several periods divide ``tau`` the smallest ``k`` wins.
    """

    periods: tuple[int, ...]

    def __post_init__(self) -> None:
        periods = tuple(int(p) for p in self.periods)
        if not periods or any(p < 1 for p in periods):
            raise ValueError("periods must be positive integers")
        object.__setattr__(self, "periods", periods)


@dataclass(frozen=True)
class ActivationRate:
    """Member 1 is drawn with probability ``min{1, scale * c / tau^(1-c)}``, member 0 otherwise."""

    c: float
    scale: float = 0.1

    def __post_init__(self) -> None:
        if not 0 < self.c <= 1:
            raise ValueError("activation exponent c must lie in (0, 1]")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def probability(self, tau: int) -> float:
        return min(1.0, self.scale * self.c / tau ** (1.0 - self.c))


@dataclass(frozen=True)
class Perturbed:
    """The single family member shifted by an offset ``b_tau``.

    Offsets are i.i.d. uniform on ``[low, high]`` unless an explicit ``offsets``
    sequence is given (cycled).  ``bound`` is the declared upper bound on the
    offsets and defaults to ``high``.
    """

    low: float = 0.0
    high: float = 0.0
    bound: float | None = None
    offsets: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise ValueError("need low <= high")
        if self.bound is None:
            top = max(self.offsets) if self.offsets else self.high
            object.__setattr__(self, "bound", float(top))
        if self.offsets is not None:
            offs = tuple(float(b) for b in self.offsets)
            if not offs:
                raise ValueError("explicit offsets must be non-empty")
            if max(offs) > self.bound:
                raise ValueError("an explicit offset exceeds the declared bound")
            object.__setattr__(self, "offsets", offs)
        elif self.high > self.bound:
            raise ValueError("offset range exceeds the declared bound")

    def offset(self, seed: int, tau: int, j: int) -> float:
        if self.offsets is not None:
            return self.offsets[(tau - 1) % len(self.offsets)]
        return self.low + (self.high - self.low) * uniform(seed, tau, j)


Law = Union[IID, Periodic, ActivationRate, Perturbed]


@dataclass(frozen=True)
class FamilySpec:
    """Family of candidate functions for one constraint index and the law picking among them."""

    members: tuple[ScalarFunc, ...]
    law: Law
    limit_probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise ValueError("family needs at least one member")
        law = self.law
        expected = {
            IID: lambda: len(law.probs),
            Periodic: lambda: len(law.periods) + 1,
            ActivationRate: lambda: 2,
            Perturbed: lambda: 1,
        }[type(law)]()
        if len(members) != expected:
            raise ValueError(f"{type(law).__name__} law needs {expected} members, got {len(members)}")
        if self.limit_probs is not None:
            lp = tuple(float(p) for p in self.limit_probs)
            if len(lp) != len(members) or not math.isclose(sum(lp), 1.0, abs_tol=1e-9):
                raise ValueError("limit probabilities must match the family and sum to 1")
            object.__setattr__(self, "limit_probs", lp)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def dim(self) -> int:
        for a in self.members:
            if not isinstance(a, Constant):
                return len(a.slope if isinstance(a, Affine) else a.diag)
        return 1

    def index_at(self, tau: int, seed: int, j: int) -> int:
        law = self.law
        if isinstance(law, Perturbed):
            return 0
        if isinstance(law, Periodic):
            for k, period in enumerate(law.periods, start=1):
                if tau % period == 0:
                    return k
            return 0
        u = uniform(seed, tau, j)
        if isinstance(law, ActivationRate):
            return 1 if u < law.probability(tau) else 0
        k = int(np.searchsorted(np.cumsum(law.probs), u, side="right"))
        return min(k, self.size - 1)

    def function_at(self, tau: int, seed: int, j: int) -> ScalarFunc:
        base = self.members[self.index_at(tau, seed, j)]
        if isinstance(self.law, Perturbed):
            b = self.law.offset(seed, tau, j)
            d, l, c = coefficients(base, self.dim)
            return from_coefficients(d, l, c + b)
        return base

    def limit_frequencies(self) -> tuple[tuple[float, ...] | None, bool]:
        """Limit visit frequencies and whether they are exact (False means unknown)."""
        if self.limit_probs is not None:
            return self.limit_probs, True
        law = self.law
        if isinstance(law, IID):
            return law.probs, True
        if isinstance(law, Perturbed):
            return (1.0,), True
        if isinstance(law, ActivationRate):
            p = law.scale if law.c == 1 else 0.0
            return (1.0 - p, p), True
        period = reduce(math.lcm, law.periods)
        if period > 1_000_000:
            return None, False
        counts = np.zeros(self.size)
        for tau in range(1, period + 1):
            counts[self.index_at(tau, 0, 0)] += 1
        return tuple(counts / period), True

    def lipschitz(self, box: BoxDomain) -> float:
        return max(lipschitz_on_box(a, box) for a in self.members)


def generate(specs: Sequence[FamilySpec], tau: int, seed: int) -> list[ScalarFunc]:
    """The round-``tau`` constraint functions, one per family spec."""
    if tau < 1:
        raise ValueError("rounds are numbered from 1")
    return [spec.function_at(tau, seed, j) for j, spec in enumerate(specs)]


@dataclass(frozen=True)
class FamilyStream:
    """A seeded constraint stream over one family spec per constraint index."""

    specs: tuple[FamilySpec, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))

    @property
    def m(self) -> int:
        return len(self.specs)

    def at(self, tau: int) -> list[ScalarFunc]:
        return generate(self.specs, tau, self.seed)

    def lipschitz(self, box: BoxDomain) -> float:
        return max(s.lipschitz(box) for s in self.specs)

    def indices(self, horizon: int) -> NDArray[np.int64]:
        """Family index chosen at each round, shape (horizon, m)."""
        out = np.empty((horizon, self.m), dtype=np.int64)
        for j, spec in enumerate(self.specs):
            out[:, j] = [spec.index_at(tau, self.seed, j) for tau in range(1, horizon + 1)]
        return out

    def offsets(self, horizon: int, j: int) -> NDArray[np.float64]:
        law = self.specs[j].law
        if not isinstance(law, Perturbed):
            raise TypeError(f"constraint {j} is not perturbed")
        return np.array([law.offset(self.seed, tau, j) for tau in range(1, horizon + 1)])

    def penalty_state(self, horizon: int, n: int) -> PenaltyState:
        state = PenaltyState.empty(self.m, n)
        for tau in range(1, horizon + 1):
            state = state.push(self.at(tau))
        return state


def paper_example_spec(c: float) -> FamilySpec:
    """Constraint alternating between ``-0.01`` and ``x`` with activation exponent ``c``."""
    return FamilySpec((Constant(-0.01), Affine((1.0,), 0.0)), ActivationRate(c))


# ---------------------------------------------------------------- Condition 3


@dataclass(frozen=True)
class Condition3Result:
    verdict: bool
    margin: float
    eps: float
    t0: int
    limit_probs: tuple[float, ...]
    final_counts: tuple[int, ...]
    estimated: bool

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "margin": self.margin,
            "eps": self.eps,
            "t0": self.t0,
            "limit_probs": list(self.limit_probs),
            "final_counts": list(self.final_counts),
            "limit_estimated": self.estimated,
        }


def check_condition3(
    indices: NDArray[np.int64],
    n_members: int,
    eps: float,
    t0: int = 0,
    limit_probs: Sequence[float] | None = None,
) -> Condition3Result:
    """Do visit frequencies converge at rate ``eps / sqrt(tau)`` after ``t0``?

    ``margin = sup_{t0 < tau <= t, k} sqrt(tau) |p_{k,tau} - p_k|`` and the
    verdict is ``margin <= eps``.  Without limit frequencies the final
    empirical frequencies stand in, and the result is flagged as estimated.
    """
    indices = np.asarray(indices)
    horizon = indices.shape[0]
    if horizon <= t0:
        raise ValueError(f"horizon {horizon} must exceed t0={t0}")
    onehot = np.zeros((horizon, n_members))
    onehot[np.arange(horizon), indices] = 1.0
    counts = np.cumsum(onehot, axis=0)
    taus = np.arange(1, horizon + 1, dtype=float)
    freqs = counts / taus[:, None]
    estimated = limit_probs is None
    if estimated:
        warnings.warn("limit frequencies unknown; using final empirical frequencies", stacklevel=2)
        limit = freqs[-1]
    else:
        limit = np.asarray(limit_probs, dtype=float)
    dev = np.sqrt(taus[t0:, None]) * np.abs(freqs[t0:] - limit)
    margin = float(dev.max())
    return Condition3Result(
        verdict=margin <= eps,
        margin=margin,
        eps=eps,
        t0=t0,
        limit_probs=tuple(float(p) for p in limit),
        final_counts=tuple(int(v) for v in counts[-1]),
        estimated=estimated,
    )


# ---------------------------------------------------------------- Condition 2


@dataclass(frozen=True)
class Condition2Result:
    eta: float
    beta: float
    verdict: bool
    z: tuple[float, ...]
    k_schedule: tuple[tuple[int, int | None], ...]
    decay_slope: float | None
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "beta": self.beta,
            "verdict": self.verdict,
            "z": list(self.z),
            "k_schedule": [list(p) for p in self.k_schedule],
            "decay_slope": self.decay_slope,
            "reason": self.reason,
        }


BETA_FLOOR = 1e-6
DECAY_SLOPE = -0.5


def check_condition2(
    state: PenaltyState,
    box: BoxDomain,
    points_per_axis: int = 2001,
    slater_points: int = 201,
) -> Condition2Result:
    """Common Slater margin ``eta``, growth rate ``beta`` and the penalty-growth verdict.

    ``beta = eta * min_tau k_tau / tau`` over tau = 1, 2, 4, ..., t.  A finite
    horizon cannot show that ``beta`` stays away from zero, so besides
    ``beta >= 1e-6`` the verdict also requires that ``k_tau / tau`` does not
    trend to zero: the log-log slope of ``k_tau / tau`` against tau over the
    sampled prefixes with tau >= 8 must be at least -0.5.
    """
    if state.n > 2:
        raise ValueError("Condition 2 check supports dimension 1 or 2")
    z, eta = slater_search(state, box, slater_points)
    if eta <= 0:
        return Condition2Result(eta, 0.0, False, tuple(z), (), None, "no common Slater point on the grid")
    try:
        schedule = k_schedule(state, box, points_per_axis)
    except NoBoundaryError as exc:
        return Condition2Result(eta, 0.0, False, tuple(z), (), None, str(exc))
    defined = [(tau, k) for tau, k in schedule if k is not None]
    if not defined:
        return Condition2Result(eta, eta, True, tuple(z), tuple(schedule), None, "no prefix has a boundary")
    beta = eta * min(k / tau for tau, k in defined)
    tail = [(tau, k) for tau, k in defined if tau >= 8]
    slope = None
    if len(tail) >= 3:
        lt = np.log([tau for tau, _ in tail])
        lr = np.log([k / tau for tau, k in tail])
        slope = float(np.polyfit(lt, lr, 1)[0])
    reasons = []
    if beta < BETA_FLOOR:
        reasons.append(f"beta={beta:.3g} below {BETA_FLOOR}")
    if slope is not None and slope < DECAY_SLOPE:
        reasons.append(f"k_tau/tau decays (log-log slope {slope:.2f})")
    return Condition2Result(eta, beta, not reasons, tuple(z), tuple(schedule), slope, "; ".join(reasons))


# ---------------------------------------------------------------- partition


@dataclass(frozen=True)
class Partition:
    plus: tuple[int, ...]
    minus: tuple[int, ...]
    kappa: tuple[float, ...]
    kappa_ref: int
    final_curve: tuple[float, ...]
    worst_points: tuple[tuple[float, ...], ...]

    def as_dict(self) -> dict:
        return {
            "P_plus": list(self.plus),
            "P_minus": list(self.minus),
            "kappa": list(self.kappa),
            "kappa_ref": self.kappa_ref,
            "final_curve": list(self.final_curve),
            "worst_points": [list(p) for p in self.worst_points],
        }


def partition_constraints(
    state: PenaltyState,
    box: BoxDomain,
    points_per_axis: int = 2001,
    kappa: float | None = None,
    kappa_ref: int = 2500,
) -> Partition:
    """Split constraint indices by whether their prefix penalty grows like sqrt(t).

    For each j the curve ``sum_{i<=tau} max{0, (1/i) sum_k g_k^j}`` is followed at
    the grid point where its final value is largest.  ``j`` goes to ``P-`` when
    ``curve(t) <= kappa sqrt(t)``; by default ``kappa = curve(t_ref) / sqrt(t_ref)``
    with ``t_ref = min(kappa_ref, t)``.
    """
    pts = box.grid(points_per_axis)
    t = state.tau
    ref = min(kappa_ref, t)
    plus, minus, kappas, finals, worst = [], [], [], [], []
    for j in range(state.m):
        single = state.select(j)
        totals = _grid_reduce(single, pts, lambda v: np.maximum(v, 0.0).sum(axis=0), np.add)
        x = pts[int(np.argmax(totals))]
        avgs = single.averages()
        vals = avgs[0][:, 0] @ (x * x) + avgs[1][:, 0] @ x + avgs[2][:, 0]
        curve = np.cumsum(np.maximum(vals, 0.0))
        k = curve[ref - 1] / math.sqrt(ref) if kappa is None else kappa
        (minus if curve[-1] <= k * math.sqrt(t) + 1e-12 else plus).append(j)
        kappas.append(float(k))
        finals.append(float(curve[-1]))
        worst.append(tuple(float(v) for v in x))
    return Partition(tuple(plus), tuple(minus), tuple(kappas), ref, tuple(finals), tuple(worst))


# ---------------------------------------------------------------- perturbed


@dataclass(frozen=True)
class PerturbedDecomposition:
    delta_mean: NDArray[np.float64]
    delta_bound: NDArray[np.float64]
    margin_mean: float
    margin_bound: float
    lipschitz_ok: bool
    bound_nonpositive: bool

    def as_dict(self) -> dict:
        return {
            "margin_mean": self.margin_mean,
            "margin_bound": self.margin_bound,
            "abs_delta_le_abs_Delta": self.lipschitz_ok,
            "delta_nonpositive_under_bound": self.bound_nonpositive,
        }


def perturbed_decomposition(
    base: ScalarFunc,
    offsets: NDArray[np.float64],
    bound: float,
    box: BoxDomain,
    points_per_axis: int = 201,
) -> PerturbedDecomposition:
    """Deviation of the running offset average around the mean and around the bound.

    ``Delta_i = (1/i) sum_{k<=i} (b_k - center)`` for ``center`` the horizon mean
    and for the declared bound.  Checks on the grid that
    ``|delta_i(x)| <= |Delta_i|`` and, around the bound, that ``delta_i(x) <= 0``.
    """
    offsets = np.asarray(offsets, dtype=float)
    i = np.arange(1, offsets.shape[0] + 1)
    running = np.cumsum(offsets) / i
    d_mean = running - running[-1]
    d_bound = running - bound
    g = evaluate_grid(base, box.grid(points_per_axis))

    lip_ok, nonpos = True, True
    step = max(1, 2_000_000 // g.shape[0])
    for start in range(0, offsets.shape[0], step):
        sl = slice(start, start + step)
        for center, deltas, upper in ((running[-1], d_mean, False), (bound, d_bound, True)):
            inner = g[None, :] + center
            delta = np.maximum(0.0, inner + deltas[sl, None]) - np.maximum(0.0, inner)
            lip_ok &= bool(np.all(np.abs(delta) <= np.abs(deltas[sl, None]) + 1e-12))
            if upper:
                nonpos &= bool(np.all(delta <= 1e-12))
    return PerturbedDecomposition(
        delta_mean=d_mean,
        delta_bound=d_bound,
        margin_mean=float(np.max(np.sqrt(i) * np.abs(d_mean))),
        margin_bound=float(np.max(np.sqrt(i) * np.abs(d_bound))),
        lipschitz_ok=lip_ok,
        bound_nonpositive=nonpos,
    )


# ---------------------------------------------------------------- report


@dataclass(frozen=True)
class ConditionReport:
    horizon: int
    condition3: tuple[Condition3Result, ...]
    condition2: Condition2Result | None
    partition: Partition | None
    perturbed: dict[int, PerturbedDecomposition] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "condition3": [c.as_dict() for c in self.condition3],
            "condition3_verdict": all(c.verdict for c in self.condition3),
            "condition2": None if self.condition2 is None else self.condition2.as_dict(),
            "partition": None if self.partition is None else self.partition.as_dict(),
            "perturbed": {str(j): p.as_dict() for j, p in self.perturbed.items()},
        }


def condition_report(
    stream: FamilyStream,
    horizon: int,
    box: BoxDomain,
    eps: float = 1.0,
    t0: int = 0,
    points_per_axis: int = 2001,
    kappa: float | None = None,
) -> ConditionReport:
    """Run every checker on one realised stream without running any learner."""
    indices = stream.indices(horizon)
    c3 = []
    for j, spec in enumerate(stream.specs):
        limit, exact = spec.limit_frequencies()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c3.append(check_condition3(indices[:, j], spec.size, eps, t0, limit if exact else None))
    c2 = part = None
    perturbed = {}
    if box.dim <= 2:
        state = stream.penalty_state(horizon, box.dim)
        c2 = check_condition2(state, box, points_per_axis)
        part = partition_constraints(state, box, points_per_axis, kappa=kappa)
        for j, spec in enumerate(stream.specs):
            if isinstance(spec.law, Perturbed):
                perturbed[j] = perturbed_decomposition(
                    spec.members[0], stream.offsets(horizon, j), spec.law.bound, box
                )
    return ConditionReport(horizon, tuple(c3), c2, part, perturbed)
