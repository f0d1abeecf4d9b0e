"""Penalised FTRL, the online primal-dual baselines, and the static exact-penalty solve."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .functions import BoxDomain, ScalarFunc, coefficients, evaluate, minimum_on_box, subgrad
from .model import ProblemInstance, RunTrace
from .penalty import PenaltyState, eval_h, eval_prefix_penalty
from .solver import CompositeObjective, SolverError, minimize_convex, solve

__all__ = [
    "AlgorithmConfig",
    "run",
    "run_penalized_ftrl",
    "run_primal_dual",
    "run_primal_dual_averaged",
    "exact_penalty_static_solve",
    "ftl_penalty_only",
    "InfeasibleStart",
]

KINDS = ("penalized_ftrl", "primal_dual", "primal_dual_averaged", "ftl_penalty_only")


class InfeasibleStart(ValueError):
    """The supplied point is not strictly feasible."""


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str = "penalized_ftrl"
    horizon: int = 1000
    gamma: float = 0.0
    step_scale: float = 5.0
    seed: int = 0
    tol: float = 1e-9
    # Grow-then-freeze penalty weight for Penalised FTRL.
    adaptive: bool = False
    gamma_cap: float = 1e6
    freeze_after: int = 100
    config_digest: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown algorithm kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not self.step_scale > 0:
            raise ValueError("step scale must be positive")


def _coeff_sum(acc: tuple[NDArray, NDArray, float], f: ScalarFunc, n: int) -> tuple[NDArray, NDArray, float]:
    d, l, c = coefficients(f, n)
    return acc[0] + d, acc[1] + l, acc[2] + c


class _Recorder:
    def __init__(self, t: int, n: int, m: int, with_duals: bool) -> None:
        self.actions = np.empty((t, n))
        self.losses = np.empty(t)
        self.penalties = np.empty(t)
        self.gvals = np.empty((t, m))
        self.duals = np.empty((t, m)) if with_duals else None
        self.loss_funcs: list[ScalarFunc] = []
        self.constraint_funcs: list[tuple[ScalarFunc, ...]] = []

    def record(self, i: int, x: NDArray, f: ScalarFunc, g: Sequence[ScalarFunc], state: PenaltyState) -> None:
        self.actions[i] = x
        self.losses[i] = evaluate(f, x)
        self.penalties[i] = eval_h(state, x)
        self.gvals[i] = [evaluate(gj, x) for gj in g]
        self.loss_funcs.append(f)
        self.constraint_funcs.append(tuple(g))

    def trace(self, kind: str, config: AlgorithmConfig, **metadata) -> RunTrace:
        return RunTrace(
            algorithm=kind,
            actions=self.actions,
            loss_values=self.losses,
            penalties=self.penalties,
            constraint_values=self.gvals,
            loss_funcs=tuple(self.loss_funcs),
            constraint_funcs=tuple(self.constraint_funcs),
            duals=self.duals,
            seed=config.seed,
            config_digest=config.config_digest,
            metadata=metadata,
        )


class _HingeWindow:
    """Penalty hinges pre-folded for a sub-box around the iterate.

    Hinges that are identically off or identically on over the window are
    dropped or summed into fixed coefficients (kept without the factor
    ``gamma``), so each round only handles hinges whose kink crosses the window.
    """

    def __init__(self, box: BoxDomain) -> None:
        self.box = box
        n = box.dim
        self.lo, self.hi = box.lo.copy(), box.hi.copy()
        self.fixed = (np.zeros(n), np.zeros(n), 0.0)
        self.hinges = (np.zeros((0, n)), np.zeros((0, n)), np.zeros(0))

    def rebuild(self, center: NDArray, half_width: float, d: NDArray, l: NDArray, c: NDArray) -> None:
        self.lo = np.maximum(self.box.lo, center - half_width)
        self.hi = np.minimum(self.box.hi, center + half_width)
        n = self.box.dim
        obj = CompositeObjective.build(0.0, (np.zeros(n), np.zeros(n), 0.0), 1.0, (d, l, c))
        local = obj.restrict(self.lo, self.hi)
        self.fixed = (local.smooth_diag, local.smooth_linear, local.smooth_intercept)
        self.hinges = (local.hinge_diag, local.hinge_linear, local.hinge_intercept)

    def add(self, d: NDArray, l: NDArray, c: NDArray) -> None:
        n = self.box.dim
        obj = CompositeObjective.build(0.0, (np.zeros(n), np.zeros(n), 0.0), 1.0, (d, l, c))
        local = obj.restrict(self.lo, self.hi)
        fd, fl, fc = self.fixed
        self.fixed = (fd + local.smooth_diag, fl + local.smooth_linear, fc + local.smooth_intercept)
        if local.n_hinges:
            hd, hl, hc = self.hinges
            self.hinges = (
                np.vstack([hd, local.hinge_diag]),
                np.vstack([hl, local.hinge_linear]),
                np.concatenate([hc, local.hinge_intercept]),
            )

    @property
    def size(self) -> int:
        return self.hinges[2].shape[0]

    @property
    def domain(self) -> BoxDomain:
        return BoxDomain(tuple(self.lo), tuple(self.hi))

    def objective(self, reg_weight: float, smooth: tuple, gamma: float) -> CompositeObjective:
        fd, fl, fc = self.fixed
        sd, sl, sc = smooth
        return CompositeObjective.build(
            reg_weight, (sd + gamma * fd, sl + gamma * fl, sc + gamma * fc), gamma, self.hinges
        )

    def touches_inner_edge(self, x: NDArray) -> bool:
        inner_lo = (x <= self.lo) & (self.lo > self.box.lo)
        inner_hi = (x >= self.hi) & (self.hi < self.box.hi)
        return bool(np.any(inner_lo | inner_hi))


def run_penalized_ftrl(instance: ProblemInstance, config: AlgorithmConfig) -> RunTrace:
    """Play ``x_{tau+1} = argmin_D R_tau(x) + sum_{i<=tau} f_i(x) + gamma h_i(x)``.

    The first action is the box centre.  Each round the action is committed
    before the round's loss and constraints are revealed and charged.
    """
    box, n, m, t = instance.domain, instance.domain.dim, instance.m, config.horizon
    gamma = config.gamma if config.gamma > 0 or config.adaptive else instance.gamma
    reg = instance.regularizer
    rec = _Recorder(t, n, m, with_duals=False)
    state = PenaltyState.empty(m, n)
    loss_acc: tuple[NDArray, NDArray, float] = (np.zeros(n), np.zeros(n), 0.0)
    x = box.center
    reach = float(np.max(np.linalg.norm(box.corners(), axis=1)))
    clean, frozen_at, doublings = 0, None, 0
    recent: deque[float] = deque([math.inf], maxlen=16)
    window = _HingeWindow(box)

    for tau in range(1, t + 1):
        f = instance.loss_at(tau)
        g = instance.constraints.at(tau)
        state = state.push(g)
        rec.record(tau - 1, x, f, g, state)
        if tau == t:
            break
        loss_acc = _coeff_sum(loss_acc, f, n)
        d, l, c = state.averages()
        window.add(d[-1], l[-1], c[-1])
        radius = None
        if tau > 1:
            lip = instance.loss_lipschitz + gamma * instance.constraint_lipschitz * m
            lip += 2.0 * reach * (reg.weight(tau) - reg.weight(tau - 1))
            bound = 2.0 * lip / (reg.modulus(tau) + reg.modulus(tau - 1)) + 1e-6
            # The drift bound is loose; start from the last step and let the solver widen.
            radius = min(bound, 4.0 * max(recent) + 1e-9 * box.diameter)
        half = 64.0 * radius if radius is not None else box.diameter
        while True:
            outside = not np.all((window.lo <= x) & (x <= window.hi))
            if outside or window.touches_inner_edge(x) or window.size > 256:
                window.rebuild(x, half, d.reshape(-1, n), l.reshape(-1, n), c.reshape(-1))
            obj = window.objective(reg.weight(tau), loss_acc, gamma)
            try:
                x_new = solve(obj, window.domain, config.tol, x0=x, radius=radius).minimizer
            except SolverError as exc:
                raise SolverError(f"round {tau}: {exc}", exc.best) from exc
            if not window.touches_inner_edge(x_new):
                break
            half *= 4.0
            window.rebuild(x_new, half, d.reshape(-1, n), l.reshape(-1, n), c.reshape(-1))
        recent.append(float(np.linalg.norm(x_new - x)))
        x = x_new

        if config.adaptive and frozen_at is None:
            if eval_prefix_penalty(state, x) > 1e-6:
                gamma = min(config.gamma_cap, 2.0 * gamma if gamma > 0 else 1.0)
                doublings += 1
                clean = 0
            else:
                clean += 1
                if clean >= config.freeze_after:
                    frozen_at = tau

    return rec.trace(
        "penalized_ftrl", config, gamma=gamma, adaptive=config.adaptive,
        gamma_doublings=doublings, gamma_frozen_at=frozen_at,
    )


def _primal_dual(instance: ProblemInstance, config: AlgorithmConfig, averaged: bool) -> RunTrace:
    box, n, m, t = instance.domain, instance.domain.dim, instance.m, config.horizon
    kind = "primal_dual_averaged" if averaged else "primal_dual"
    rec = _Recorder(t, n, m, with_duals=True)
    state = PenaltyState.empty(m, n)
    x = box.center
    lam = np.zeros(m)

    for tau in range(1, t + 1):
        f = instance.loss_at(tau)
        g = instance.constraints.at(tau)
        state = state.push(g)
        rec.record(tau - 1, x, f, g, state)
        rec.duals[tau - 1] = lam
        if tau == t:
            break
        cons = [state.averaged_spec(j) for j in range(m)] if averaged else g
        alpha = config.step_scale / math.sqrt(tau)
        step = subgrad(f, x)
        for j in range(m):
            if lam[j]:
                step = step + lam[j] * subgrad(cons[j], x)
        x = box.project(x - alpha * step)
        lam = np.maximum(0.0, lam + alpha * np.array([evaluate(cj, x) for cj in cons]))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))):
            raise FloatingPointError(f"{kind} diverged at round {tau}")

    return rec.trace(kind, config, step_scale=config.step_scale, experimental=averaged)


def run_primal_dual(instance: ProblemInstance, config: AlgorithmConfig) -> RunTrace:
    """Projected primal descent with a positive-part dual ascent, step ``a / sqrt(t)``."""
    return _primal_dual(instance, config, averaged=False)


def run_primal_dual_averaged(instance: ProblemInstance, config: AlgorithmConfig) -> RunTrace:
    """Primal-dual update driven by the running constraint average instead of the latest constraint.

    The primal step uses the average's subgradient at ``x_t``; the dual step
    evaluates the average at ``x_{t+1}``.  Experimental.
    """
    return _primal_dual(instance, config, averaged=True)


def _exact_min_1d(obj: CompositeObjective, box: BoxDomain) -> tuple[NDArray, float]:
    """Minimum of a 1-D convex piecewise quadratic, polished over the kinks next to it."""
    x, _ = minimize_convex(obj, box, tol=1e-12 * max(1.0, box.diameter))
    lo = max(box.lower[0], x[0] - 1e-6)
    hi = min(box.upper[0], x[0] + 1e-6)
    local = obj.restrict(np.array([lo]), np.array([hi]))
    cands = [lo, hi, x[0]]
    for a, b, c in zip(local.hinge_diag[:, 0], local.hinge_linear[:, 0], local.hinge_intercept):
        if a == 0 and b != 0:
            cands.append(-c / b)
        elif a > 0:
            disc = b * b - 4 * a * c
            if disc >= 0:
                cands += [(-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a)]
    pts = np.clip(np.array(cands), lo, hi)[:, None]
    vals = obj.values(pts)
    k = int(np.argmin(vals))
    return pts[k], float(vals[k])


def _minimize(obj: CompositeObjective, box: BoxDomain) -> tuple[NDArray, float]:
    if box.dim == 1:
        return _exact_min_1d(obj, box)
    return minimize_convex(obj, box)


def exact_penalty_static_solve(
    f: ScalarFunc,
    constraints: Sequence[ScalarFunc],
    box: BoxDomain,
    z: ArrayLike,
    feas_tol: float = 1e-6,
    max_doublings: int = 20,
) -> tuple[NDArray[np.float64], float]:
    """Solve ``min f s.t. g_j <= 0`` on ``box`` by minimising ``f + gamma sum_j max{0, g_j}``.

    The weight starts from the threshold recipe with the box minimum of ``f``
    standing in for the unknown constrained optimum (a lower bound, so the
    weight only grows), clamped below by 1 with a 10% margin.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    gz = np.array([evaluate(g, z) for g in constraints])
    if not np.all(gz < 0):
        raise InfeasibleStart(f"z={z} is not strictly feasible: g(z)={gz}")
    _, f_lower = minimum_on_box(f, box)
    gamma = max(1.0, 1.1 * abs(f_lower - evaluate(f, z) - 1.0) / float(np.min(np.abs(gz))))

    n = box.dim
    hd = np.array([coefficients(g, n)[0] for g in constraints])
    hl = np.array([coefficients(g, n)[1] for g in constraints])
    hc = np.array([coefficients(g, n)[2] for g in constraints])
    for _ in range(max_doublings + 1):
        obj = CompositeObjective.build(0.0, coefficients(f, n), gamma, (hd, hl, hc))
        x, _ = _minimize(obj, box)
        worst = max(evaluate(g, x) for g in constraints)
        if worst <= feas_tol:
            return x, gamma
        gamma *= 2.0
    raise SolverError(f"penalised minimiser still infeasible after {max_doublings} doublings", x)


def ftl_penalty_only(instance: ProblemInstance, horizon: int) -> RunTrace:
    """Follow-The-Leader on the penalties alone: ``w_{tau+1} = argmin sum_{i<=tau} h_i``.

    Row ``i`` of the trace holds ``w_{i+1}`` and ``h_i(w_{i+1})``, the terms of
    the be-the-leader sum.
    """
    box, n, m = instance.domain, instance.domain.dim, instance.m
    config = AlgorithmConfig(kind="ftl_penalty_only", horizon=horizon)
    rec = _Recorder(horizon, n, m, with_duals=False)
    state = PenaltyState.empty(m, n)
    zero = (np.zeros(n), np.zeros(n), 0.0)
    for tau in range(1, horizon + 1):
        g = instance.constraints.at(tau)
        state = state.push(g)
        d, l, c = state.averages()
        obj = CompositeObjective.build(0.0, zero, 1.0, (d.reshape(-1, n), l.reshape(-1, n), c.reshape(-1)))
        w, _ = _minimize(obj, box)
        rec.record(tau - 1, w, instance.loss_at(tau), g, state)
    return rec.trace("ftl_penalty_only", config)


_RUNNERS = {
    "penalized_ftrl": run_penalized_ftrl,
    "primal_dual": run_primal_dual,
    "primal_dual_averaged": run_primal_dual_averaged,
}


def run(instance: ProblemInstance, config: AlgorithmConfig) -> RunTrace:
    if config.kind == "ftl_penalty_only":
        return ftl_penalty_only(instance, config.horizon)
    return _RUNNERS[config.kind](instance, config)
