"""Minimisers for the per-round FTRL objective and a brute-force grid oracle.

The objective is

    phi(x) = w ||x||^2 + q(x) + gamma * sum_k max{0, p_k(x)}

with ``q`` and every ``p_k`` separable convex quadratics.  On any sub-box most
hinge terms are either identically zero or identically equal to ``p_k``;
``CompositeObjective.restrict`` folds those into the smooth part so a search
only pays for the hinges whose kink actually crosses the region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog, lsq_linear, minimize

from .functions import BoxDomain, DimensionError

__all__ = [
    "CompositeObjective",
    "SolveReport",
    "SolverError",
    "solve",
    "minimize_convex",
    "golden_section",
    "grid_minimize",
]

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
MAX_ITER = 1_000_000


class SolverError(RuntimeError):
    def __init__(self, message: str, best: NDArray[np.float64] | None = None) -> None:
        super().__init__(message)
        self.best = best


@dataclass(frozen=True, eq=False)
class CompositeObjective:
    """``reg_weight ||x||^2 + smooth(x) + gamma * sum_k max{0, hinge_k(x)}``.

    ``smooth`` and each hinge are given by (diag, linear, intercept)
    coefficients; hinge arrays have one row per term.
    """

    reg_weight: float
    smooth_diag: NDArray[np.float64]
    smooth_linear: NDArray[np.float64]
    smooth_intercept: float
    gamma: float
    hinge_diag: NDArray[np.float64]
    hinge_linear: NDArray[np.float64]
    hinge_intercept: NDArray[np.float64]

    @classmethod
    def build(
        cls,
        reg_weight: float,
        smooth: tuple[ArrayLike, ArrayLike, float],
        gamma: float = 0.0,
        hinges: tuple[ArrayLike, ArrayLike, ArrayLike] | None = None,
    ) -> CompositeObjective:
        sd, sl, sc = (np.asarray(smooth[0], float), np.asarray(smooth[1], float), float(smooth[2]))
        n = sl.shape[0]
        if hinges is None:
            hd, hl, hc = np.zeros((0, n)), np.zeros((0, n)), np.zeros(0)
        else:
            hd = np.asarray(hinges[0], float).reshape(-1, n)
            hl = np.asarray(hinges[1], float).reshape(-1, n)
            hc = np.asarray(hinges[2], float).reshape(-1)
        if gamma == 0.0:
            hd, hl, hc = hd[:0], hl[:0], hc[:0]
        return cls(float(reg_weight), sd, sl, sc, float(gamma), hd, hl, hc)

    @property
    def dim(self) -> int:
        return self.smooth_linear.shape[0]

    @cached_property
    def _curved(self) -> bool:
        return bool(self.hinge_diag.any())

    @property
    def n_hinges(self) -> int:
        return self.hinge_intercept.shape[0]

    @property
    def modulus(self) -> float:
        """Strong-convexity modulus guaranteed by the quadratic part."""
        return 2.0 * (self.reg_weight + float(np.min(self.smooth_diag, initial=np.inf)))

    def _hinge_values(self, x: NDArray) -> NDArray:
        return self.hinge_diag @ (x * x) + self.hinge_linear @ x + self.hinge_intercept

    def value(self, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        smooth = self.reg_weight * (x @ x) + self.smooth_diag @ (x * x) + self.smooth_linear @ x
        smooth += self.smooth_intercept
        if self.n_hinges:
            smooth += self.gamma * float(np.maximum(self._hinge_values(x), 0.0).sum())
        return float(smooth)

    def values(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Vectorised evaluation at the rows of ``points``."""
        sq = points * points
        out = sq @ (self.reg_weight + self.smooth_diag) + points @ self.smooth_linear
        out = out + self.smooth_intercept
        if self.n_hinges:
            h = sq @ self.hinge_diag.T + points @ self.hinge_linear.T + self.hinge_intercept
            out = out + self.gamma * np.maximum(h, 0.0).sum(axis=1)
        return out

    def subgrad(self, x: ArrayLike) -> NDArray[np.float64]:
        """One subgradient; hinges exactly at their kink contribute nothing."""
        x = np.asarray(x, dtype=float)
        g = 2.0 * (self.reg_weight + self.smooth_diag) * x + self.smooth_linear
        if self.n_hinges:
            on = self._hinge_values(x) > 0
            if on.any():
                g = g + self.gamma * (2.0 * self.hinge_diag[on] * x + self.hinge_linear[on]).sum(axis=0)
        return g

    def restrict(self, lo: NDArray[np.float64], hi: NDArray[np.float64]) -> CompositeObjective:
        """An objective equal to this one on the box ``[lo, hi]`` with fewer hinge terms."""
        if not self.n_hinges:
            return self
        d, l, c = self.hinge_diag, self.hinge_linear, self.hinge_intercept
        if self.dim == 1 and not self._curved:
            # Affine 1-D hinges: range over the interval from its two ends.
            a, b = c + l[:, 0] * lo[0], c + l[:, 0] * hi[0]
            upper, lower = np.maximum(a, b), np.minimum(a, b)
        else:
            at_lo = d * lo * lo + l * lo
            at_hi = d * hi * hi + l * hi
            upper = c + np.maximum(at_lo, at_hi).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                vertex = np.where(d > 0, np.clip(-l / (2.0 * d), lo, hi), lo)
            at_vertex = np.where(d > 0, d * vertex * vertex + l * vertex, np.inf)
            lower = c + np.minimum(np.minimum(at_lo, at_hi), at_vertex).sum(axis=1)
        off = upper <= 0
        on = ~off & (lower >= 0)
        keep = ~off & ~on
        if not on.any():
            if keep.all():
                return self
            return CompositeObjective(
                self.reg_weight, self.smooth_diag, self.smooth_linear, self.smooth_intercept,
                self.gamma, d[keep], l[keep], c[keep],
            )
        g = self.gamma
        return CompositeObjective(
            self.reg_weight,
            self.smooth_diag + g * d[on].sum(axis=0),
            self.smooth_linear + g * l[on].sum(axis=0),
            self.smooth_intercept + g * float(c[on].sum()),
            g,
            d[keep],
            l[keep],
            c[keep],
        )


@dataclass(frozen=True)
class SolveReport:
    minimizer: NDArray[np.float64]
    value: float
    iterations: int
    certified_gap: float


def golden_section(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    width: float,
    max_iter: int = MAX_ITER,
) -> tuple[float, float, int]:
    """Shrink ``[lo, hi]`` around the minimiser of a unimodal ``f`` until narrower than ``width``.

    Returns the final bracket and the number of function evaluations.
    """
    a, b = lo, hi
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    evals = 2
    while b - a > width:
        if evals >= max_iter:
            raise SolverError("golden-section search hit the iteration cap", np.array([0.5 * (a + b)]))
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
        evals += 1
        if not (a < x1 < x2 < b):
            # Float resolution reached: the interior points collapsed.
            break
    return a, b, evals


def _hinge_roots(d: NDArray, l: NDArray, c: NDArray) -> tuple[NDArray, NDArray]:
    """Ends of the interval where each 1-D hinge ``d x^2 + l x + c`` is nonpositive.

    Hinges positive everywhere get an empty interval ``(inf, -inf)``.
    """
    if not d.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            root = -c / l
        r1 = np.where(l > 0, -np.inf, np.where(l < 0, root, np.where(c <= 0, -np.inf, np.inf)))
        r2 = np.where(l > 0, root, np.where(l < 0, np.inf, np.where(c <= 0, np.inf, -np.inf)))
        return r1, r2
    r1 = np.full(c.shape, np.inf)
    r2 = np.full(c.shape, -np.inf)
    lin = d == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -c / l
        up = lin & (l > 0)
        down = lin & (l < 0)
        r1[up], r2[up] = -np.inf, root[up]
        r1[down], r2[down] = root[down], np.inf
        flat = lin & (l == 0) & (c <= 0)
        r1[flat], r2[flat] = -np.inf, np.inf
        disc = l * l - 4.0 * d * c
        quad = ~lin & (disc >= 0)
        sq = np.sqrt(np.where(quad, disc, 0.0))
        # Cancellation-free pair of roots.
        q = -0.5 * (l + np.where(l >= 0, sq, -sq))
        a_root = np.where(q != 0, c / q, 0.0)
        b_root = q / d
        r1[quad] = np.minimum(a_root, b_root)[quad]
        r2[quad] = np.maximum(a_root, b_root)[quad]
    return r1, r2


def _piecewise_1d(obj: CompositeObjective, lo: float, hi: float) -> tuple[float, float, int]:
    """Exact minimiser of a 1-D composite objective on ``[lo, hi]``.

    Between consecutive hinge roots the objective is one quadratic, so each
    piece is minimised in closed form.  Returns the minimiser, the distance
    from zero to the one-sided derivative interval there (infinite slopes
    stand in for the interval ends) and the number of pieces.
    """
    d0 = obj.reg_weight + float(obj.smooth_diag[0])
    l0 = float(obj.smooth_linear[0])
    c0 = obj.smooth_intercept
    if obj.n_hinges:
        hd, hl, hc = obj.hinge_diag[:, 0], obj.hinge_linear[:, 0], obj.hinge_intercept
        r1, r2 = _hinge_roots(hd, hl, hc)
        c1, c2 = np.clip(r1, lo, hi), np.clip(r2, lo, hi)
        bp = np.unique(np.concatenate([[lo, hi], c1, c2]))
        P = bp.shape[0]
        i1 = np.searchsorted(bp, c1)
        i2 = np.searchsorted(bp, c2)
        # A hinge is on over [lo, r1) and (r2, hi]; always-on hinges (r1 > r2)
        # get the whole range.  Coefficient changes are scattered then summed.
        empty = r1 > r2
        idx = np.concatenate([np.zeros(1, dtype=np.intp), i1, i2])
        acc = np.empty((3, P))
        for k, v in enumerate((hd, hl, hc)):
            w = np.concatenate([[v.sum()], np.where(empty, 0.0, -v), np.where(empty, 0.0, v)])
            acc[k] = np.bincount(idx, weights=w, minlength=P)[:P]
        acc = np.cumsum(acc, axis=1)[:, : P - 1]
        A = d0 + obj.gamma * acc[0]
        B = l0 + obj.gamma * acc[1]
        C = c0 + obj.gamma * acc[2]
        left, right = bp[:-1], bp[1:]
    else:
        A, B, C = np.array([d0]), np.array([l0]), np.array([c0])
        left, right = np.array([lo]), np.array([hi])
    with np.errstate(divide="ignore", invalid="ignore"):
        vertex = np.where(A > 0, -B / (2.0 * A), np.where(B > 0, -np.inf, np.inf))
    cand = np.clip(vertex, left, right)
    cand = np.where((A == 0) & (B == 0), left, cand)
    vals = (A * cand + B) * cand + C
    k = int(np.argmin(vals))
    x = float(cand[k])
    # One-sided slopes straight from the terms; a hinge within rounding of zero
    # counts as on for the side where it is increasing away from its kink.
    base = 2.0 * d0 * x + l0
    lslope = rslope = base
    if obj.n_hinges:
        q = (hd * x + hl) * x + hc
        dq = 2.0 * hd * x + hl
        scale = 1e-12 * (np.abs(hd) * x * x + np.abs(hl * x) + np.abs(hc))
        on = q > scale
        kink = np.abs(q) <= scale
        lslope += obj.gamma * float(dq[on].sum() + dq[kink & (dq < 0)].sum())
        rslope += obj.gamma * float(dq[on].sum() + dq[kink & (dq > 0)].sum())
    if x <= lo:
        lslope = -np.inf
    if x >= hi:
        rslope = np.inf
    dist = max(0.0, float(lslope), float(-rslope))
    return x, dist, int(A.shape[0])


def _solve_1d(
    obj: CompositeObjective, box: BoxDomain, tol: float, x0: float | None, radius: float | None
) -> SolveReport:
    blo, bhi = box.lower[0], box.upper[0]
    r = radius if (x0 is not None and radius is not None and radius > 0) else None
    total = 0
    while True:
        if r is None or r >= bhi - blo:
            lo, hi = blo, bhi
        else:
            lo, hi = max(blo, x0 - r), min(bhi, x0 + r)
        # Clipping roots to the bracket is already exact; folding only pays off for many hinges.
        local = obj.restrict(np.array([lo]), np.array([hi])) if obj.n_hinges > 256 else obj
        x, dist, pieces = _piecewise_1d(local, lo, hi)
        total += pieces
        at_edge = (x <= lo and lo > blo) or (x >= hi and hi < bhi)
        if at_edge and r is not None:
            r *= 4.0
            continue
        break
    sigma = obj.modulus
    gap = dist * (bhi - blo)
    if sigma > 0:
        gap = min(gap, dist * dist / (2.0 * sigma))
    xv = np.array([x])
    fx = obj.value(xv)
    if gap > tol * max(1.0, abs(fx)):
        raise SolverError(f"certified gap {gap:.3g} above tolerance", xv)
    return SolveReport(xv, fx, total, gap)


def _min_norm_subgradient(obj: CompositeObjective, x: NDArray, box: BoxDomain, kink_tol: float) -> float:
    """Norm of the smallest element of the subdifferential of ``obj`` plus the box indicator."""
    n = x.shape[0]
    base = 2.0 * (obj.reg_weight + obj.smooth_diag) * x + obj.smooth_linear
    cols, lb, ub = [], [], []
    if obj.n_hinges:
        h = obj._hinge_values(x)
        grads = 2.0 * obj.hinge_diag * x + obj.hinge_linear
        base = base + obj.gamma * grads[h > kink_tol].sum(axis=0)
        kinked = np.abs(h) <= kink_tol
        for gk in grads[kinked]:
            cols.append(obj.gamma * gk)
            lb.append(0.0)
            ub.append(1.0)
    span = box.hi - box.lo
    for d in range(n):
        e = np.zeros(n)
        e[d] = 1.0
        if x[d] <= box.lo[d] + 1e-12 * span[d]:
            cols.append(e)
            lb.append(-np.inf)
            ub.append(0.0)
        elif x[d] >= box.hi[d] - 1e-12 * span[d]:
            cols.append(e)
            lb.append(0.0)
            ub.append(np.inf)
    if not cols:
        return float(np.linalg.norm(base))
    A = np.array(cols).T
    res = lsq_linear(A, -base, bounds=(np.array(lb), np.array(ub)), method="bvls")
    return float(np.linalg.norm(A @ res.x + base))


def _solve_nd(obj: CompositeObjective, box: BoxDomain, tol: float, x0: NDArray | None) -> SolveReport:
    local = obj.restrict(box.lo, box.hi)
    n, K = local.dim, local.n_hinges
    start = box.center if x0 is None else box.project(x0)
    # Epigraph form: min smooth(x) + gamma * sum s_k  s.t.  s_k >= hinge_k(x), s_k >= 0.
    hv0 = np.maximum(local._hinge_values(start), 0.0) if K else np.zeros(0)
    z0 = np.concatenate([start, hv0])
    quad = local.reg_weight + local.smooth_diag

    def fun(z: NDArray) -> float:
        x = z[:n]
        return float(quad @ (x * x) + local.smooth_linear @ x + local.smooth_intercept + local.gamma * z[n:].sum())

    def jac(z: NDArray) -> NDArray:
        x = z[:n]
        return np.concatenate([2.0 * quad * x + local.smooth_linear, np.full(K, local.gamma)])

    constraints = []
    if K:
        def cons(z: NDArray) -> NDArray:
            x = z[:n]
            return z[n:] - local._hinge_values(x)

        def cons_jac(z: NDArray) -> NDArray:
            x = z[:n]
            return np.hstack([-(2.0 * local.hinge_diag * x + local.hinge_linear), np.eye(K)])

        constraints.append({"type": "ineq", "fun": cons, "jac": cons_jac})
    bounds = list(zip(box.lower, box.upper)) + [(0.0, None)] * K
    res = minimize(
        fun, z0, jac=jac, bounds=bounds, constraints=constraints, method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 2000},
    )
    x = box.project(res.x[:n])
    fx = obj.value(x)
    sigma = obj.modulus
    scale = max(1.0, abs(fx))
    gap = math.inf
    for kink_tol in (1e-10 * scale, 1e-8 * scale, 1e-6 * scale):
        s = _min_norm_subgradient(local, x, box, kink_tol)
        gap = min(gap, s * s / (2.0 * sigma)) if sigma > 0 else gap
        if gap <= tol * scale:
            break
    if not gap <= tol * scale:
        raise SolverError(f"n-D solve certified gap {gap:.3g} above tolerance", x)
    return SolveReport(x, fx, int(res.nit), gap)


def solve(
    obj: CompositeObjective,
    box: BoxDomain,
    tol: float = 1e-9,
    x0: ArrayLike | None = None,
    radius: float | None = None,
) -> SolveReport:
    """Minimise a strongly convex composite objective over ``box``.

    The returned gap certificate satisfies ``gap <= tol * max(1, |phi(x)|)``.
    In 1-D it is the subgradient spread times the final bracket width; in
    higher dimension it is ``||s||^2 / (2 sigma)`` for the minimum-norm
    subgradient ``s``.  ``x0``/``radius`` seed a bracket around a previous
    minimiser; the bracket is widened whenever the minimiser lands on its edge.
    """
    if obj.dim != box.dim:
        raise DimensionError("objective and box dimensions differ")
    if tol < 1e-12:
        raise ValueError("tolerance below 1e-12 is not supported")
    if box.dim == 1:
        start = None if x0 is None else float(np.atleast_1d(x0)[0])
        return _solve_1d(obj, box, tol, start, radius)
    if not obj.modulus > 0:
        raise ValueError("n-D solve needs a strongly convex objective")
    return _solve_nd(obj, box, tol, None if x0 is None else np.asarray(x0, float))


def minimize_convex(
    obj: CompositeObjective, box: BoxDomain, tol: float = 1e-10
) -> tuple[NDArray[np.float64], float]:
    """Minimise a convex (not necessarily strongly convex) objective; no gap certificate."""
    if box.dim == 1:
        local = obj.restrict(box.lo, box.hi)
        x, _, _ = _piecewise_1d(local, box.lower[0], box.upper[0])
        best = np.array([x])
        return best, obj.value(best)
    local = obj.restrict(box.lo, box.hi)
    n, K = local.dim, local.n_hinges
    quad = local.reg_weight + local.smooth_diag
    if not quad.any() and not local.hinge_diag.any():
        return _minimize_lp(obj, local, box)

    def fun(z: NDArray) -> float:
        x = z[:n]
        return float(quad @ (x * x) + local.smooth_linear @ x + local.gamma * z[n:].sum())

    def jac(z: NDArray) -> NDArray:
        return np.concatenate([2.0 * quad * z[:n] + local.smooth_linear, np.full(K, local.gamma)])

    constraints = []
    if K:
        constraints.append({
            "type": "ineq",
            "fun": lambda z: z[n:] - local._hinge_values(z[:n]),
            "jac": lambda z: np.hstack([-(2.0 * local.hinge_diag * z[:n] + local.hinge_linear), np.eye(K)]),
        })
    start = box.center
    z0 = np.concatenate([start, np.maximum(local._hinge_values(start), 0.0) if K else np.zeros(0)])
    res = minimize(
        fun, z0, jac=jac, bounds=list(zip(box.lower, box.upper)) + [(0.0, None)] * K,
        constraints=constraints, method="SLSQP", options={"ftol": 1e-15, "maxiter": 5000},
    )
    x = box.project(res.x[:n])
    return x, obj.value(x)


def _minimize_lp(
    obj: CompositeObjective, local: CompositeObjective, box: BoxDomain
) -> tuple[NDArray[np.float64], float]:
    """Piecewise-linear case: the epigraph problem is a linear program."""
    n, K = local.dim, local.n_hinges
    cost = np.concatenate([local.smooth_linear, np.full(K, local.gamma)])
    bounds = list(zip(box.lower, box.upper)) + [(0.0, None)] * K
    A_ub = np.hstack([local.hinge_linear, -np.eye(K)]) if K else None
    b_ub = -local.hinge_intercept if K else None
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"linear program failed: {res.message}", box.center)
    x = box.project(res.x[:n])
    return x, obj.value(x)


def grid_minimize(
    evaluator: Callable[[NDArray[np.float64]], NDArray[np.float64]],
    box: BoxDomain,
    points_per_axis: int = 2001,
) -> tuple[NDArray[np.float64], float]:
    """Exhaustive minimum over the uniform grid; ties go to the lexicographically smallest point."""
    if box.dim > 2:
        raise DimensionError("grid oracle supports dimension 1 or 2")
    if points_per_axis < 101:
        raise ValueError("need at least 101 grid points per axis")
    pts = box.grid(points_per_axis)
    vals = np.asarray(evaluator(pts), dtype=float)
    k = int(np.argmin(vals))
    return pts[k], float(vals[k])
