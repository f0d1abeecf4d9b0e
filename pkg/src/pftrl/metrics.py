"""Regret, both violation measures, benchmark-set oracles and the CSV trace format."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .functions import BoxDomain, ScalarFunc, coefficients, evaluate
from .model import RunTrace, cumulative_violation
from .penalty import PenaltyState

__all__ = [
    "BenchmarkSets",
    "EmptyBenchmarkError",
    "compute_benchmarks",
    "trace_benchmarks",
    "regret",
    "violation",
    "emit_csv",
    "read_csv",
    "csv_name",
    "CSV_HEADER",
]

CSV_HEADER = ("t", "x", "f", "lambda", "h_inst", "V_h", "V_sum", "R")
MEMBERSHIP_TOL = 1e-9
_CHUNK = 4_000_000


class EmptyBenchmarkError(ValueError):
    """No grid point satisfies every prefix-average constraint."""


@dataclass(frozen=True, eq=False)
class BenchmarkSets:
    """Grid masks for the three benchmark sets after ``horizon`` rounds.

    ``x_min``: every round's constraints hold.  ``x_hat_max``: every prefix
    average holds.  ``x_max``: the horizon average holds.  ``best`` minimises
    the cumulative loss over ``x_hat_max`` (ties go to the first grid point).
    """

    horizon: int
    points_per_axis: int
    points: NDArray[np.float64]
    x_min: NDArray[np.bool_]
    x_hat_max: NDArray[np.bool_]
    x_max: NDArray[np.bool_]
    cumulative_loss: NDArray[np.float64]
    best: NDArray[np.float64]
    best_value: float

    def best_in(self, mask: NDArray[np.bool_]) -> tuple[NDArray[np.float64], float]:
        if not mask.any():
            raise EmptyBenchmarkError("mask is empty")
        vals = np.where(mask, self.cumulative_loss, np.inf)
        k = int(np.argmin(vals))
        return self.points[k], float(vals[k])

    def contained(self) -> bool:
        """``x_min <= x_hat_max <= x_max`` pointwise."""
        return bool(np.all(self.x_min <= self.x_hat_max) and np.all(self.x_hat_max <= self.x_max))

    def upper_edge(self, mask: NDArray[np.bool_]) -> float:
        """Largest first coordinate in ``mask``; handy for 1-D interval sets."""
        return float(self.points[mask, 0].max())

    def as_dict(self) -> dict:
        out = {
            "horizon": self.horizon,
            "points_per_axis": self.points_per_axis,
            "best": [float(v) for v in self.best],
            "best_value": self.best_value,
            "sizes": {
                "X_min": int(self.x_min.sum()),
                "X_hat_max": int(self.x_hat_max.sum()),
                "X_max": int(self.x_max.sum()),
            },
            "contained": self.contained(),
        }
        if self.points.shape[1] == 1:
            out["upper_edges"] = {
                name: (self.upper_edge(mask) if mask.any() else None)
                for name, mask in (("X_min", self.x_min), ("X_hat_max", self.x_hat_max), ("X_max", self.x_max))
            }
        return out


def _stack(funcs: Sequence[Sequence[ScalarFunc]], n: int) -> tuple[NDArray, NDArray, NDArray]:
    co = [[coefficients(g, n) for g in row] for row in funcs]
    d = np.array([[c[0] for c in row] for row in co])
    l = np.array([[c[1] for c in row] for row in co])
    c = np.array([[c[2] for c in row] for row in co])
    return d, l, c


def compute_benchmarks(
    box: BoxDomain,
    losses: Sequence[ScalarFunc],
    constraints: Sequence[Sequence[ScalarFunc]],
    points_per_axis: int = 2001,
) -> BenchmarkSets:
    """Grid masks of the benchmark sets for the given rounds.

    ``losses`` and ``constraints`` hold one entry per round; the horizon is
    their common length.
    """
    if box.dim > 2:
        raise ValueError("benchmark oracles support dimension 1 or 2")
    t = len(constraints)
    if t < 1 or len(losses) != t:
        raise ValueError("need matching, non-empty loss and constraint sequences")
    n = box.dim
    pts = box.grid(points_per_axis)
    sq = pts * pts
    N = pts.shape[0]
    d, l, c = _stack(constraints, n)
    m = d.shape[1]
    state = PenaltyState.from_rounds(constraints, n)
    ad, al, ac = state.averages()

    all_ok = np.ones(N, dtype=bool)
    prefix_ok = np.ones(N, dtype=bool)
    first_bad = np.full(N, t + 1)
    step = max(1, _CHUNK // max(1, N * m))
    for start in range(0, t, step):
        sl = slice(start, start + step)
        raw = np.einsum("imn,pn->imp", d[sl], sq) + np.einsum("imn,pn->imp", l[sl], pts) + c[sl][:, :, None]
        all_ok &= (raw <= MEMBERSHIP_TOL).all(axis=(0, 1))
        avg = np.einsum("imn,pn->imp", ad[sl], sq) + np.einsum("imn,pn->imp", al[sl], pts) + ac[sl][:, :, None]
        bad = (avg > MEMBERSHIP_TOL).any(axis=1)
        prefix_ok &= ~bad.any(axis=0)
        hit = bad.any(axis=0) & (first_bad > t)
        if hit.any():
            first_bad[hit] = start + 1 + np.argmax(bad[:, hit], axis=0)
    last = ad[-1] @ sq.T + al[-1] @ pts.T + ac[-1][:, None]
    horizon_ok = (last <= MEMBERSHIP_TOL).all(axis=0)

    if not prefix_ok.any():
        tau = int(first_bad.max())
        raise EmptyBenchmarkError(
            f"prefix-feasible set is empty on the grid; every point fails by prefix {tau}"
        )

    fd, fl, fc = _stack([[f] for f in losses], n)
    cum = sq @ fd[:, 0].sum(axis=0) + pts @ fl[:, 0].sum(axis=0) + fc[:, 0].sum()
    vals = np.where(prefix_ok, cum, np.inf)
    k = int(np.argmin(vals))
    return BenchmarkSets(
        horizon=t,
        points_per_axis=points_per_axis,
        points=pts,
        x_min=all_ok,
        x_hat_max=prefix_ok,
        x_max=horizon_ok,
        cumulative_loss=cum,
        best=pts[k],
        best_value=float(vals[k]),
    )


def trace_benchmarks(trace: RunTrace, box: BoxDomain, points_per_axis: int = 2001) -> BenchmarkSets:
    return compute_benchmarks(box, trace.loss_funcs, trace.constraint_funcs, points_per_axis)


def regret(trace: RunTrace, y: ArrayLike) -> NDArray[np.float64]:
    """``R_tau = sum_{i<=tau} f_i(x_i) - f_i(y)`` for every tau."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    bench = np.array([evaluate(f, y) for f in trace.loss_funcs])
    return np.cumsum(trace.loss_values - bench)


def violation(trace: RunTrace) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """The penalty-sum series and the clipped per-constraint running-sum series."""
    return np.cumsum(trace.penalties), cumulative_violation(trace.constraint_values)


def csv_name(experiment: str, algorithm: str, c: float | str, seed: int) -> str:
    return f"{experiment}_{algorithm}_c{c}_seed{seed}.csv"


def _fmt(v: float) -> str:
    return "%.17g" % v


def _vector_cell(v: NDArray[np.float64]) -> str:
    return ";".join(_fmt(float(a)) for a in np.atleast_1d(v))


def emit_csv(trace: RunTrace, path: str | Path, benchmarks: BenchmarkSets | None = None) -> Path:
    """Write one row per round; vectors (``x`` for n > 1, ``lambda`` for m > 1) are ``;``-joined.

    Regret is taken from the trace, or measured against ``benchmarks.best``.
    """
    path = Path(path)
    R = trace.regret
    if benchmarks is not None:
        R = regret(trace, benchmarks.best)
    if R is None:
        raise ValueError("no regret series attached to the trace and no benchmark given")
    v_h, v_sum = violation(trace)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i in range(trace.horizon):
        lam = "" if trace.duals is None else _vector_cell(trace.duals[i])
        w.writerow([
            i + 1,
            _vector_cell(trace.actions[i]),
            _fmt(trace.loss_values[i]),
            lam,
            _fmt(trace.penalties[i]),
            _fmt(v_h[i]),
            _fmt(v_sum[i]),
            _fmt(R[i]),
        ])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue().encode())
    except OSError as exc:
        raise OSError(f"could not write trace CSV {path}: {exc}") from exc
    return path


def read_csv(path: str | Path) -> dict[str, NDArray[np.float64]]:
    """Parse a trace CSV back into arrays; vector cells become 2-D arrays, empty ``lambda`` becomes None."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else None}")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * len(CSV_HEADER)
    out: dict = {}
    for name, col in zip(CSV_HEADER, cols):
        if name == "t":
            out[name] = np.array([int(v) for v in col], dtype=np.int64)
        elif name in ("x", "lambda"):
            if name == "lambda" and all(v == "" for v in col):
                out[name] = None
            else:
                out[name] = np.array([[float(a) for a in v.split(";")] for v in col])
        else:
            out[name] = np.array([float(v) for v in col])
    return out
