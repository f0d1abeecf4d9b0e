"""Command-line experiment runner.

``pftrl run CONFIG`` executes every (algorithm, c, seed) combination, writes
one CSV per horizon and a JSON report; ``pftrl verify CONFIG`` only checks
the constraint streams.  CONFIG is a YAML file or the name of a bundled
experiment (``paper-example``).

Exit codes: 0 success, 1 a run or check failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .algorithms import AlgorithmConfig, run
from .config import ConfigError, ExperimentConfig, load_config
from .generators import FamilyStream, condition_report
from .metrics import csv_name, emit_csv, regret, trace_benchmarks
from .model import ProblemInstance, TraceInvariantError
from .penalty import ConditionViolated, gamma_certificate
from .solver import SolverError

__all__ = ["main", "build_parser", "run_experiment", "verify_experiment", "run_unit"]

log = logging.getLogger("pftrl")

EXIT_OK, EXIT_RUN, EXIT_CONFIG = 0, 1, 2
REPORT_NAME = "report.json"
VERIFY_NAME = "verify.json"


def _c_label(c: float | None) -> str:
    return "na" if c is None else repr(float(c))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _instance(cfg: ExperimentConfig, c: float | None, seed: int, gamma: float = 0.0) -> ProblemInstance:
    stream = FamilyStream(cfg.families_for(c), seed)
    return ProblemInstance(cfg.domain, cfg.loss, stream, gamma=gamma)


def run_unit(cfg: ExperimentConfig, c: float | None, seed: int) -> dict:
    """Every algorithm on one realised constraint stream; returns the report fragment.

    Failures are captured in the fragment rather than raised so that one bad
    coordinate does not hide the others.
    """
    T = cfg.max_horizon
    coord = {"c": c, "seed": seed}
    base = _instance(cfg, c, seed)
    stream = base.constraints
    out: dict[str, Any] = {"coordinates": coord, "runs": [], "errors": []}

    state = stream.penalty_state(T, cfg.domain.dim)
    try:
        cert = gamma_certificate(base, state, cfg.grid)
        out["gamma_certificate"] = cert.as_dict()
    except (ConditionViolated, ValueError) as exc:
        cert = None
        out["gamma_certificate"] = {"error": str(exc)}
    out["conditions"] = condition_report(
        stream, T, cfg.domain, cfg.eps, cfg.t0, cfg.grid, cfg.kappa
    ).as_dict()

    benches = {h: None for h in cfg.horizons}
    for spec in cfg.algorithms:
        run_coord = {**coord, "algorithm": spec.kind}
        gamma, adaptive = cfg.gamma.value, False
        if spec.kind == "penalized_ftrl":
            if cfg.gamma.mode == "certificate":
                if cert is None or not cert.beta > 0:
                    out["errors"].append({**run_coord, "error": "no gamma certificate for this stream"})
                    continue
                gamma = cert.gamma0 * cfg.gamma.margin
            adaptive = cfg.gamma.mode == "adaptive"
        algo = AlgorithmConfig(
            kind=spec.kind,
            horizon=T,
            gamma=gamma,
            step_scale=spec.step_scale,
            seed=seed,
            adaptive=adaptive,
            gamma_cap=cfg.gamma.cap,
            config_digest=cfg.digest,
        )
        try:
            trace = run(base.with_gamma(gamma), algo)
            trace.check_invariants(cfg.domain)
        except (SolverError, FloatingPointError, TraceInvariantError) as exc:
            out["errors"].append({**run_coord, "error": f"{type(exc).__name__}: {exc}"})
            continue
        for h in sorted(cfg.horizons):
            tr = trace.prefix(h)
            if benches[h] is None:
                benches[h] = trace_benchmarks(tr, cfg.domain, cfg.grid)
            bench = benches[h]
            R = regret(tr, bench.best)
            path = cfg.output_dir / f"t{h}" / csv_name(cfg.experiment, spec.kind, _c_label(c), seed)
            emit_csv(tr.with_regret(R), path)
            v_h = float(tr.violation_h[-1])
            v_sum = float(tr.violation_sum[-1])
            out["runs"].append({
                **run_coord,
                "horizon": h,
                "csv": str(path),
                "sha256": _sha256(path),
                "gamma": float(trace.metadata.get("gamma", gamma)) if spec.kind == "penalized_ftrl" else None,
                "final": {
                    "R": float(R[-1]),
                    "R_over_sqrt_t": float(R[-1]) / math.sqrt(h),
                    "V_h": v_h,
                    "V_sum": v_sum,
                },
                "benchmark": bench.as_dict(),
                "metadata": {k: v for k, v in trace.metadata.items()},
            })
    return out


def _summary(cfg: ExperimentConfig, runs: list[dict]) -> dict:
    """Median growth ratios between the smallest and largest horizon, per algorithm and c."""
    if len(cfg.horizons) < 2:
        return {}
    lo, hi = min(cfg.horizons), max(cfg.horizons)
    table: dict[tuple, dict[int, dict]] = {}
    for r in runs:
        table.setdefault((r["algorithm"], r["c"], r["seed"]), {})[r["horizon"]] = r["final"]
    groups: dict[tuple, dict[str, list[float]]] = {}
    for (algo, c, _), by_h in table.items():
        if lo not in by_h or hi not in by_h:
            continue
        g = groups.setdefault((algo, c), {"V_sum_ratio": [], "V_h_ratio": [], "R_sqrt_ratio": []})
        a, b = by_h[lo], by_h[hi]
        g["V_sum_ratio"].append(b["V_sum"] / a["V_sum"] if a["V_sum"] > 0 else math.inf)
        g["V_h_ratio"].append(b["V_h"] / a["V_h"] if a["V_h"] > 0 else math.inf)
        g["R_sqrt_ratio"].append(
            b["R_over_sqrt_t"] / a["R_over_sqrt_t"] if a["R_over_sqrt_t"] != 0 else math.inf
        )
    return {
        f"{algo}/c={_c_label(c)}": {k: float(np.median(v)) for k, v in vals.items()}
        for (algo, c), vals in sorted(groups.items(), key=lambda kv: (kv[0][0], _c_label(kv[0][1])))
    }


def _plan(cfg: ExperimentConfig) -> list[tuple[float | None, int]]:
    return [(c, s) for c in cfg.c_labels() for s in cfg.seeds]


def _map_units(cfg: ExperimentConfig, plan: list[tuple[float | None, int]]) -> list[dict]:
    if cfg.workers == 1 or len(plan) == 1:
        return [run_unit(cfg, c, s) for c, s in plan]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = [pool.submit(run_unit, cfg, c, s) for c, s in plan]
        return [f.result() for f in futures]


def run_experiment(cfg: ExperimentConfig, dry_run: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    plan = _plan(cfg)
    if dry_run:
        print(f"experiment {cfg.experiment}  config digest {cfg.digest}", file=stream)
        print(f"output dir {cfg.output_dir}  horizons {list(cfg.horizons)}  grid {cfg.grid}", file=stream)
        for spec in cfg.algorithms:
            for c, s in plan:
                for h in sorted(cfg.horizons):
                    name = csv_name(cfg.experiment, spec.kind, _c_label(c), s)
                    print(f"  {spec.kind:22s} c={_c_label(c):5s} seed={s:<4d} t={h:<7d} -> t{h}/{name}", file=stream)
        print(f"{len(plan) * len(cfg.algorithms) * len(cfg.horizons)} runs planned (nothing written)", file=stream)
        return EXIT_OK
    units = _map_units(cfg, plan)
    runs = sorted(
        (r for u in units for r in u["runs"]),
        key=lambda r: (r["algorithm"], _c_label(r["c"]), r["seed"], r["horizon"]),
    )
    errors = [e for u in units for e in u["errors"]]
    report = {
        "experiment": cfg.experiment,
        "config_digest": cfg.digest,
        "config": cfg.raw,
        "runs": runs,
        "streams": [
            {k: u[k] for k in ("coordinates", "gamma_certificate", "conditions")} for u in units
        ],
        "summary": _summary(cfg, runs),
        "errors": errors,
        "status": "ok" if not errors else "failed",
    }
    _write_json(cfg.output_dir / REPORT_NAME, report)
    for e in errors:
        print(f"run failed at {e}", file=sys.stderr)
    print(f"{len(runs)} CSV files and {REPORT_NAME} written to {cfg.output_dir}", file=stream)
    for key, vals in report["summary"].items():
        print(f"  {key}: " + ", ".join(f"{k}={v:.4g}" for k, v in vals.items()), file=stream)
    return EXIT_OK if not errors else EXIT_RUN


def _check_outputs(cfg: ExperimentConfig) -> list[str]:
    """Compare a previous run report's recorded digests with the files on disk."""
    path = cfg.output_dir / REPORT_NAME
    if not path.exists():
        return []
    report = json.loads(path.read_text())
    problems = []
    if report.get("config_digest") != cfg.digest:
        problems.append(f"{path}: report was produced by a different configuration")
    for r in report.get("runs", []):
        f = Path(r["csv"])
        if not f.exists():
            problems.append(f"{f}: missing")
        elif _sha256(f) != r["sha256"]:
            problems.append(f"{f}: contents differ from the recorded digest")
    return problems


def verify_experiment(cfg: ExperimentConfig, dry_run: bool = False, stream=None) -> int:
    stream = stream or sys.stdout
    plan = _plan(cfg)
    if dry_run:
        for c, s in plan:
            print(f"  verify c={_c_label(c)} seed={s} t={cfg.max_horizon}", file=stream)
        print(f"{len(plan)} streams planned (nothing written)", file=stream)
        return EXIT_OK
    streams = []
    for c, s in plan:
        inst = _instance(cfg, c, s)
        rep = condition_report(inst.constraints, cfg.max_horizon, cfg.domain, cfg.eps, cfg.t0, cfg.grid, cfg.kappa)
        d = rep.as_dict()
        streams.append({"coordinates": {"c": c, "seed": s}, "conditions": d})
        c2 = d["condition2"]
        c3_margin = max(x["margin"] for x in d["condition3"])
        print(
            f"c={_c_label(c):5s} seed={s:<4d} condition3={'pass' if d['condition3_verdict'] else 'fail'} "
            f"(margin {c3_margin:.4g})  condition2={'pass' if c2 and c2['verdict'] else 'fail'}"
            + (f" (eta {c2['eta']:.4g}, beta {c2['beta']:.4g})" if c2 else ""),
            file=stream,
        )
    tampered = _check_outputs(cfg)
    for p in tampered:
        print(f"digest check: {p}", file=sys.stderr)
    _write_json(
        cfg.output_dir / VERIFY_NAME,
        {"experiment": cfg.experiment, "config_digest": cfg.digest, "streams": streams, "digest_problems": tampered},
    )
    return EXIT_RUN if tampered else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pftrl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run the experiment matrix"), ("verify", "check constraint streams only")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML config path or bundled experiment name")
        p.add_argument("--seed-override", type=int, nargs="+", metavar="SEED")
        p.add_argument("--horizon-override", type=int, nargs="+", metavar="T")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--grid", type=int, metavar="POINTS")
        p.add_argument("--workers", type=int, metavar="N")
        p.add_argument("--dry-run", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            seeds=args.seed_override,
            horizons=args.horizon_override,
            out=args.out,
            grid=args.grid,
            workers=args.workers,
        )
    except ConfigError as exc:
        for p in exc.problems:
            print(p, file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return run_experiment(cfg, args.dry_run)
    return verify_experiment(cfg, args.dry_run)


if __name__ == "__main__":
    sys.exit(main())
