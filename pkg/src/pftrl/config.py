"""Experiment configuration: a strict YAML schema with line-numbered diagnostics.

Example::

    experiment: paper-example
    domain: {lower: [-10], upper: [10]}
    loss: {kind: affine, slope: [-2], intercept: 0}
    constraints:
      - members:
          - {kind: constant, value: -0.01}
          - {kind: affine, slope: [1], intercept: 0}
        law: {kind: activation_rate, c: 1.0}
    c_values: [0.5, 0.75, 1.0]
    algorithms:
      - {kind: penalized_ftrl}
      - {kind: primal_dual, step_scale: 5}
    gamma: {mode: fixed, value: 25}
    horizons: [2500, 10000]
    seeds: [0, 1, 2]

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import yaml

from .functions import Affine, BoxDomain, Constant, QuadraticDiag, ScalarFunc
from .generators import ActivationRate, FamilySpec, IID, Perturbed, Periodic

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "AlgorithmSpec",
    "GammaSpec",
    "load_config",
    "parse_config",
    "bundled_config",
    "BUNDLED",
]

ALGORITHMS = ("penalized_ftrl", "primal_dual", "primal_dual_averaged")
GAMMA_MODES = ("fixed", "certificate", "adaptive")
BUNDLED = {"paper-example": "paper_example.yaml"}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` holds one ``line N: path: message`` entry each."""

    def __init__(self, problems: list[str]) -> None:
        super().__init__("\n".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str
    step_scale: float = 5.0


@dataclass(frozen=True)
class GammaSpec:
    mode: str = "fixed"
    value: float = 0.0
    cap: float = 1e6
    margin: float = 1.01


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    domain: BoxDomain
    loss: ScalarFunc
    constraints: tuple[FamilySpec, ...]
    c_values: tuple[float, ...] | None
    algorithms: tuple[AlgorithmSpec, ...]
    gamma: GammaSpec
    horizons: tuple[int, ...]
    seeds: tuple[int, ...]
    grid: int
    output_dir: Path
    kappa: float | None
    eps: float
    t0: int
    workers: int
    raw: dict

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the effective settings."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def max_horizon(self) -> int:
        return max(self.horizons)

    def families_for(self, c: float | None) -> tuple[FamilySpec, ...]:
        """The constraint families with every activation exponent set to ``c``."""
        if c is None:
            return self.constraints
        out = []
        for spec in self.constraints:
            if isinstance(spec.law, ActivationRate):
                spec = replace(spec, law=ActivationRate(c, spec.law.scale))
            out.append(spec)
        return tuple(out)

    def c_labels(self) -> tuple[float | None, ...]:
        return self.c_values if self.c_values else (None,)

    def with_overrides(
        self,
        seeds: list[int] | None = None,
        horizons: list[int] | None = None,
        out: str | None = None,
        grid: int | None = None,
        workers: int | None = None,
    ) -> ExperimentConfig:
        raw = dict(self.raw)
        changes: dict[str, Any] = {}
        if seeds is not None:
            raw["seeds"] = list(seeds)
            changes["seeds"] = tuple(seeds)
        if horizons is not None:
            if any(h < 1 for h in horizons):
                raise ConfigError(["--horizon-override: horizons must be positive"])
            raw["horizons"] = list(horizons)
            changes["horizons"] = tuple(horizons)
        if grid is not None:
            if grid < 101:
                raise ConfigError(["--grid: need at least 101 points per axis"])
            raw["grid"] = grid
            changes["grid"] = grid
        if out is not None:
            changes["output_dir"] = Path(out)
        if workers is not None:
            if workers < 1:
                raise ConfigError(["--workers: need at least one worker"])
            changes["workers"] = workers
        return replace(self, raw=raw, **changes)


# ------------------------------------------------------------ line tracking


def _marks(node: yaml.Node, path: tuple = ()) -> dict[tuple, int]:
    out = {path: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            out.update({p: ln for p, ln in _marks(v, path + (k.value,)).items() if p != path + (k.value,)})
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_marks(v, path + (i,)))
    return out


class _Checker:
    def __init__(self, marks: dict[tuple, int]) -> None:
        self.marks = marks
        self.problems: list[str] = []

    def fail(self, path: tuple, msg: str) -> None:
        line = None
        p = path
        while line is None and p is not None:
            line = self.marks.get(p)
            p = p[:-1] if p else None
        where = ".".join(str(s) for s in path) or "<root>"
        self.problems.append(f"line {line or '?'}: {where}: {msg}")

    def mapping(self, value: Any, path: tuple, required: tuple[str, ...], optional: tuple[str, ...]) -> dict | None:
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
            return None
        for key in value:
            if key not in required and key not in optional:
                self.fail(path + (key,), f"unknown key {key!r}")
        for key in required:
            if key not in value:
                self.fail(path, f"missing required key {key!r}")
        return value

    def number(self, value: Any, path: tuple, check: Callable[[float], bool] = lambda v: True,
               what: str = "") -> float | None:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, "expected a number")
            return None
        if not check(float(value)):
            self.fail(path, f"value {value} out of range{': ' + what if what else ''}")
            return None
        return float(value)

    def integer(self, value: Any, path: tuple, minimum: int | None = None) -> int | None:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, "expected an integer")
            return None
        if minimum is not None and value < minimum:
            self.fail(path, f"value {value} below minimum {minimum}")
            return None
        return value

    def numbers(self, value: Any, path: tuple, check: Callable[[float], bool] = lambda v: True,
                what: str = "", nonempty: bool = True) -> list[float] | None:
        if not isinstance(value, list) or (nonempty and not value):
            self.fail(path, "expected a non-empty list of numbers")
            return None
        out = [self.number(v, path + (i,), check, what) for i, v in enumerate(value)]
        return None if any(v is None for v in out) else out

    def integers(self, value: Any, path: tuple, minimum: int | None = None) -> list[int] | None:
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a non-empty list of integers")
            return None
        out = [self.integer(v, path + (i,), minimum) for i, v in enumerate(value)]
        return None if any(v is None for v in out) else out

    def choice(self, value: Any, path: tuple, options: tuple[str, ...]) -> str | None:
        if value not in options:
            self.fail(path, f"expected one of {', '.join(options)}, got {value!r}")
            return None
        return value


# ------------------------------------------------------------ sections


def _function(ck: _Checker, v: Any, path: tuple, dim: int | None) -> ScalarFunc | None:
    if not isinstance(v, dict) or "kind" not in v:
        ck.fail(path, "function needs a 'kind' (constant, affine, quadratic_diag)")
        return None
    kind = ck.choice(v["kind"], path + ("kind",), ("constant", "affine", "quadratic_diag"))
    if kind == "constant":
        if ck.mapping(v, path, ("kind", "value"), ()) is None or "value" not in v:
            return None
        value = ck.number(v["value"], path + ("value",))
        return None if value is None else Constant(value)
    if kind == "affine":
        if ck.mapping(v, path, ("kind", "slope"), ("intercept",)) is None or "slope" not in v:
            return None
        slope = ck.numbers(v["slope"], path + ("slope",))
        icpt = ck.number(v.get("intercept", 0.0), path + ("intercept",))
        if slope is None or icpt is None:
            return None
        if dim is not None and len(slope) != dim:
            ck.fail(path + ("slope",), f"dimension {len(slope)} does not match domain dimension {dim}")
            return None
        return Affine(tuple(slope), icpt)
    if kind == "quadratic_diag":
        if ck.mapping(v, path, ("kind", "diag", "linear"), ("intercept",)) is None:
            return None
        if "diag" not in v or "linear" not in v:
            return None
        diag = ck.numbers(v["diag"], path + ("diag",), lambda x: x >= 0, "diagonal must be nonnegative")
        lin = ck.numbers(v["linear"], path + ("linear",))
        icpt = ck.number(v.get("intercept", 0.0), path + ("intercept",))
        if diag is None or lin is None or icpt is None:
            return None
        if len(diag) != len(lin) or (dim is not None and len(diag) != dim):
            ck.fail(path, "diag/linear dimensions must match the domain")
            return None
        return QuadraticDiag(tuple(diag), tuple(lin), icpt)
    return None


def _law(ck: _Checker, v: Any, path: tuple):
    if not isinstance(v, dict) or "kind" not in v:
        ck.fail(path, "law needs a 'kind' (iid, periodic, activation_rate, perturbed)")
        return None
    kind = ck.choice(v["kind"], path + ("kind",), ("iid", "periodic", "activation_rate", "perturbed"))
    if kind == "iid":
        if ck.mapping(v, path, ("kind", "probs"), ()) is None or "probs" not in v:
            return None
        probs = ck.numbers(v["probs"], path + ("probs",), lambda p: p >= 0, "probabilities are nonnegative")
        if probs is None:
            return None
        if abs(sum(probs) - 1.0) > 1e-12:
            ck.fail(path + ("probs",), f"probabilities sum to {sum(probs)}, not 1")
            return None
        return IID(tuple(probs))
    if kind == "periodic":
        if ck.mapping(v, path, ("kind", "periods"), ()) is None or "periods" not in v:
            return None
        periods = ck.integers(v["periods"], path + ("periods",), 1)
        return None if periods is None else Periodic(tuple(periods))
    if kind == "activation_rate":
        if ck.mapping(v, path, ("kind",), ("c", "scale")) is None:
            return None
        c = ck.number(v.get("c", 1.0), path + ("c",), lambda x: 0 < x <= 1, "need 0 < c <= 1")
        scale = ck.number(v.get("scale", 0.1), path + ("scale",), lambda x: x > 0, "need scale > 0")
        return None if c is None or scale is None else ActivationRate(c, scale)
    if kind == "perturbed":
        if ck.mapping(v, path, ("kind",), ("low", "high", "bound", "offsets")) is None:
            return None
        low = ck.number(v.get("low", 0.0), path + ("low",))
        high = ck.number(v.get("high", 0.0), path + ("high",))
        bound = None if v.get("bound") is None else ck.number(v["bound"], path + ("bound",))
        offsets = None if v.get("offsets") is None else ck.numbers(v["offsets"], path + ("offsets",))
        if low is None or high is None:
            return None
        try:
            return Perturbed(low, high, bound, None if offsets is None else tuple(offsets))
        except ValueError as exc:
            ck.fail(path, str(exc))
    return None


def _family(ck: _Checker, v: Any, path: tuple, dim: int | None) -> FamilySpec | None:
    if ck.mapping(v, path, ("members", "law"), ("limit_probs",)) is None:
        return None
    if "members" not in v or "law" not in v:
        return None
    if not isinstance(v["members"], list) or not v["members"]:
        ck.fail(path + ("members",), "expected a non-empty list of functions")
        return None
    members = [_function(ck, f, path + ("members", i), dim) for i, f in enumerate(v["members"])]
    law = _law(ck, v["law"], path + ("law",))
    limit = None
    if v.get("limit_probs") is not None:
        limit = ck.numbers(v["limit_probs"], path + ("limit_probs",), lambda p: p >= 0)
        if limit is None:
            return None
    if law is None or any(m is None for m in members):
        return None
    try:
        return FamilySpec(tuple(members), law, None if limit is None else tuple(limit))
    except ValueError as exc:
        ck.fail(path, str(exc))
        return None


_TOP_REQUIRED = ("experiment", "domain", "loss", "constraints", "algorithms", "horizons", "seeds")
_TOP_OPTIONAL = ("c_values", "gamma", "grid", "output_dir", "kappa", "condition3", "workers")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError([f"{source}: line {line}: YAML syntax error: {exc}"]) from exc
    if node is None:
        raise ConfigError([f"{source}: empty configuration"])
    ck = _Checker(_marks(node))
    top = ck.mapping(data, (), _TOP_REQUIRED, _TOP_OPTIONAL)
    if top is None:
        raise ConfigError([f"{source}: {p}" for p in ck.problems])

    name = top.get("experiment")
    if not isinstance(name, str) or not name or any(ch in name for ch in "/\\ "):
        ck.fail(("experiment",), "expected a non-empty name without spaces or slashes")

    domain = None
    dom = top.get("domain")
    if dom is not None and ck.mapping(dom, ("domain",), ("lower", "upper"), ()) is not None:
        lo = ck.numbers(dom.get("lower"), ("domain", "lower"))
        hi = ck.numbers(dom.get("upper"), ("domain", "upper"))
        if lo is not None and hi is not None:
            try:
                domain = BoxDomain(tuple(lo), tuple(hi))
            except ValueError as exc:
                ck.fail(("domain",), str(exc))
    dim = domain.dim if domain is not None else None

    loss = _function(ck, top.get("loss"), ("loss",), dim) if "loss" in top else None

    families: list[FamilySpec | None] = []
    cons = top.get("constraints")
    if "constraints" in top:
        if not isinstance(cons, list) or not cons:
            ck.fail(("constraints",), "expected a non-empty list of constraint families")
        else:
            families = [_family(ck, f, ("constraints", j), dim) for j, f in enumerate(cons)]

    c_values = None
    if top.get("c_values") is not None:
        cv = ck.numbers(top["c_values"], ("c_values",), lambda x: 0 < x <= 1, "need 0 < c <= 1")
        if cv is not None:
            c_values = tuple(cv)
            if not any(f is not None and isinstance(f.law, ActivationRate) for f in families):
                ck.fail(("c_values",), "c_values given but no constraint uses an activation_rate law")

    algos: list[AlgorithmSpec] = []
    al = top.get("algorithms")
    if "algorithms" in top:
        if not isinstance(al, list) or not al:
            ck.fail(("algorithms",), "expected a non-empty list")
        else:
            for i, a in enumerate(al):
                p = ("algorithms", i)
                if ck.mapping(a, p, ("kind",), ("step_scale",)) is None or "kind" not in a:
                    continue
                kind = ck.choice(a["kind"], p + ("kind",), ALGORITHMS)
                step = ck.number(a.get("step_scale", 5.0), p + ("step_scale",), lambda x: x > 0, "need > 0")
                if kind is not None and step is not None:
                    algos.append(AlgorithmSpec(kind, step))
            if len({a.kind for a in algos}) != len(algos):
                ck.fail(("algorithms",), "each algorithm kind may appear once")

    gamma = GammaSpec()
    if top.get("gamma") is not None:
        g = ck.mapping(top["gamma"], ("gamma",), ("mode",), ("value", "cap", "margin"))
        if g is not None and "mode" in g:
            mode = ck.choice(g["mode"], ("gamma", "mode"), GAMMA_MODES)
            value = ck.number(g.get("value", 0.0), ("gamma", "value"), lambda x: x >= 0, "need >= 0")
            cap = ck.number(g.get("cap", 1e6), ("gamma", "cap"), lambda x: x > 0, "need > 0")
            margin = ck.number(g.get("margin", 1.01), ("gamma", "margin"), lambda x: x > 1, "need > 1")
            if mode == "fixed" and "value" not in g:
                ck.fail(("gamma",), "fixed mode needs a 'value'")
            if None not in (mode, value, cap, margin):
                gamma = GammaSpec(mode, value, cap, margin)

    horizons = ck.integers(top.get("horizons"), ("horizons",), 1) if "horizons" in top else None
    seeds = ck.integers(top.get("seeds"), ("seeds",), 0) if "seeds" in top else None
    grid = ck.integer(top.get("grid", 2001), ("grid",), 101)
    workers = ck.integer(top.get("workers", 1), ("workers",), 1)
    kappa = None
    if top.get("kappa") is not None:
        kappa = ck.number(top["kappa"], ("kappa",), lambda x: x >= 0, "need >= 0")
    eps, t0 = 1.0, 0
    if top.get("condition3") is not None:
        c3 = ck.mapping(top["condition3"], ("condition3",), (), ("eps", "t0"))
        if c3 is not None:
            eps = ck.number(c3.get("eps", 1.0), ("condition3", "eps"), lambda x: x > 0, "need > 0") or 1.0
            t0 = ck.integer(c3.get("t0", 0), ("condition3", "t0"), 0) or 0
    out = top.get("output_dir", f"out/{name}")
    if not isinstance(out, str):
        ck.fail(("output_dir",), "expected a path string")

    if ck.problems:
        raise ConfigError([f"{source}: {p}" for p in ck.problems])
    if horizons is not None and t0 >= min(horizons):
        raise ConfigError([f"{source}: condition3.t0 must be below every horizon"])
    if domain.dim > 2:
        raise ConfigError([f"{source}: domain: experiments need dimension 1 or 2 for the benchmark oracles"])
    out_path = Path(out)
    return ExperimentConfig(
        experiment=name,
        domain=domain,
        loss=loss,
        constraints=tuple(families),
        c_values=c_values,
        algorithms=tuple(algos),
        gamma=gamma,
        horizons=tuple(horizons),
        seeds=tuple(seeds),
        grid=grid,
        output_dir=out_path,
        kappa=kappa,
        eps=eps,
        t0=t0,
        workers=workers,
        raw={k: v for k, v in data.items() if k not in ("output_dir", "workers")},
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists() and str(path) in BUNDLED:
        return bundled_config(str(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read: {exc}"]) from exc
    return parse_config(text, str(path))


def bundled_config(name: str) -> ExperimentConfig:
    """A configuration shipped with the package, looked up by experiment name."""
    from importlib import resources

    if name not in BUNDLED:
        raise ConfigError([f"no bundled configuration named {name!r}"])
    text = resources.files("pftrl").joinpath("configs", BUNDLED[name]).read_text()
    return parse_config(text, f"<bundled {name}>")
