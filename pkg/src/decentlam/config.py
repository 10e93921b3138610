"""Experiment configuration: a sectioned ``key = value`` text format.

Example::

    [problem]
    n = 8
    d = 30
    m = 50
    seed = 42

    [topology]
    kind = mesh

    [algo.dmsgd]
    gamma = 0.001
    beta = 0.8

    [run]
    max_iters = 2000

Sections are ``[problem]``, ``[topology]``, one ``[algo.LABEL]`` per
algorithm and ``[run]``. An algorithm section may name its recursion with
``kind =``; otherwise the label is used.
"""

from __future__ import annotations

import configparser
import dataclasses
import itertools
from dataclasses import dataclass, fields, replace
from typing import Any

from .errors import ConfigError
from .optimizers import STEPPERS, ScheduleKind
from .problems import GradMode
from .topology import TopologyKind, _MIN_NODES

__all__ = [
    "ProblemSpec",
    "TopologySpec",
    "AlgoSpec",
    "RunSpec",
    "ExperimentConfig",
    "SweepSpec",
    "parse_config",
    "serialize_config",
    "validate_config",
    "apply_override",
    "sweep_cells",
]

_ALGO_ALIASES = {
    "psgd": "psgd", "pmsgd": "psgd",
    "dsgd": "dsgd", "atc_dsgd": "dsgd",
    "awc_dsgd": "awc_dsgd",
    "dmsgd": "dmsgd",
    "dmsgd_reform": "dmsgd_reform", "dmsgd_reformulated": "dmsgd_reform",
    "decentlam": "decentlam",
    "decentlam_reform": "decentlam_reform", "decentlam_reformulated": "decentlam_reform",
    "da_dmsgd": "da_dmsgd",
    "awc_dmsgd": "awc_dmsgd",
}


def _algo_kind(value: str) -> str:
    key = value.strip().lower().replace("-", "_")
    if key not in _ALGO_ALIASES:
        raise ValueError(f"unknown algorithm {value!r} (choose from {', '.join(sorted(STEPPERS))})")
    return _ALGO_ALIASES[key]


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    d: int
    m: int
    seed: int
    hetero: float = 0.01
    noise_mag: float = 0.01
    sigma_sq: float = 0.0


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    seed: int = 0
    n: int | None = None


@dataclass(frozen=True)
class AlgoSpec:
    name: str
    kind: str
    gamma: float
    beta: float = 0.0
    schedule: str = "constant"
    k0: float = 1.0
    factor: float = 0.1
    period: int = 1
    grad_mode: str = "full"
    batch_size: int = 1


@dataclass(frozen=True)
class RunSpec:
    max_iters: int
    metric_every: int = 1
    bias_mode: bool = False
    bias_tol: float = 1e-13
    bias_max_iters: int = 1_000_000
    residual_tol: float = 1e-8
    output: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec
    topology: TopologySpec
    algos: tuple[AlgoSpec, ...]
    run: RunSpec


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axes: tuple = ()  # ((path, (values...)), ...)
    cross: bool = True


_REQUIRED = {
    "problem": ("n", "d", "m", "seed"),
    "topology": ("kind",),
    "algo": ("gamma",),
    "run": ("max_iters",),
}

_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _coerce(f: dataclasses.Field, raw: str) -> Any:
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    text = raw.strip()
    if "None" in kind and text.lower() in ("", "none"):
        return None
    if kind.startswith("int"):
        value = float(text) if any(c in text for c in ".eE") else int(text)
        if isinstance(value, float):
            if not value.is_integer():
                raise ValueError(f"expected an integer, got {raw!r}")
            value = int(value)
        return value
    if kind.startswith("float"):
        return float(text)
    if kind.startswith("bool"):
        if text.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[text.lower()]
    return text


def _build(cls, values: dict, where: str, issues: list, extra: dict | None = None):
    """Instantiate ``cls`` from raw strings, recording every problem in ``issues``."""
    kwargs = dict(extra or {})
    known = {f.name: f for f in fields(cls)}
    for key, raw in values.items():
        if key not in known or key in kwargs:
            issues.append((f"{where}.{key}", "unknown field"))
            continue
        try:
            kwargs[key] = _coerce(known[key], raw)
        except ValueError as exc:
            issues.append((f"{where}.{key}", str(exc)))
    missing = [name for name, f in known.items()
               if name not in kwargs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        return None
    return cls(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a configuration document.

    Raises :class:`ConfigError` listing every syntax or validation problem.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                       empty_lines_in_values=False)
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        if not getattr(exc, "errors", None):  # missing section header carries lineno instead
            raise ConfigError([(f"line {exc.lineno}", "parse error: key outside any [section]")]) from None
        raise ConfigError([(f"line {line}", f"parse error: cannot read {text.strip()}")
                           for line, text in exc.errors]) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError([(f"line {line}" if line else "document", f"parse error: {exc.message}")]) from None

    issues: list = []
    sections = parser.sections()
    for name in sections:
        if name not in ("problem", "topology", "run") and not name.startswith("algo."):
            issues.append((name, "unknown section"))

    def raw(name):
        return dict(parser[name]) if parser.has_section(name) else {}

    for sec in ("problem", "topology", "run"):
        for key in _REQUIRED[sec]:
            if key not in raw(sec):
                issues.append((f"{sec}.{key}", "required field missing"))
    algo_sections = [s for s in sections if s.startswith("algo.")]
    if not algo_sections:
        issues.append(("algo", "at least one [algo.NAME] section is required (fields: gamma)"))

    problem = _build(ProblemSpec, raw("problem"), "problem", issues)
    topology = _build(TopologySpec, raw("topology"), "topology", issues)
    run = _build(RunSpec, raw("run"), "run", issues)
    algos = []
    for sec in algo_sections:
        label = sec[len("algo."):]
        values = raw(sec)
        kind_raw = values.pop("kind", label)
        if "gamma" not in values:
            issues.append((f"{sec}.gamma", "required field missing"))
        try:
            kind = _algo_kind(kind_raw)
        except ValueError as exc:
            issues.append((f"{sec}.kind", str(exc)))
            kind = kind_raw
        spec = _build(AlgoSpec, values, sec, issues, extra={"name": label, "kind": kind})
        if spec is not None:
            algos.append(spec)

    issues += _check_parts(problem, topology, algos, run)
    if issues or problem is None or topology is None or run is None:
        raise ConfigError(issues)
    return ExperimentConfig(problem=problem, topology=topology, algos=tuple(algos), run=run)


def _check_problem(p: ProblemSpec) -> list:
    issues = []
    for key in ("n", "d", "m"):
        if getattr(p, key) < 1:
            issues.append((f"problem.{key}", f"{key} must be >= 1"))
    for key in ("hetero", "noise_mag", "sigma_sq"):
        if not getattr(p, key) >= 0:
            issues.append((f"problem.{key}", f"{key} must be >= 0"))
    if p.seed < 0:
        issues.append(("problem.seed", "seed must be >= 0"))
    return issues


def _check_topology(t: TopologySpec, p: ProblemSpec | None, r: RunSpec | None) -> list:
    issues = []
    try:
        kind = TopologyKind.parse(t.kind)
        if p is not None and p.n < _MIN_NODES[kind]:
            issues.append(("topology.kind", f"{kind.value} needs n >= {_MIN_NODES[kind]}"))
        if r is not None and r.bias_mode and kind is TopologyKind.BIPARTITE:
            issues.append(("run.bias_mode", "limiting bias needs a static topology"))
    except ValueError as exc:
        issues.append(("topology.kind", str(exc)))
    if p is not None and t.n is not None and t.n != p.n:
        issues.append(("topology.n", f"topology n={t.n} disagrees with problem n={p.n}"))
    if t.seed < 0:
        issues.append(("topology.seed", "seed must be >= 0"))
    return issues


def _check_algo(a: AlgoSpec, p: ProblemSpec | None, r: RunSpec | None) -> list:
    issues = []
    where = f"algo.{a.name}"
    if a.kind not in STEPPERS:
        issues.append((f"{where}.kind", f"unknown algorithm {a.kind!r}"))
    if not a.gamma > 0:
        issues.append((f"{where}.gamma", "gamma must be > 0"))
    if not a.beta >= 0:
        issues.append((f"{where}.beta", "beta must be >= 0"))
    if not a.beta < 1:
        issues.append((f"{where}.beta", "beta must be < 1"))
    try:
        sched = ScheduleKind.parse(a.schedule)
        if sched is ScheduleKind.INVERSE_TIME and not a.k0 > 0:
            issues.append((f"{where}.k0", "k0 must be > 0"))
        if sched is ScheduleKind.STEP_DECAY:
            if not 0 < a.factor < 1:
                issues.append((f"{where}.factor", "factor must lie in (0, 1)"))
            if a.period < 1:
                issues.append((f"{where}.period", "period must be >= 1"))
        if r is not None and r.bias_mode and sched is not ScheduleKind.CONSTANT:
            issues.append((f"{where}.schedule", "limiting bias needs a constant learning rate"))
        if a.kind == "decentlam_reform" and sched is not ScheduleKind.CONSTANT:
            issues.append((f"{where}.schedule", "reformulated DecentLaM assumes a constant learning rate"))
    except ValueError as exc:
        issues.append((f"{where}.schedule", str(exc)))
    try:
        mode = GradMode.parse(a.grad_mode)
        if a.batch_size < 1:
            issues.append((f"{where}.batch_size", "batch_size must be >= 1"))
        elif p is not None and mode is GradMode.MINIBATCH and a.batch_size > p.m:
            issues.append((f"{where}.batch_size", f"batch_size must be <= m={p.m}"))
    except ValueError as exc:
        issues.append((f"{where}.grad_mode", str(exc)))
    return issues


def _check_run(r: RunSpec) -> list:
    issues = []
    if r.max_iters < 0:
        issues.append(("run.max_iters", "max_iters must be >= 0"))
    if r.metric_every < 1:
        issues.append(("run.metric_every", "metric_every must be >= 1"))
    if not r.bias_tol > 0:
        issues.append(("run.bias_tol", "bias_tol must be > 0"))
    if r.bias_max_iters < 1:
        issues.append(("run.bias_max_iters", "bias_max_iters must be >= 1"))
    if not r.residual_tol > 0:
        issues.append(("run.residual_tol", "residual_tol must be > 0"))
    return issues


def _check_parts(problem, topology, algos, run) -> list:
    """Semantic checks on whichever parts were built; ``None`` parts are skipped."""
    issues = []
    if problem is not None:
        issues += _check_problem(problem)
    if topology is not None:
        issues += _check_topology(topology, problem, run)
    names = [a.name for a in algos]
    for dup in sorted({x for x in names if names.count(x) > 1}):
        issues.append((f"algo.{dup}", "duplicate algorithm label"))
    for a in algos:
        issues += _check_algo(a, problem, run)
    if run is not None:
        issues += _check_run(run)
    return issues


def _check_values(cfg: ExperimentConfig) -> list:
    issues = _check_parts(cfg.problem, cfg.topology, cfg.algos, cfg.run)
    if not cfg.algos:
        issues.insert(0, ("algo", "at least one algorithm is required"))
    return issues


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    issues = _check_values(cfg)
    if issues:
        raise ConfigError(issues)
    return cfg


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _section(name: str, obj, skip=()) -> list[str]:
    lines = [f"[{name}]"]
    for f in fields(obj):
        if f.name in skip:
            continue
        value = getattr(obj, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_fmt(value)}")
    return lines


def serialize_config(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = _section("problem", cfg.problem) + [""] + _section("topology", cfg.topology) + [""]
    for a in cfg.algos:
        lines += _section(f"algo.{a.name}", a, skip=("name",)) + [""]
    lines += _section("run", cfg.run)
    return "\n".join(lines) + "\n"


def apply_override(cfg: ExperimentConfig, path: str, value) -> ExperimentConfig:
    """Return a copy of ``cfg`` with the scalar at ``path`` replaced.

    Paths look like ``problem.hetero``, ``run.max_iters``, ``algo.dmsgd.beta``
    or ``algo.*.beta`` (every algorithm).
    """
    parts = path.strip().lower().split(".")

    def coerced(obj, key):
        f = {f.name: f for f in fields(obj)}.get(key)
        if f is None or key == "name":
            raise ConfigError([(path, "does not resolve to a scalar configuration field")])
        if isinstance(value, str):
            try:
                return _coerce(f, value)
            except ValueError as exc:
                raise ConfigError([(path, str(exc))]) from None
        return value

    if len(parts) == 2 and parts[0] in ("problem", "topology", "run"):
        section = getattr(cfg, parts[0])
        return replace(cfg, **{parts[0]: replace(section, **{parts[1]: coerced(section, parts[1])})})
    if len(parts) == 3 and parts[0] == "algo":
        label, key = parts[1], parts[2]
        hits = [a for a in cfg.algos if label == "*" or a.name.lower() == label]
        if not hits:
            raise ConfigError([(path, f"no algorithm labelled {label!r}")])
        algos = []
        for a in cfg.algos:
            if label == "*" or a.name.lower() == label:
                new = coerced(a, key)
                if key == "kind":
                    new = _algo_kind(str(new))
                a = replace(a, **{key: new})
            algos.append(a)
        return replace(cfg, algos=tuple(algos))
    raise ConfigError([(path, "does not resolve to a scalar configuration field")])


def sweep_cells(spec: SweepSpec) -> list[tuple[dict, ExperimentConfig]]:
    """Expand a sweep into ``(assignment, config)`` pairs in deterministic grid order."""
    if not spec.axes:
        return [({}, spec.base)]
    paths = [p for p, _ in spec.axes]
    value_lists = [tuple(v) for _, v in spec.axes]
    if spec.cross:
        combos = itertools.product(*value_lists)
    else:
        if len({len(v) for v in value_lists}) != 1:
            raise ConfigError([("axes", "zipped sweep axes must have equal lengths")])
        combos = zip(*value_lists)
    cells = []
    for combo in combos:
        cfg = spec.base
        for path, value in zip(paths, combo):
            cfg = apply_override(cfg, path, value)
        cells.append((dict(zip(paths, combo)), cfg))
    return cells
