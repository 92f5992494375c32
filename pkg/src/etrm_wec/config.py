"""Run configuration: YAML schema, validation and conversion to solver objects.

A config names either a built-in case::

    schema_version: 1
    case: case1

or spells the case out with ``model``, ``excitation`` and ``boundary``
sections. ``schedule``, ``solver`` and ``output`` are optional in both forms.
Every validation error carries the dotted path of the offending key.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .bvp import SolverSettings
from .cases import FIXED_INITIAL, FREE_INITIAL, BoundarySpec, CaseSpec, get_case
from .continuation import ADAPTIVE, FIXED, ContinuationSchedule
from .excitation import FourierForce, non_periodic_force, periodic_force
from .model import ModelParams

SCHEMA_VERSION = 1
OUT_DIR_ENV = "ETRM_WEC_OUT_DIR"
DEFAULT_OUT_DIR = "etrm-output"
FORMATS = ("csv", "json")
BUILTIN_NAMES = ("case1", "case2", "case3")

_TOP_KEYS = {"schema_version", "case", "name", "model", "excitation", "boundary", "schedule", "solver", "output"}
_INLINE_KEYS = ("model", "excitation", "boundary")
_MODEL_KEYS = ("m", "k", "c", "gamma")
_SCHEDULE_KEYS = ("tf_start", "tf_steps", "eps_start", "eps_target", "eps_steps", "step_policy", "max_halvings")
_SOLVER_KEYS = ("rel_tol", "abs_tol", "max_mesh", "max_newton", "initial_mesh_size", "max_refinements", "newton_retries")
_PRESETS = {"periodic": periodic_force, "non_periodic": non_periodic_force}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.key = key
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{key}: {message}{where}")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = DEFAULT_OUT_DIR
    formats: tuple = FORMATS
    resolution: int = 2001


@dataclass(frozen=True)
class RunConfig:
    case: CaseSpec
    schedule: ContinuationSchedule = field(default_factory=ContinuationSchedule)
    solver: SolverSettings = field(default_factory=SolverSettings)
    output: OutputSpec = field(default_factory=OutputSpec)
    builtin: Optional[str] = None

    def output_dir(self, override: Optional[str] = None) -> Path:
        """``override`` (command line) beats the environment, which beats the file."""
        if override:
            return Path(override)
        return Path(os.environ.get(OUT_DIR_ENV) or self.output.directory)


def parse_yaml(text: str, source: str = "<config>") -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        column = mark.column + 1 if mark else None
        raise ConfigError(source, f"YAML parse error: {exc.problem}", line, column) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(source, f"YAML parse error: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file: {exc.strerror}") from exc
    return config_from_dict(parse_yaml(text, str(path)))


def shipped_config_path(name: str) -> Path:
    """Path of a config bundled with the package, e.g. ``case1``."""
    ref = resources.files("etrm_wec.configs").joinpath(f"{name}.yaml")
    if not ref.is_file():
        raise ConfigError("case", f"no shipped config named {name!r}")
    return Path(str(ref))


def _number(section: dict, key: str, prefix: str, positive: bool = False) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{prefix}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{prefix}.{key}", "must be finite")
    if positive and value <= 0:
        raise ConfigError(f"{prefix}.{key}", f"must be positive, got {value:g}")
    return value


def _integer(section: dict, key: str, prefix: str, minimum: int) -> int:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{prefix}.{key}", f"must be at least {minimum}")
    return value


def _section(data: dict, key: str, allowed, required=()) -> dict:
    section = data.get(key)
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(key, "expected a mapping")
    for name in section:
        if name not in allowed:
            raise ConfigError(f"{key}.{name}", "unknown key")
    for name in required:
        if name not in section:
            raise ConfigError(f"{key}.{name}", "missing required key")
    return section


def _model(data: dict) -> ModelParams:
    sec = _section(data, "model", _MODEL_KEYS, required=_MODEL_KEYS)
    # epsilon is owned by the schedule; the value here is overwritten per step.
    return ModelParams(**{k: _number(sec, k, "model", positive=True) for k in _MODEL_KEYS})


def _excitation(data: dict) -> FourierForce:
    sec = _section(data, "excitation", ("preset", "scale", "terms"))
    if ("preset" in sec) == ("terms" in sec):
        raise ConfigError("excitation", "give exactly one of 'preset' or 'terms'")
    scale = _number(sec, "scale", "excitation") if "scale" in sec else None
    if "preset" in sec:
        preset = sec["preset"]
        if preset not in _PRESETS:
            raise ConfigError("excitation.preset", f"expected one of {sorted(_PRESETS)}, got {preset!r}")
        force = _PRESETS[preset]()
        if scale is not None:
            force = FourierForce(force.amplitudes, force.omegas, force.phases, scale, force.name)
        return force
    terms = sec["terms"]
    if not isinstance(terms, list) or not terms:
        raise ConfigError("excitation.terms", "expected a non-empty list of [amplitude, omega, phase]")
    rows = []
    for i, term in enumerate(terms):
        if not isinstance(term, list) or len(term) != 3:
            raise ConfigError(f"excitation.terms[{i}]", "expected [amplitude, omega, phase]")
        rows.append(tuple(_number(dict(enumerate(term)), j, f"excitation.terms[{i}]") for j in range(3)))
        if rows[-1][1] < 0:
            raise ConfigError(f"excitation.terms[{i}]", "omega must be non-negative")
    return FourierForce.from_terms(rows, 1.0 if scale is None else scale, "inline")


def _boundary(data: dict) -> BoundarySpec:
    keys = ("mode", "x1_0", "x2_0", "t0", "tf")
    sec = _section(data, "boundary", keys, required=("tf",))
    mode = sec.get("mode", FIXED_INITIAL)
    if mode not in (FIXED_INITIAL, FREE_INITIAL):
        raise ConfigError("boundary.mode", f"expected {FIXED_INITIAL!r} or {FREE_INITIAL!r}, got {mode!r}")
    vals = {k: _number(sec, k, "boundary") for k in keys[1:] if k in sec}
    t0 = vals.get("t0", 0.0)
    if not vals["tf"] > t0:
        raise ConfigError("boundary.tf", f"must exceed boundary.t0 ({t0:g}), got {vals['tf']:g}")
    return BoundarySpec(mode=mode, **vals)


def _schedule(data: dict, case: CaseSpec) -> ContinuationSchedule:
    sec = _section(data, "schedule", _SCHEDULE_KEYS)
    b = case.boundary
    kwargs: dict = {"tf_target": b.tf, "tf_start": min(b.t0 + 1.0, b.tf)}
    for key in ("tf_start", "eps_start", "eps_target"):
        if key in sec:
            kwargs[key] = _number(sec, key, "schedule", positive=True)
    if not kwargs["tf_start"] > b.t0:
        raise ConfigError("schedule.tf_start", f"must exceed boundary.t0 ({b.t0:g})")
    for key, minimum in (("tf_steps", 1), ("eps_steps", 1), ("max_halvings", 0)):
        if key in sec:
            kwargs[key] = _integer(sec, key, "schedule", minimum)
    if "step_policy" in sec:
        if sec["step_policy"] not in (FIXED, ADAPTIVE):
            raise ConfigError("schedule.step_policy", f"expected {FIXED!r} or {ADAPTIVE!r}")
        kwargs["step_policy"] = sec["step_policy"]
    try:
        return ContinuationSchedule(**kwargs)
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from exc


def _solver(data: dict) -> SolverSettings:
    sec = _section(data, "solver", _SOLVER_KEYS)
    kwargs: dict = {}
    for key in ("rel_tol", "abs_tol"):
        if key in sec:
            kwargs[key] = _number(sec, key, "solver", positive=True)
    for key in _SOLVER_KEYS[2:]:
        if key in sec:
            kwargs[key] = _integer(sec, key, "solver", 0 if key == "newton_retries" else 1)
    try:
        return SolverSettings(**kwargs)
    except ValueError as exc:
        raise ConfigError("solver", str(exc)) from exc


def _output(data: dict) -> OutputSpec:
    sec = _section(data, "output", ("directory", "formats", "resolution"))
    kwargs: dict = {}
    if "directory" in sec:
        if not isinstance(sec["directory"], str) or not sec["directory"]:
            raise ConfigError("output.directory", "expected a non-empty string")
        kwargs["directory"] = sec["directory"]
    if "formats" in sec:
        kwargs["formats"] = parse_formats(sec["formats"], "output.formats")
    if "resolution" in sec:
        res = _integer(sec, "resolution", "output", 3)
        if res % 2 == 0:
            raise ConfigError("output.resolution", "must be odd so Simpson's rule applies")
        kwargs["resolution"] = res
    return OutputSpec(**kwargs)


def parse_formats(value, key: str = "--format") -> tuple:
    items = value.split(",") if isinstance(value, str) else value
    if not isinstance(items, list) and not isinstance(items, tuple):
        raise ConfigError(key, "expected a list of formats")
    out = tuple(str(i).strip().lower() for i in items if str(i).strip())
    bad = [f for f in out if f not in FORMATS]
    if bad or not out:
        raise ConfigError(key, f"formats must be drawn from {', '.join(FORMATS)}")
    return out


def config_from_dict(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(str(key), "unknown key")
    if "schema_version" not in data:
        raise ConfigError("schema_version", "missing required key")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {data['schema_version']!r}; expected {SCHEMA_VERSION}")

    inline = [k for k in _INLINE_KEYS if k in data]
    if "case" in data:
        if inline:
            raise ConfigError(inline[0], "a built-in 'case' cannot be combined with inline case sections")
        name = data["case"]
        if name not in BUILTIN_NAMES:
            raise ConfigError("case", f"expected one of {', '.join(BUILTIN_NAMES)}, got {name!r}")
        case, builtin = get_case(name), name
    else:
        if len(inline) != len(_INLINE_KEYS):
            missing = next(k for k in _INLINE_KEYS if k not in data)
            raise ConfigError(missing, "inline cases need model, excitation and boundary (or give 'case')")
        name = data.get("name", "custom")
        if not isinstance(name, str) or not name:
            raise ConfigError("name", "expected a non-empty string")
        case, builtin = CaseSpec(name, _model(data), _excitation(data), _boundary(data)), None

    schedule = _schedule(data, case)
    case = case.with_epsilon(schedule.eps_start)
    return RunConfig(case=case, schedule=schedule, solver=_solver(data), output=_output(data), builtin=builtin)


def config_for_case(name: str) -> RunConfig:
    return config_from_dict({"schema_version": SCHEMA_VERSION, "case": name})


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`config_from_dict` (always in inline form)."""
    c = cfg.case
    return {
        "schema_version": SCHEMA_VERSION,
        "name": c.name,
        "model": {k: getattr(c.params, k) for k in _MODEL_KEYS},
        "excitation": {"scale": c.force.scale, "terms": [list(t) for t in c.force.terms]},
        "boundary": {f.name: getattr(c.boundary, f.name) for f in fields(c.boundary)},
        "schedule": {k: getattr(cfg.schedule, k) for k in _SCHEDULE_KEYS},
        "solver": {k: getattr(cfg.solver, k) for k in _SOLVER_KEYS},
        "output": {"directory": cfg.output.directory, "formats": list(cfg.output.formats), "resolution": cfg.output.resolution},
    }
