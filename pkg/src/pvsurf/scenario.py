"""Scenario files: YAML with an explicit version, units and a closed set of keys.

Every error names the offending field by dotted path and, when the value came
from a file, the line it sits on.
"""
from __future__ import annotations

import copy
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .dynamics import Background, GrowthRate, PointVortexSystem, background_from_descriptor
from .geometry import FlatTorus, Plane, Sphere, Surface
from .integrate import IntegratorConfig, RunSpec

CONFIG_VERSION = 1

_SCHEMA: Dict[str, Any] = {
    "version": int,
    "name": str,
    "units": {"length": str, "time": str},
    "surface": {"kind": str, "radius": float, "periods": list},
    "vortices": [{"position": list, "strength": float}],
    "background": {"kind": str, "rate": float, "omega": float, "velocity": list},
    "growth_rate": {"beta_x": float, "beta_omega": float},
    "integrator": {"scheme": str, "dt": float, "rtol": float, "atol": float, "max_steps": int,
                   "close_approach": float},
    "time": {"start": float, "duration": float, "sample_interval": float},
    "output": {"directory": str, "prefix": str},
    "verification": {
        "tolerance": float,
        "green_tolerance": float,
        "chi_tolerance": float,
        "epsilon": {"eps0": float, "ratio": float, "count": int},
        "times": list,
        "test_forms": [{"center": list, "radius": float, "amplitude": float}],
        "random_forms": int,
        "seed": int,
        "perturb_speed": float,
    },
}
_REQUIRED_TOP = ("version", "units", "surface", "vortices", "time")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{path or '<root>'}{where}: {message}")

    def as_dict(self) -> dict:
        return {"type": "config", "field": self.path, "line": self.line, "message": str(self)}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-10``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


# -- line tracking ------------------------------------------------------------------

def _line_map(node, path="", out=None) -> Dict[str, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = f"{path}.{k.value}" if path else str(k.value)
            out[sub] = k.start_mark.line + 1
            _line_map(v, sub, out)
            out[sub] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, f"{path}.{i}" if path else str(i), out)
    return out


def load_yaml(text: str) -> Tuple[Any, Dict[str, int]]:
    try:
        node = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("", f"YAML syntax error: {exc}", mark.line + 1 if mark else None) from None
    return data, (_line_map(node) if node is not None else {})


# -- validation --------------------------------------------------------------------

def _check(value, schema, path, lines):
    line = lines.get(path)
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {type(value).__name__}", line)
        for k, v in value.items():
            sub = f"{path}.{k}" if path else str(k)
            if k not in schema:
                raise ConfigError(sub, f"unknown key {k!r}; allowed: {sorted(schema)}", lines.get(sub))
            _check(v, schema[k], sub, lines)
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}", line)
        for i, item in enumerate(value):
            _check(item, schema[0], f"{path}.{i}", lines)
    elif schema is float:
        if value is None:
            return
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}", line)
        if not math.isfinite(value):
            raise ConfigError(path, f"expected a finite number, got {value!r}", line)
    elif schema is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}", line)
    elif schema is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}", line)
    elif schema is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}", line)
        for i, x in enumerate(value):
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise ConfigError(f"{path}.{i}", f"expected a finite number, got {x!r}", lines.get(f"{path}.{i}", line))


@dataclass
class Scenario:
    surface: Surface
    positions: np.ndarray
    strengths: np.ndarray
    background: Background
    beta: GrowthRate
    integrator: IntegratorConfig
    t0: float
    duration: float
    sample_interval: Optional[float]
    output_dir: str
    prefix: str
    verification: Dict[str, Any]
    units: Dict[str, str]
    raw: Dict[str, Any] = field(repr=False, default_factory=dict)
    name: str = ""

    @property
    def t1(self) -> float:
        return self.t0 + self.duration

    def system(self, speed: float = 1.0) -> PointVortexSystem:
        return PointVortexSystem(self.surface, self.strengths, self.background, self.beta,
                                 threshold=self.integrator.close_approach, speed=speed)

    def run_spec(self, speed: float = 1.0) -> RunSpec:
        return RunSpec(self.system(speed), self.positions, self.t0, self.t1, self.integrator)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        for key, val in overrides.items():
            set_path(raw, key, val)
        return parse_scenario(raw)


def set_path(raw: dict, dotted: str, value):
    parts = dotted.split(".")
    cur = raw
    for i, p in enumerate(parts[:-1]):
        nxt = cur[int(p)] if isinstance(cur, list) else cur.get(p)
        if nxt is None:
            if isinstance(cur, list):
                raise ConfigError(dotted, "list index out of range")
            nxt = cur[p] = {}
        cur = nxt
    last = parts[-1]
    if isinstance(cur, list):
        cur[int(last)] = value
    else:
        cur[last] = value


def _surface(raw, lines) -> Surface:
    desc = raw["surface"]
    kind = desc.get("kind")
    try:
        if kind == "plane":
            extra = set(desc) - {"kind"}
            if extra:
                raise ConfigError(f"surface.{sorted(extra)[0]}", "not a plane parameter", lines.get(f"surface.{sorted(extra)[0]}"))
            return Plane()
        if kind == "sphere":
            return Sphere(float(desc.get("radius", 1.0)))
        if kind == "torus":
            per = desc.get("periods", [1.0, 1.0])
            if len(per) != 2:
                raise ConfigError("surface.periods", "torus needs two periods", lines.get("surface.periods"))
            return FlatTorus(tuple(per))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("surface", str(exc), lines.get("surface")) from None
    raise ConfigError("surface.kind", f"unknown surface kind {kind!r}; expected plane, sphere or torus",
                      lines.get("surface.kind"))


def _blame(section: str, message: str) -> str:
    """Key of ``section`` named last in a validation message (the one the message is about)."""
    msg = message.replace("tolerances", "rtol atol")
    best, pos = section, -1
    for key in _SCHEMA[section]:
        for m in re.finditer(rf"\b{re.escape(key)}\b", msg):
            if m.start() > pos:
                best, pos = f"{section}.{key}", m.start()
    return best


_BACKGROUND_PARAMS = {"zero": set(), "linear_shear": {"rate"}, "strain": {"rate"},
                      "rigid_rotation": {"omega"}, "uniform": {"velocity"}}


def parse_scenario(raw: Any, lines: Optional[Dict[str, int]] = None) -> Scenario:
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("", "scenario must be a mapping", 1)
    _check(raw, _SCHEMA, "", lines)
    for key in _REQUIRED_TOP:
        if key not in raw:
            raise ConfigError(key, "required key missing")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported version {raw['version']}; expected {CONFIG_VERSION}", lines.get("version"))
    for key in ("length", "time"):
        if key not in raw["units"]:
            raise ConfigError(f"units.{key}", "required unit missing", lines.get("units"))

    surface = _surface(raw, lines)

    vort = raw["vortices"]
    if not vort:
        raise ConfigError("vortices", "at least one vortex is required", lines.get("vortices"))
    pos, gam = [], []
    for i, v in enumerate(vort):
        for key in ("position", "strength"):
            if key not in v:
                raise ConfigError(f"vortices.{i}.{key}", "required key missing", lines.get(f"vortices.{i}"))
        p = np.asarray(v["position"], float)
        if p.shape != (surface.dim,):
            raise ConfigError(f"vortices.{i}.position", f"{surface.kind} positions need {surface.dim} coordinates",
                              lines.get(f"vortices.{i}.position"))
        if isinstance(surface, Sphere):
            nrm = float(np.linalg.norm(p))
            if abs(nrm - 1.0) > 1e-6:
                raise ConfigError(f"vortices.{i}.position", f"sphere positions are unit vectors (norm {nrm:.6g})",
                                  lines.get(f"vortices.{i}.position"))
        if v["strength"] == 0:
            raise ConfigError(f"vortices.{i}.strength", "strength must be nonzero", lines.get(f"vortices.{i}.strength"))
        pos.append(surface.project(p))
        gam.append(float(v["strength"]))

    bgd = raw.get("background") or {}
    extra = sorted(set(bgd) - {"kind"} - _BACKGROUND_PARAMS.get(bgd.get("kind", "zero"), set(bgd)))
    if extra:
        raise ConfigError(f"background.{extra[0]}", f"not a parameter of background {bgd.get('kind', 'zero')!r}",
                          lines.get(f"background.{extra[0]}", lines.get("background")))
    try:
        background = background_from_descriptor(raw.get("background"), surface)
    except ValueError as exc:
        key = _blame("background", str(exc))
        raise ConfigError(key, str(exc), lines.get(key, lines.get("background"))) from None

    gr = raw.get("growth_rate", {})
    beta = GrowthRate(float(gr.get("beta_x", 1.0)), float(gr.get("beta_omega", 1.0)))

    tm = raw["time"]
    if "duration" not in tm:
        raise ConfigError("time.duration", "required key missing", lines.get("time"))
    duration = float(tm["duration"])
    if not duration > 0:
        raise ConfigError("time.duration", f"duration must be positive, got {duration}", lines.get("time.duration"))
    interval = tm.get("sample_interval")
    if interval is not None and not interval > 0:
        raise ConfigError("time.sample_interval", "sample_interval must be positive", lines.get("time.sample_interval"))

    integ = dict(raw.get("integrator", {}))
    integ.setdefault("scheme", "dopri45")
    try:
        cfg = IntegratorConfig(sample_interval=None if interval is None else float(interval),
                               **{k: (float(v) if isinstance(v, float) else v) for k, v in integ.items()})
    except (TypeError, ValueError) as exc:
        key = _blame("integrator", str(exc))
        raise ConfigError(key, str(exc), lines.get(key, lines.get("integrator"))) from None

    out = raw.get("output", {})
    ver = dict(raw.get("verification", {}))
    eps = ver.get("epsilon", {})
    for k in ("tolerance", "green_tolerance", "chi_tolerance", "perturb_speed"):
        if k in ver and ver[k] is not None and not ver[k] > 0:
            raise ConfigError(f"verification.{k}", "must be positive", lines.get(f"verification.{k}"))
    return Scenario(
        surface=surface, positions=np.array(pos), strengths=np.array(gam), background=background, beta=beta,
        integrator=cfg, t0=float(tm.get("start", 0.0)), duration=duration, sample_interval=cfg.sample_interval,
        output_dir=out.get("directory", "."), prefix=out.get("prefix", raw.get("name", "run")),
        verification=ver, units=dict(raw["units"]), raw=copy.deepcopy(raw), name=raw.get("name", ""),
    )


def load_scenario(path: str) -> Scenario:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("", f"cannot read scenario file: {exc}") from None
    data, lines = load_yaml(text)
    return parse_scenario(data, lines)


# -- sweep grids -------------------------------------------------------------------

def parse_grid_items(items: Sequence[str]) -> Dict[str, List[Any]]:
    """``["background.rate=-1,0.5,1", ...]`` into an ordered mapping of value lists."""
    grid: Dict[str, List[Any]] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError("grid", f"grid entry {item!r} is not of the form key=v1,v2,...")
        key, vals = item.split("=", 1)
        values = [yaml.load(v, Loader=_Loader) for v in vals.split(",") if v.strip()]
        grid[key.strip()] = values
    return grid


def load_grid(path: str) -> Dict[str, List[Any]]:
    with open(path) as fh:
        data, lines = load_yaml(fh.read())
    if not isinstance(data, dict) or set(data) != {"parameters"} or not isinstance(data["parameters"], dict):
        raise ConfigError("", "grid file must contain exactly one mapping 'parameters'", 1)
    for k, v in data["parameters"].items():
        if not isinstance(v, list):
            raise ConfigError(f"parameters.{k}", "expected a list of values", lines.get(f"parameters.{k}"))
    return dict(data["parameters"])


def expand_grid(grid: Mapping[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    if not grid:
        return []
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
