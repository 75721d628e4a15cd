"""Problem configuration: YAML file -> validated, fully resolved run settings."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .core import Interval, Orthotope, TimeGrid, Trajectory
from .estimation import synthetic_data
from .loss import LossConfig, lambda_from_config
from .models import IntegratorConfig, ModelDefinition, get_model
from .oat import OatConfig
from .shrink import ShrinkConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def _to_python(node, path=(), lines=None):
    """Convert a composed YAML node tree, recording the source line of every path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            out[key] = _to_python(value_node, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader(" ").construct_object(node, deep=True)


def parse_yaml(text: str) -> tuple[dict, dict]:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {exc}", mark.line + 1 if mark else None) from None
    lines: dict = {}
    if node is None:
        return {}, lines
    data = _to_python(node, (), lines)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", 1)
    return data, lines


@dataclass
class FactorSpec:
    name: str
    lower: float
    upper: float
    nominal: float | None = None


@dataclass
class ProblemConfig:
    model_name: str
    model_options: dict
    factors: list[FactorSpec]
    grid: TimeGrid
    loss: LossConfig
    lam: float
    integrator: IntegratorConfig
    seed: int
    oat: OatConfig
    shrink: ShrinkConfig
    fit: dict
    ua: dict
    sa: dict
    converge: dict
    data: dict | None
    nominal_file: str | None
    raw: dict = field(repr=False, default_factory=dict)
    source: Path | None = None

    @property
    def factor_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def search_box(self) -> Orthotope:
        return Orthotope(tuple(Interval(f.lower, f.upper) for f in self.factors), self.factor_names)

    def model(self) -> ModelDefinition:
        return get_model(self.model_name, **self.model_options)

    def configured_nominal(self) -> np.ndarray | None:
        if any(f.nominal is None for f in self.factors):
            return None
        return np.array([f.nominal for f in self.factors])

    def nominal(self) -> np.ndarray:
        """Nominal factors from ``nominal_file`` if given, else from the factor table."""
        if self.nominal_file:
            path = Path(self.nominal_file)
            try:
                blob = json.loads(path.read_text())
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read nominal file {path}: {exc}") from None
            values = blob.get("factors", blob)
            missing = [n for n in self.factor_names if n not in values]
            if missing:
                raise ConfigError(f"nominal file {path} lacks factors {missing}")
            x = np.array([float(values[n]) for n in self.factor_names])
        else:
            x = self.configured_nominal()
            if x is None:
                missing = [f.name for f in self.factors if f.nominal is None]
                raise ConfigError(f"no nominal value for factors {missing}")
        return x

    def data_trajectory(self, model: ModelDefinition) -> Trajectory:
        if not self.data:
            raise ConfigError("no data section: give `data: synthetic` or `data: {file: ...}`")
        if "file" in self.data:
            return read_cases(Path(self.data["file"]), self.grid)
        x = self.configured_nominal()
        if x is None:
            raise ConfigError("synthetic data needs a nominal value for every factor")
        noise = float(self.data.get("noise", 0.0))
        return synthetic_data(model, x, self.grid, noise, self.data.get("seed", self.seed),
                              self.integrator)

    def with_seed(self, seed: int) -> "ProblemConfig":
        raw = dict(self.raw)
        raw["seed"] = int(seed)
        return replace(self, seed=int(seed), shrink=replace(self.shrink, seed=int(seed)), raw=raw)


def read_cases(path: Path, grid: TimeGrid) -> Trajectory:
    """Two-column ``time,cases`` CSV whose times must match the configured grid."""
    try:
        arr = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except OSError as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    if arr.dtype.names is None or set(arr.dtype.names) != {"time", "cases"}:
        raise ConfigError(f"data file {path} must have header `time,cases`")
    t = np.atleast_1d(arr["time"])
    if t.size != len(grid) or not np.allclose(t, grid.points, rtol=0, atol=1e-9):
        raise ConfigError(f"data file {path} times do not match the configured grid")
    return Trajectory(grid, np.atleast_1d(arr["cases"]))


def _section(raw: dict, lines: dict, key: str) -> dict:
    value = raw.get(key, {}) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"`{key}` must be a mapping", lines.get((key,)))
    return value


def _grid(raw: dict, lines: dict) -> TimeGrid:
    g = raw.get("grid")
    if g is None:
        raise ConfigError("missing `grid` section")
    try:
        if isinstance(g, dict) and "points" in g:
            return TimeGrid(np.array(g["points"], dtype=float))
        if isinstance(g, dict):
            return TimeGrid.uniform(float(g["start"]), float(g["stop"]), int(g["count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid: {exc}", lines.get(("grid",))) from None
    raise ConfigError("grid must give `points` or `start`/`stop`/`count`", lines.get(("grid",)))


def _lambda(raw: dict, lines: dict) -> float:
    spec = raw.get("lambda", {"percent": 30})
    where = lines.get(("lambda",))
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("lambda must be `{percent: <p>}` or `{multiplier: <m>}`", where)
    (unit, value), = spec.items()
    try:
        lam = lambda_from_config(float(value), unit)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None
    if not lam > 0:
        raise ConfigError("lambda multiplier must be positive", where)
    return lam


def _factors(raw: dict, lines: dict, model: ModelDefinition) -> list[FactorSpec]:
    table = raw.get("factors")
    if not isinstance(table, list) or not table:
        raise ConfigError("missing `factors` list", lines.get(("factors",)))
    out = []
    for i, row in enumerate(table):
        where = lines.get(("factors", i))
        if not isinstance(row, dict) or "name" not in row:
            raise ConfigError(f"factor entry {i + 1} needs a `name`", where)
        name = str(row["name"])
        rng = row.get("range")
        if not (isinstance(rng, list) and len(rng) == 2):
            raise ConfigError(f"factor {name}: `range` must be [lower, upper]", where)
        try:
            lo, hi = float(rng[0]), float(rng[1])
        except (TypeError, ValueError):
            raise ConfigError(f"factor {name}: non-numeric range", where) from None
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ConfigError(f"factor {name}: range must be finite with lower <= upper", where)
        nominal = row.get("nominal")
        if nominal is not None:
            nominal = float(nominal)
            if not lo <= nominal <= hi:
                raise ConfigError(f"factor {name}: nominal {nominal} outside range [{lo}, {hi}]",
                                  lines.get(("factors", i, "nominal"), where))
        out.append(FactorSpec(name, lo, hi, nominal))
    names = tuple(f.name for f in out)
    if names != model.factor_names:
        raise ConfigError(f"model {model.name} expects factors {list(model.factor_names)} "
                          f"in that order, got {list(names)}", lines.get(("factors",)))
    return out


def _build(cls, section: dict, lines: dict, key: str, **extra):
    try:
        return cls(**{**section, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"`{key}`: {exc}", lines.get((key,))) from None


def load_config(source, base_dir: Path | None = None) -> ProblemConfig:
    """Parse and validate a problem configuration (path, YAML text or mapping).

    Relative file paths are resolved against the configuration's directory so
    the resolved mapping (``ProblemConfig.raw``) is self-contained.
    """
    if isinstance(source, dict):
        raw, lines, path = dict(source), {}, None
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        if path.suffix == ".json":
            blob = json.loads(text)
            raw, lines = (blob["config"] if "config" in blob else blob), {}
        else:
            raw, lines = parse_yaml(text)
        base_dir = base_dir or path.parent
    base_dir = Path(base_dir or ".").resolve()

    model_sec = raw.get("model")
    if isinstance(model_sec, str):
        model_name, options = model_sec, {}
    elif isinstance(model_sec, dict) and "name" in model_sec:
        model_name, options = model_sec["name"], dict(model_sec.get("options") or {})
    else:
        raise ConfigError("missing `model` (a name or {name, options})", lines.get(("model",)))
    try:
        model = get_model(model_name, **options)
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(exc), lines.get(("model",))) from None

    factors = _factors(raw, lines, model)
    grid = _grid(raw, lines)
    lam = _lambda(raw, lines)
    loss = _build(LossConfig, _section(raw, lines, "loss"), lines, "loss")
    integrator = _build(IntegratorConfig, _section(raw, lines, "integrator"), lines, "integrator")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("`seed` must be a non-negative integer", lines.get(("seed",)))
    oat = _build(OatConfig, _section(raw, lines, "oat"), lines, "oat", lam=lam)
    shrink = _build(ShrinkConfig, _section(raw, lines, "shrink"), lines, "shrink", lam=lam, seed=seed)

    fit = {"n_starts": 100, "tol": 1e-6, "max_evals": 1000, "filter": 0.10,
           **_section(raw, lines, "fit")}
    ua = {"n": 1000, "box": "search", **_section(raw, lines, "ua")}
    sa = {"n": 3000, "box": "search", **_section(raw, lines, "sa")}
    converge = {"sizes": [250, 500, 1000, 2000, 3000], "box": "search",
                **_section(raw, lines, "converge")}

    data = raw.get("data")
    if data == "synthetic":
        data = {"synthetic": True}
    elif data is not None and not isinstance(data, dict):
        raise ConfigError("`data` must be `synthetic` or a mapping", lines.get(("data",)))
    resolved = dict(raw)
    if data and "file" in data:
        data = {**data, "file": str((base_dir / data["file"]).resolve())}
        resolved["data"] = data
    nominal_file = raw.get("nominal_file")
    if nominal_file:
        nominal_file = str((base_dir / nominal_file).resolve())
        resolved["nominal_file"] = nominal_file
    for key, sec in (("ua", ua), ("sa", sa), ("converge", converge)):
        if sec.get("box_file"):
            sec["box_file"] = str((base_dir / sec["box_file"]).resolve())
            resolved[key] = {**(raw.get(key) or {}), "box_file": sec["box_file"]}

    return ProblemConfig(model_name, options, factors, grid, loss, lam, integrator, seed,
                         oat, shrink, fit, ua, sa, converge, data, nominal_file, resolved, path)
