"""Experiment configuration: one YAML document per experiment."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .errors import ConfigInvalid, FieldSpecError
from .geometry import FieldSpec

TASKS = ("compare", "agmon", "weyl", "fit", "all")
CONVENTIONS = ("2n+1", "n")

DEFAULTS = {
    "task": "all",
    "seed": 0,
    "threads": 1,
    "output": "results",
    "ladder": [8, 16, 32],
    "grid": {"points": None, "factor": 8.0, "enforce": True},
    "eta": 0.4,
    "eta_units": "b0",
    "epsilon": 0.05,
    "alpha": 0.25,
    "patches": {"half_widths": None, "centers": None, "validate": True},
    "solver": {"tol": 1e-9, "start_count": 16, "max_count": 2000},
    "compare": {},
    "agmon": {},
    "weyl": {"convention": "2n+1", "n_cutoff": 8},
    "fit": {"powers": [1.0, 0.5, 0.0], "state": 1},
}

# top-level keys a task section may replace for that task only
TASK_OVERRIDABLE = ("ladder", "eta", "eta_units", "epsilon", "grid", "patches", "solver")

# keys that cannot change any number in the outputs
UNHASHED = ("output", "threads")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _coerce_numbers(node):
    """Turn numeric strings into floats; YAML 1.1 reads ``1e-10`` as a string."""
    if isinstance(node, dict):
        return {k: _coerce_numbers(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_coerce_numbers(v) for v in node]
    if isinstance(node, str):
        try:
            value = float(node)
        except ValueError:
            return node
        return value if math.isfinite(value) else node
    return node


def apply_override(data: dict, item: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigInvalid(item, "override must look like key=value")
    key, raw = item.split("=", 1)
    path = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(key, f"cannot parse value {raw!r}") from exc
    out = copy.deepcopy(data)
    node = out
    for part in path[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[path[-1]] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    spec: FieldSpec
    task: str
    ladder: tuple
    seed: int
    threads: int
    output: str
    grid_points: int  # None: use the resolution rule
    grid_factor: float
    grid_enforce: bool
    eta: float
    eta_units: str
    epsilon: float
    alpha: float
    half_widths: tuple
    centers: tuple
    validate_patches: bool
    tol: float
    start_count: int
    max_count: int
    convention: str
    n_cutoff: int
    fit_powers: tuple
    fit_state: int
    raw: dict = field(repr=False, compare=False, default=None)

    def eta_for(self, b0: float) -> float:
        return self.eta * b0 if self.eta_units == "b0" else self.eta

    def tasks(self) -> tuple:
        return TASKS[:-1] if self.task == "all" else (self.task,)

    def for_task(self, task: str) -> "ExperimentConfig":
        """Configuration with the task section's overrides applied."""
        section = {k: v for k, v in self.raw[task].items() if k in TASK_OVERRIDABLE}
        raw = copy.deepcopy(self.raw)
        for key, value in section.items():
            if isinstance(value, dict) and isinstance(raw[key], dict):
                raw[key] = _merge(raw[key], value)
            else:
                raw[key] = copy.deepcopy(value)
        raw["task"] = task
        try:
            return _validate(raw)
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"{task}.{exc.path}", str(exc).split(": ", 1)[-1]) from exc

    def hash(self) -> str:
        data = {k: v for k, v in self.raw.items() if k not in UNHASHED}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_text(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, overrides=()) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("<root>", "configuration must be a mapping")
        for item in overrides:
            data = apply_override(data, item)
        data = _coerce_numbers(data)
        unknown = set(data) - set(DEFAULTS) - {"field"}
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown key")
        raw = _merge(DEFAULTS, data)
        cfg = _validate(raw)
        for task in cfg.tasks():
            cfg.for_task(task)  # surface errors in task sections before any work
        return cfg

    @classmethod
    def from_text(cls, text: str, overrides=()) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigInvalid("<root>", f"not valid YAML: {exc}") from exc
        return cls.from_dict(data, overrides)

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigInvalid(str(path), f"cannot read: {exc.strerror}") from exc
        return cls.from_text(text, overrides)


def _number(raw, path, kind=float):
    value = raw
    for part in path.split("."):
        if not isinstance(value, dict) or part not in value:
            raise ConfigInvalid(path, "missing or misplaced entry")
        value = value[part]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {value!r}")
    if kind is int and int(value) != value:
        raise ConfigInvalid(path, f"expected an integer, got {value!r}")
    return kind(value)


def _validate(raw: dict) -> ExperimentConfig:
    for section in ("grid", "patches", "solver", "compare", "agmon", "weyl", "fit"):
        if not isinstance(raw[section], dict):
            raise ConfigInvalid(section, "must be a mapping")
    for task in TASKS[:-1]:
        allowed = set(TASK_OVERRIDABLE) | set(DEFAULTS[task])
        extra = set(raw[task]) - allowed
        if extra:
            raise ConfigInvalid(f"{task}.{sorted(extra)[0]}", "unknown key")
    if "field" not in raw:
        raise ConfigInvalid("field", "missing field description")
    block = raw["field"]
    if not isinstance(block, dict):
        raise ConfigInvalid("field", "must be a mapping")
    if "grid_points" not in block:
        # the per-power grid is chosen later; this one only locates wells
        n = raw["grid"]["points"] or 32
        block = dict(block, grid_points=[n] * len(block.get("lengths") or []))
    try:
        spec = FieldSpec.from_dict(block)
    except FieldSpecError as exc:
        raise ConfigInvalid("field", str(exc)) from exc

    task = raw["task"]
    if task not in TASKS:
        raise ConfigInvalid("task", f"must be one of {', '.join(TASKS)}")
    ladder = raw["ladder"]
    if not isinstance(ladder, list) or not ladder:
        raise ConfigInvalid("ladder", "must be a nonempty list of powers")
    if any(isinstance(p, bool) or not isinstance(p, int) or p < 1 for p in ladder):
        raise ConfigInvalid("ladder", "powers must be positive integers")
    if len(set(ladder)) != len(ladder):
        raise ConfigInvalid("ladder", "powers must be distinct")

    alpha = _number(raw, "alpha")
    if not 0.0 < alpha < 0.5:
        raise ConfigInvalid("alpha", f"must lie in (0, 1/2), got {alpha}")
    eta = _number(raw, "eta")
    if not eta > 0.0:
        raise ConfigInvalid("eta", f"must be positive, got {eta}")
    if raw["eta_units"] not in ("b0", "absolute"):
        raise ConfigInvalid("eta_units", "must be 'b0' or 'absolute'")
    epsilon = _number(raw, "epsilon")
    if not epsilon > 0.0:
        raise ConfigInvalid("epsilon", f"must be positive, got {epsilon}")

    grid = raw["grid"]
    points = grid["points"]
    if points is not None:
        points = _number(raw, "grid.points", int)
        if points < 3:
            raise ConfigInvalid("grid.points", "need at least 3 nodes per axis")
    factor = _number(raw, "grid.factor")
    if factor <= 0:
        raise ConfigInvalid("grid.factor", "must be positive")

    d = spec.dim
    patches = raw["patches"]
    hw = patches["half_widths"]
    if hw is None:
        hw = [0.25 * L for L in spec.domain.lengths]
    if not isinstance(hw, list) or len(hw) != d:
        raise ConfigInvalid("patches.half_widths", f"need {d} values")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0 for v in hw):
        raise ConfigInvalid("patches.half_widths", "values must be positive numbers")
    centers = patches["centers"]
    if centers is not None:
        if not isinstance(centers, list) or not centers or any(
            not isinstance(c, list) or len(c) != d for c in centers
        ):
            raise ConfigInvalid("patches.centers", f"need a list of {d}-vectors")
        centers = tuple(tuple(float(v) for v in c) for c in centers)

    tol = _number(raw, "solver.tol")
    if not tol > 0:
        raise ConfigInvalid("solver.tol", "must be positive")
    start_count = _number(raw, "solver.start_count", int)
    max_count = _number(raw, "solver.max_count", int)
    if not 1 <= start_count <= max_count:
        raise ConfigInvalid("solver.start_count", "need 1 <= start_count <= max_count")

    convention = raw["weyl"]["convention"]
    if convention not in CONVENTIONS:
        raise ConfigInvalid("weyl.convention", f"must be one of {', '.join(CONVENTIONS)}")
    n_cutoff = _number(raw, "weyl.n_cutoff", int)
    if n_cutoff < 0:
        raise ConfigInvalid("weyl.n_cutoff", "must be non-negative")

    powers = raw["fit"]["powers"]
    if not isinstance(powers, list) or not powers:
        raise ConfigInvalid("fit.powers", "need a nonempty list")
    state = _number(raw, "fit.state", int)
    if state < 1:
        raise ConfigInvalid("fit.state", "eigenvalue index starts at 1")
    if task == "fit" and len(ladder) < len(powers) + 2:
        raise ConfigInvalid("ladder", f"fit needs at least {len(powers) + 2} powers of p")

    threads = _number(raw, "threads", int)
    if threads < 1:
        raise ConfigInvalid("threads", "must be at least 1")

    return ExperimentConfig(
        spec=spec,
        task=task,
        ladder=tuple(int(p) for p in ladder),
        seed=_number(raw, "seed", int),
        threads=threads,
        output=str(raw["output"]),
        grid_points=points,
        grid_factor=factor,
        grid_enforce=bool(grid["enforce"]),
        eta=eta,
        eta_units=raw["eta_units"],
        epsilon=epsilon,
        alpha=alpha,
        half_widths=tuple(float(v) for v in hw),
        centers=centers,
        validate_patches=bool(patches["validate"]),
        tol=tol,
        start_count=start_count,
        max_count=max_count,
        convention=convention,
        n_cutoff=n_cutoff,
        fit_powers=tuple(float(v) for v in powers),
        fit_state=state,
        raw=raw,
    )
