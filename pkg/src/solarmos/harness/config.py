"""Experiment configuration: defaults, YAML parsing with line-numbered
errors, and a canonical hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

from .. import engines as registry
from ..domain import DEFAULT_LEVELS, QuantileLevels, Season
from ..solar import ClearSkyConfig, ClearSkyConfigError
from .synth import SynthSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = ""
        if key is not None:
            where = f"key '{key}'"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    engines: tuple = registry.ENGINE_NAMES
    levels: tuple = DEFAULT_LEVELS
    seasons: tuple = tuple(s.value for s in Season)
    lead_times: tuple = tuple(range(1, 25))
    folds: int = 3
    daylight_threshold_wm2: float = 20.0
    min_cases: int = 50
    temporal_smoothing: bool = True
    spatial_smoothing: bool = True
    event_thresholds: tuple = (0.2, 0.5, 0.9)
    reliability_bins: int = 10
    seed: int = 0
    hyper: dict = field(default_factory=registry.default_hyper)
    clearsky: ClearSkyConfig = field(default_factory=ClearSkyConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("need at least 2 folds", "experiment.folds")
        if not self.daylight_threshold_wm2 > 0:
            raise ConfigError("must be positive", "experiment.daylight_threshold_wm2")
        if self.min_cases < 1:
            raise ConfigError("must be positive", "experiment.min_cases")
        if any(not t > 0 for t in self.event_thresholds):
            raise ConfigError("thresholds must be positive", "experiment.event_thresholds")
        for e in self.engines:
            if e not in registry.ENGINE_NAMES:
                raise ConfigError(f"unknown engine {e!r}; valid engines: {', '.join(registry.ENGINE_NAMES)}", "experiment.engines")
        valid = {s.value for s in Season}
        for s in self.seasons:
            if s not in valid:
                raise ConfigError(f"unknown season {s!r}", "experiment.seasons")
        QuantileLevels(self.levels)

    @property
    def quantile_levels(self) -> QuantileLevels:
        return QuantileLevels(self.levels)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_engines(self, names) -> "ExperimentConfig":
        return dataclasses.replace(self, engines=tuple(names))

    def canonical(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "experiment": {
                "engines": list(self.engines),
                "levels": list(self.levels),
                "seasons": list(self.seasons),
                "lead_times": list(self.lead_times),
                "folds": self.folds,
                "daylight_threshold_wm2": self.daylight_threshold_wm2,
                "min_cases": self.min_cases,
                "temporal_smoothing": self.temporal_smoothing,
                "spatial_smoothing": self.spatial_smoothing,
                "event_thresholds": list(self.event_thresholds),
                "reliability_bins": self.reliability_bins,
            },
            "engines": {k: dataclasses.asdict(v) for k, v in sorted(self.hyper.items())},
            "clearsky": {"monthly_linke": list(self.clearsky.monthly_linke), "sample_minutes": self.clearsky.sample_minutes},
            "synth": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.synth).items()},
        }

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# YAML parsing

_EXPERIMENT_KEYS = {
    "engines", "levels", "seasons", "lead_times", "folds", "daylight_threshold_wm2", "min_cases",
    "temporal_smoothing", "spatial_smoothing", "event_thresholds", "reliability_bins",
}
_TOP_KEYS = {"schema_version", "seed", "experiment", "engines", "clearsky", "synth"}
_CLEARSKY_KEYS = {"monthly_linke", "sample_minutes"}
_SYNTH_KEYS = {f.name for f in dataclasses.fields(SynthSpec)}


def _lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based line numbers from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _lines(v, path + ".", out)
    return out


def _check_keys(mapping, allowed, prefix, lines):
    if not isinstance(mapping, dict):
        raise ConfigError("expected a mapping", prefix.rstrip(".") or "<root>", lines.get(prefix.rstrip(".")))
    for k in mapping:
        if k not in allowed:
            path = f"{prefix}{k}"
            raise ConfigError(f"unknown key; expected one of {sorted(allowed)}", path, lines.get(path))


def parse_config(text: str) -> ExperimentConfig:
    """Parse YAML text into an :class:`ExperimentConfig`.

    Unknown or ill-typed keys raise :class:`ConfigError` naming the key and
    its line.
    """
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {err}", "<document>", mark.line + 1 if mark else None) from None
    data = data or {}
    lines = _lines(node) if node is not None else {}
    _check_keys(data, _TOP_KEYS, "", lines)
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version!r}", "schema_version", lines.get("schema_version"))

    kw: dict[str, Any] = {}

    def typed(path, value, kind):
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
            if kind is int and isinstance(value, bool):
                raise TypeError
            if kind is int and isinstance(value, float) and not value.is_integer():
                raise TypeError
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {kind.__name__}, got {value!r}", path, lines.get(path)) from None

    if "seed" in data:
        kw["seed"] = typed("seed", data["seed"], int)

    exp = data.get("experiment", {}) or {}
    _check_keys(exp, _EXPERIMENT_KEYS, "experiment.", lines)
    for key, value in exp.items():
        path = f"experiment.{key}"
        if key in ("engines", "seasons"):
            if not isinstance(value, list):
                raise ConfigError("expected a list", path, lines.get(path))
            kw[key] = tuple(str(v) for v in value)
        elif key == "levels":
            if value == "default":
                kw[key] = DEFAULT_LEVELS
            elif isinstance(value, list):
                kw[key] = tuple(typed(path, v, float) for v in value)
            else:
                raise ConfigError("expected a list or 'default'", path, lines.get(path))
        elif key in ("lead_times",):
            if not isinstance(value, list):
                raise ConfigError("expected a list", path, lines.get(path))
            kw[key] = tuple(typed(path, v, int) for v in value)
        elif key == "event_thresholds":
            if not isinstance(value, list):
                raise ConfigError("expected a list", path, lines.get(path))
            kw[key] = tuple(typed(path, v, float) for v in value)
        elif key in ("folds", "min_cases", "reliability_bins"):
            kw[key] = typed(path, value, int)
        elif key == "daylight_threshold_wm2":
            kw[key] = typed(path, value, float)
        else:
            kw[key] = typed(path, value, bool)

    hyper = registry.default_hyper()
    eng = data.get("engines", {}) or {}
    _check_keys(eng, set(registry.ENGINE_NAMES), "engines.", lines)
    for name, overrides in eng.items():
        path = f"engines.{name}"
        overrides = overrides or {}
        _check_keys(overrides, set(registry.hyper_fields(name)), path + ".", lines)
        base = hyper[name]
        conv = {}
        for k, v in overrides.items():
            current = getattr(base, k)
            kind = type(current) if current is not None else str
            conv[k] = typed(f"{path}.{k}", v, kind)
        try:
            hyper[name] = registry.make_hyper(name, conv)
        except ValueError as err:
            raise ConfigError(str(err), path, lines.get(path)) from None
    kw["hyper"] = hyper

    cs = data.get("clearsky", {}) or {}
    _check_keys(cs, _CLEARSKY_KEYS, "clearsky.", lines)
    try:
        kw["clearsky"] = ClearSkyConfig(
            tuple(cs.get("monthly_linke", (3.0,) * 12)), 0.0, int(cs.get("sample_minutes", 1))
        )
    except (ClearSkyConfigError, TypeError, ValueError) as err:
        raise ConfigError(str(err), "clearsky", lines.get("clearsky")) from None

    sy = data.get("synth", {}) or {}
    _check_keys(sy, _SYNTH_KEYS, "synth.", lines)
    try:
        sy = dict(sy)
        if "start" in sy:
            sy["start"] = str(sy["start"])
        if "leads" in sy:
            sy["leads"] = tuple(sy["leads"])
        kw["synth"] = SynthSpec(**sy)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err), "synth", lines.get("synth")) from None

    try:
        return ExperimentConfig(**kw)
    except ConfigError as err:
        if err.line is None and err.key in lines:
            raise ConfigError(str(err).split(": ", 1)[-1], err.key, lines[err.key]) from None
        raise
    except ValueError as err:
        raise ConfigError(str(err), "experiment", lines.get("experiment")) from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.canonical(), sort_keys=False)
