"""Run configuration files (TOML).

Schema::

    [model]                       # required
    w = [1.0, 0.538, ...]         # input filter taps, w[0] != 0
    h = [1.594, ...]              # output filter taps
    g_p = 1.0                     # optional, default 1.0
    p = 3                         # optional, default 3

    [experiment]                  # optional
    snr_db = [10, 20, 30, 40, 50, 60]
    trials = 100
    seed = 0
    include_failures_as_is = false
    estimators = [{ name = "cptoep" }, { name = "n_cals", options = { n_starts = 10 } }]

    [experiment.cals]             # optional CALS / quasi-Newton stopping rules
    max_iters = 2000
    rel_tol = 1e-10
    h_zero_guard = 1e-12

    [output]                      # optional
    dir = "results"
    formats = ["csv", "json", "table"]

Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .estimators import METHODS, CalsOptions
from .montecarlo import EstimatorSpec, McConfig
from .whmodel import WhParams

_number = {"type": "number"}
_numbers = {"type": "array", "items": _number, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["w", "h"],
            "properties": {
                "w": _numbers,
                "h": _numbers,
                "g_p": _number,
                "p": {"type": "integer", "minimum": 1, "maximum": 6},
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "snr_db": _numbers,
                "trials": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "include_failures_as_is": {"type": "boolean"},
                "estimators": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["name"],
                        "properties": {
                            "name": {"enum": list(METHODS)},
                            "options": {
                                "type": "object",
                                "additionalProperties": False,
                                "properties": {"n_starts": {"type": "integer", "minimum": 1}},
                            },
                        },
                    },
                },
                "cals": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "max_iters": {"type": "integer", "minimum": 1},
                        "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                        "h_zero_guard": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {
                    "type": "array",
                    "items": {"enum": ["csv", "json", "table"]},
                    "uniqueItems": True,
                },
            },
        },
    },
}

DEFAULT_ESTIMATORS = [
    {"name": "n_cals", "options": {"n_starts": 1}},
    {"name": "n_cals", "options": {"n_starts": 5}},
    {"name": "n_cals", "options": {"n_starts": 10}},
    {"name": "cptoep"},
    {"name": "cptoep_cals"},
    {"name": "cptoep_qn"},
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending location."""


@dataclass
class RunConfig:
    model: dict
    snr_db: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    trials: int = 100
    seed: int = 0
    include_failures_as_is: bool = False
    estimators: list = field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    cals: dict = field(default_factory=dict)
    out_dir: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json", "table"])
    source: str = "<config>"

    def params(self):
        m = self.model
        return WhParams(m["w"], m["h"], m.get("g_p", 1.0), m.get("p", 3))

    def cals_options(self):
        return CalsOptions(**self.cals)

    def mc_config(self):
        return McConfig(
            params=self.params(),
            snr_db_grid=self.snr_db,
            n_trials=self.trials,
            estimators=[EstimatorSpec.parse(e) for e in self.estimators],
            master_seed=self.seed,
            cals_opts=self.cals_options(),
            include_failures_as_is=self.include_failures_as_is,
        )


def _location(err):
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate(data, source="<config>"):
    """Check ``data`` against :data:`SCHEMA` and build a :class:`RunConfig`."""
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(data),
                    key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("\n".join(f"{source}: {_location(e)}: {e.message}" for e in errors))
    exp = data.get("experiment", {})
    out = data.get("output", {})
    cfg = RunConfig(model=dict(data["model"]), source=source)
    if "snr_db" in exp:
        cfg.snr_db = [float(s) for s in exp["snr_db"]]
    cfg.trials = exp.get("trials", cfg.trials)
    cfg.seed = exp.get("seed", cfg.seed)
    cfg.include_failures_as_is = exp.get("include_failures_as_is", False)
    if "estimators" in exp:
        cfg.estimators = exp["estimators"]
    cfg.cals = dict(exp.get("cals", {}))
    cfg.out_dir = out.get("dir", cfg.out_dir)
    cfg.formats = out.get("formats", cfg.formats)
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(f"{source}: model: {exc}") from exc
    try:
        cfg.mc_config()
    except ValueError as exc:
        raise ConfigError(f"{source}: experiment: {exc}") from exc
    return cfg


def load_config(path):
    """Parse and validate a TOML run configuration. ``OSError`` propagates."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate(data, str(path))
