"""Run configuration: a TOML file with sections model, scheme, run, output, task.

Example::

    [model]
    alpha = 1.0
    entries = [["1 + 0.1*sin(x2)", "0"], ["0", "1"]]
    region = [[-10, 10], [-10, 10]]

    [scheme]
    mode = "fixed"          # or "jump-adapted" (then beta is required)
    dt = 0.001

    [run]
    seed = 7
    n = 10000

    [output]
    directory = "out"

    [task]                  # keys depend on the subcommand
    x0 = [0.0, 0.0]
    domain = { kind = "ball", radius = 1.0 }

Precedence: command-line flags, then the file, then built-in defaults; the
seed falls back to ``$STABLE_SDE_SEED`` when neither flag nor file sets it.
Unknown sections and keys are errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from .engine import Domain, PathScheme
from .field import MatrixField
from .rng import resolve_seed
from .stable_driver import StableParams, TruncationScheme


class ConfigError(ValueError):
    pass


BASE_DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"dimension": None, "alpha": 1.0, "scale": 1.0, "entries": None, "region": None,
              "lambda_bound": None},
    "scheme": {"mode": "fixed", "dt": 1e-3, "beta": None, "max_steps": 10_000_000, "t_cap": 100.0},
    "run": {"seed": None, "n": 10_000, "threads": None},
    "output": {"directory": "out", "formats": ["json", "csv"]},
}

_BALL = {"kind": "ball", "center": None, "radius": 1.0}

TASK_DEFAULTS: dict[str, dict[str, Any]] = {
    "sample": {"dt": 1.0, "u": [0.25, 0.5, 1.0, 2.0, 4.0], "write_samples": False},
    "simulate": {"x0": None, "horizon": 1.0, "domain": None},
    "exit-time": {"x0": None, "domain": _BALL, "m_max": 5, "refine": True},
    "occupation": {"x0": None, "domain": _BALL, "region": {"kind": "box", "center": None,
                                                            "half_widths": 0.25},
                   "refine": True},
    "steering": {"x0": None, "axis": 1, "r": 0.5, "gamma": 0.3, "t0": 1.0},
    "tube": {"times": [0.0, 1.0], "vertices": None, "eps": 0.5, "t0": None},
    "hitting": {"starts": None, "target": {"kind": "box", "center": None, "half_widths": 0.05},
                "container": {"kind": "box", "center": None, "half_widths": 0.5}},
    "harmonic": {"domain": _BALL, "g": "upper", "grid": None, "common_streams": True},
    "hoelder": {"domain": _BALL, "g": "smooth", "grid": None, "center": None, "radius": 0.8,
                "common_streams": True},
    "harnack": {"eps": [0.2, 0.1, 0.05], "beta": None, "dt": 0.01},
    "scaling-check": {"eps": [1.0, 0.5, 0.25, 0.125], "horizon": 50.0},
    "generator-check": {"probes": 20, "dimension": 2},
}

COMMANDS = tuple(TASK_DEFAULTS)

# bounded boundary functions for harmonic estimates: name -> (g, bound)
BOUNDARY_FUNCTIONS = {
    "one": (lambda y: np.ones(len(y)), 1.0),
    "upper": (lambda y: (y[:, -1] > 0.0).astype(float), 1.0),
    "right": (lambda y: (y[:, 0] >= 1.0).astype(float), 1.0),
    "smooth": (lambda y: np.tanh(y[:, 0]), 1.0),
}


def _check_keys(section: str, given: dict, allowed: dict):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _merge(command: str, data: dict) -> dict:
    unknown = sorted(set(data) - set(BASE_DEFAULTS) - {"task"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    out = copy.deepcopy(BASE_DEFAULTS)
    out["task"] = copy.deepcopy(TASK_DEFAULTS[command])
    for section, defaults in out.items():
        given = data.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        _check_keys(section, given, defaults)
        defaults.update(copy.deepcopy(given))
    return out


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


@dataclass(frozen=True)
class RunConfig:
    command: str
    data: dict  # fully resolved: every key present, None for "unset"

    # --- construction ---------------------------------------------------------------
    @classmethod
    def build(cls, command: str, file_data: dict | None = None,
              overrides: dict | None = None) -> "RunConfig":
        if command not in TASK_DEFAULTS:
            raise ConfigError(f"unknown command {command!r}")
        merged = _merge(command, file_data or {})
        for dotted, value in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if section not in merged or key not in merged[section]:
                raise ConfigError(f"unknown setting {dotted!r}")
            merged[section][key] = value
        merged["run"]["seed"] = resolve_seed(merged["run"]["seed"])
        cfg = cls(command, merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, command: str, text: str, overrides: dict | None = None) -> "RunConfig":
        try:
            data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        return cls.build(command, data, overrides)

    @classmethod
    def load(cls, command: str, path: str | Path | None, overrides: dict | None = None):
        text = Path(path).read_text() if path is not None else ""
        return cls.from_toml(command, text, overrides)

    def to_toml(self) -> str:
        return tomli_w.dumps(_strip_none(self.data))

    def resolved(self) -> dict:
        return {"command": self.command, **copy.deepcopy(self.data)}

    def identity(self) -> dict:
        """The resolved config minus output location and thread count, which never change results."""
        out = self.resolved()
        del out["output"]["directory"]
        del out["run"]["threads"]
        return out

    @property
    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # --- typed views ----------------------------------------------------------------
    @property
    def model(self) -> dict:
        return self.data["model"]

    @property
    def task(self) -> dict:
        return self.data["task"]

    @property
    def seed(self) -> int:
        return int(self.data["run"]["seed"])

    @property
    def n(self) -> int:
        return int(self.data["run"]["n"])

    @property
    def dimension(self) -> int:
        m = self.model
        if m["dimension"] is not None:
            return int(m["dimension"])
        if m["entries"] is not None:
            return len(m["entries"])
        return 1

    def params(self) -> StableParams:
        return StableParams(float(self.model["alpha"]), float(self.model["scale"]))

    def field(self) -> MatrixField:
        m = self.model
        d = self.dimension
        if m["entries"] is None:
            return MatrixField.identity(d, m["region"])
        return MatrixField.from_strings(m["entries"], d, m["region"], m["lambda_bound"])

    def scheme(self) -> PathScheme:
        s = self.data["scheme"]
        trunc = TruncationScheme(float(s["beta"])) if s["mode"] == "jump-adapted" else None
        return PathScheme(s["mode"], float(s["dt"]), trunc, int(s["max_steps"]))

    @property
    def t_cap(self) -> float:
        return float(self.data["scheme"]["t_cap"])

    def point(self, value, d: int | None = None) -> np.ndarray:
        d = d or self.dimension
        if value is None:
            return np.zeros(d)
        p = np.asarray(value, dtype=float).reshape(-1)
        if p.size != d:
            raise ConfigError(f"point {value!r} must have {d} coordinates")
        return p

    def domain(self, spec: dict | None, d: int | None = None) -> Domain | None:
        if spec is None:
            return None
        d = d or self.dimension
        _check_keys("domain", spec, {"kind": 0, "center": 0, "radius": 0, "half_widths": 0})
        center = self.point(spec.get("center"), d)
        kind = spec.get("kind", "ball")
        if kind == "ball":
            return Domain.ball(center, float(spec.get("radius", 1.0)))
        if kind == "box":
            if spec.get("half_widths") is None:
                raise ConfigError("a box needs half_widths")
            return Domain.box(center, spec["half_widths"])
        raise ConfigError(f"domain kind must be 'ball' or 'box', got {kind!r}")

    # --- validation -----------------------------------------------------------------
    def validate(self):
        m, s, r = self.model, self.data["scheme"], self.data["run"]
        try:
            self.params()
            if m["entries"] is not None:
                if m["dimension"] is not None and int(m["dimension"]) != len(m["entries"]):
                    raise ConfigError("model.dimension disagrees with the entries matrix")
            self.field()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[model] {exc}") from exc
        if s["mode"] not in ("fixed", "jump-adapted"):
            raise ConfigError("scheme.mode must be 'fixed' or 'jump-adapted'")
        if s["mode"] == "jump-adapted" and s["beta"] is None and self.command not in ("harnack",):
            raise ConfigError("scheme.beta is required in jump-adapted mode")
        if s["mode"] == "fixed" and s["beta"] is not None:
            raise ConfigError("scheme.beta only applies to jump-adapted mode")
        if not float(s["dt"]) > 0 or not float(s["t_cap"]) > 0 or int(s["max_steps"]) < 1:
            raise ConfigError("scheme.dt and scheme.t_cap must be positive, max_steps >= 1")
        if s["mode"] == "jump-adapted" and s["beta"] is not None and not float(s["beta"]) > 0:
            raise ConfigError("scheme.beta must be positive")
        if int(r["n"]) < 1:
            raise ConfigError("run.n must be at least 1")
        if r["threads"] is not None and int(r["threads"]) < 1:
            raise ConfigError("run.threads must be at least 1")
        fmts = self.data["output"]["formats"]
        if not set(fmts) <= {"json", "csv"} or "json" not in fmts:
            raise ConfigError("output.formats must include 'json' and may add 'csv'")
        g = self.task.get("g")
        if g is not None and g not in BOUNDARY_FUNCTIONS:
            raise ConfigError(f"task.g must be one of {sorted(BOUNDARY_FUNCTIONS)}")
        for key in ("domain", "region", "target", "container"):
            if key in self.task and self.task[key] is not None:
                self.domain(self.task[key])
        for key in ("x0", "center"):
            if key in self.task and self.task[key] is not None:
                self.point(self.task[key])
