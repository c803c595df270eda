"""Run configuration and its flat ``key = value`` file format.

Example::

    # bunny.cfg
    mesh_path = data/bunny.ply
    mesh_scale = 0.003
    resolution = 0.01
    elevation_range = 10 80      # degrees
    initial_pose = auto          # or: px py pz tx ty tz (position, look-at target)

Blank lines and ``#`` comments are ignored. Every key must be a field of
:class:`RunConfig`; anything else is an error.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .geometry import CameraModel
from .mvee import MveeParam
from .sampling import SamplingParam

EVALUATORS = ("projection", "raycast")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mesh_path: str = ""
    mesh_scale: float = 1.0
    mesh_up: str = "z"
    resolution: float = 0.01
    alpha: int = 10
    N: int = 400
    beta: int = 4
    gamma: float = 0.03
    d_c: float = 0.35
    T_min: int = 5
    T_max: int = 50
    fx: float = 525.0
    fy: float = 525.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    depth_min: float = 0.05
    depth_max: float = 2.0
    depth_noise: float = 0.0
    elevation_range: tuple = (10.0, 80.0)
    initial_pose: tuple | None = None
    max_iterations: int = 10
    growth_epsilon: float = 0.02
    seed: int = 0
    evaluator: str = "projection"

    def validate(self) -> "RunConfig":
        checks = [
            (self.resolution > 0, "resolution must be positive"),
            (self.mesh_scale > 0, "mesh_scale must be positive"),
            (self.mesh_up in ("x", "y", "z"), "mesh_up must be x, y or z"),
            (self.alpha >= 1 and self.N >= self.alpha, "need alpha >= 1 and N >= alpha"),
            (self.beta >= 2, "beta must be at least 2"),
            (self.gamma > 0, "gamma must be positive"),
            (self.d_c > 0, "d_c must be positive"),
            (1 <= self.T_min <= self.T_max, "need 1 <= T_min <= T_max"),
            (0 <= self.elevation_range[0] < self.elevation_range[1] <= 90, "elevation_range must be within [0, 90] degrees"),
            (self.max_iterations >= 1, "max_iterations must be >= 1"),
            (self.growth_epsilon >= 0, "growth_epsilon must be non-negative"),
            (self.depth_noise >= 0, "depth_noise must be non-negative"),
            (self.evaluator in EVALUATORS, f"evaluator must be one of {EVALUATORS}"),
            (self.initial_pose is None or len(self.initial_pose) == 6, "initial_pose needs 6 numbers"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.camera()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def camera(self) -> CameraModel:
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           self.d_c, self.depth_min, self.depth_max)

    def sampling(self) -> SamplingParam:
        lo, hi = self.elevation_range
        return SamplingParam(self.alpha, self.N, self.d_c, (math.radians(lo), math.radians(hi)), self.beta)

    def mvee(self) -> MveeParam:
        return MveeParam(min_semi_axis=self.resolution / 2)

    @property
    def cov_floor(self) -> float:
        return (self.resolution / 2) ** 2

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(name: str, raw: str):
    default = _FIELDS[name].default
    words = raw.split()
    try:
        if name == "initial_pose":
            if raw.strip().lower() in ("", "auto", "none"):
                return None
            return tuple(float(w) for w in words)
        if name == "elevation_range":
            return tuple(float(w) for w in words)
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return dataclasses.replace(base or RunConfig(), **values).validate()


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, (tuple, list)):
        return " ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{name} = {_format_value(getattr(cfg, name))}\n" for name in _FIELDS)
