"""Pipeline configuration: defaults, validation, TOML/JSON round-trip.

One ``PipelineConfig`` carries every tunable the command-line tools and the
service need: sampler schedule, SDF fit, tet resolution, render settings,
metric thresholds, and the global seed that fans out to per-stage seeds.
Unknown keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diffusion import DiffusionError, NoiseSchedule


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration."""


def _reject_unknown(obj: dict, known, where: str) -> None:
    extra = set(obj) - set(known)
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    """Diffusion sampling block."""

    steps: int = 50
    eta: float = 0.0
    cfg_scale: float = 1.0
    n: int = 512
    schedule: NoiseSchedule = NoiseSchedule()

    def __post_init__(self):
        if not (isinstance(self.steps, int) and self.steps >= 1):
            raise ConfigError(f"sampler.steps must be a positive int, got {self.steps}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"sampler.eta must be in [0, 1], got {self.eta}")
        if not self.cfg_scale >= 0.0:
            raise ConfigError(f"sampler.cfg_scale must be >= 0, got {self.cfg_scale}")
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ConfigError(f"sampler.n must be a positive int, got {self.n}")

    def to_json(self) -> dict:
        return {"steps": self.steps, "eta": self.eta, "cfg_scale": self.cfg_scale,
                "n": self.n, "schedule": self.schedule.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "SamplerConfig":
        _reject_unknown(obj, ("steps", "eta", "cfg_scale", "n", "schedule"), "sampler")
        kw = {k: obj[k] for k in ("steps", "eta", "cfg_scale", "n") if k in obj}
        if "schedule" in obj:
            try:
                kw["schedule"] = NoiseSchedule.from_json(obj["schedule"])
            except DiffusionError as err:
                raise ConfigError(f"sampler.schedule: {err}") from err
        return SamplerConfig(**kw)


@dataclasses.dataclass(frozen=True)
class FitConfig:
    """Point-cloud SDF fitting block."""

    k: int = 8
    color_radius: Optional[float] = None

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ConfigError(f"fit.k must be a positive int, got {self.k}")
        if self.color_radius is not None and not self.color_radius > 0:
            raise ConfigError(f"fit.color_radius must be positive, got {self.color_radius}")

    def to_json(self) -> dict:
        return {"k": self.k, "color_radius": self.color_radius}

    @staticmethod
    def from_json(obj: dict) -> "FitConfig":
        _reject_unknown(obj, ("k", "color_radius"), "fit")
        return FitConfig(**obj)


@dataclasses.dataclass(frozen=True)
class MeshConfig:
    """Isosurface extraction block."""

    resolution: int = 96
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        if not (isinstance(self.resolution, int) and 2 <= self.resolution <= 512):
            raise ConfigError(f"mesh.resolution must be an int in [2, 512], got {self.resolution}")
        if not 0.0 <= self.metallic <= 1.0:
            raise ConfigError(f"mesh.metallic must be in [0, 1], got {self.metallic}")
        if not 0.03 <= self.roughness <= 1.0:
            raise ConfigError(f"mesh.roughness must be in [0.03, 1], got {self.roughness}")

    def to_json(self) -> dict:
        return {"resolution": self.resolution, "metallic": self.metallic,
                "roughness": self.roughness}

    @staticmethod
    def from_json(obj: dict) -> "MeshConfig":
        _reject_unknown(obj, ("resolution", "metallic", "roughness"), "mesh")
        return MeshConfig(**obj)


@dataclasses.dataclass(frozen=True)
class RenderConfig:
    """Camera, sampling, and shadow settings for preview renders."""

    width: int = 128
    height: int = 128
    azimuth: float = 30.0
    elevation: float = 20.0
    distance: float = 2.8
    fov_deg: float = 50.0
    spp_ggx: int = 6
    spp_env: int = 6
    spp_hemi: int = 4
    shadows: bool = True
    shadow_distance: float = 0.25
    shadow_steps: int = 6
    env: str = "sky"

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if not (isinstance(v, int) and 1 <= v <= 4096):
                raise ConfigError(f"render.{name} must be an int in [1, 4096], got {v}")
        if not self.distance > 0:
            raise ConfigError(f"render.distance must be positive, got {self.distance}")
        if not 0.0 < self.fov_deg < 180.0:
            raise ConfigError(f"render.fov_deg must be in (0, 180), got {self.fov_deg}")
        for name in ("spp_ggx", "spp_env", "spp_hemi"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ConfigError(f"render.{name} must be a positive int, got {v}")
        if not self.shadow_distance > 0:
            raise ConfigError(f"render.shadow_distance must be positive, got {self.shadow_distance}")
        if not (isinstance(self.shadow_steps, int) and self.shadow_steps >= 1):
            raise ConfigError(f"render.shadow_steps must be a positive int, got {self.shadow_steps}")
        if not isinstance(self.env, str) or not self.env:
            raise ConfigError("render.env must be a non-empty string")

    @property
    def counts(self) -> tuple:
        return (self.spp_ggx, self.spp_env, self.spp_hemi)

    def to_json(self) -> dict:
        return {name: getattr(self, name) for name in
                ("width", "height", "azimuth", "elevation", "distance",
                 "fov_deg", "spp_ggx", "spp_env", "spp_hemi", "shadows",
                 "shadow_distance", "shadow_steps", "env")}

    @staticmethod
    def from_json(obj: dict) -> "RenderConfig":
        _reject_unknown(obj, ("width", "height", "azimuth", "elevation",
                              "distance", "fov_deg", "spp_ggx", "spp_env",
                              "spp_hemi", "shadows", "shadow_distance",
                              "shadow_steps", "env"), "render")
        return RenderConfig(**obj)


@dataclasses.dataclass(frozen=True)
class MetricConfig:
    """Evaluation thresholds block."""

    thresholds: tuple = (0.1, 0.2, 0.5)

    def __post_init__(self):
        values = tuple(float(v) for v in self.thresholds)
        if not values or any(not v > 0 for v in values):
            raise ConfigError(f"metrics.thresholds must be positive, got {self.thresholds}")
        if list(values) != sorted(values):
            raise ConfigError("metrics.thresholds must be increasing")
        object.__setattr__(self, "thresholds", values)

    def to_json(self) -> dict:
        return {"thresholds": list(self.thresholds)}

    @staticmethod
    def from_json(obj: dict) -> "MetricConfig":
        _reject_unknown(obj, ("thresholds",), "metrics")
        return MetricConfig(**obj)


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    """Every stage's settings plus the one global seed."""

    seed: int = 0
    sampler: SamplerConfig = SamplerConfig()
    fit: FitConfig = FitConfig()
    mesh: MeshConfig = MeshConfig()
    render: RenderConfig = RenderConfig()
    metrics: MetricConfig = MetricConfig()

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an int, got {self.seed!r}")

    def to_json(self) -> dict:
        return {"seed": self.seed, "sampler": self.sampler.to_json(),
                "fit": self.fit.to_json(), "mesh": self.mesh.to_json(),
                "render": self.render.to_json(), "metrics": self.metrics.to_json()}

    @staticmethod
    def from_json(obj: dict) -> "PipelineConfig":
        _reject_unknown(obj, ("seed", "sampler", "fit", "mesh", "render",
                              "metrics"), "config")
        blocks = {"sampler": SamplerConfig, "fit": FitConfig, "mesh": MeshConfig,
                  "render": RenderConfig, "metrics": MetricConfig}
        kw = {}
        if "seed" in obj:
            kw["seed"] = obj["seed"]
        for name, cls in blocks.items():
            if name in obj:
                block = obj[name]
                if not isinstance(block, dict):
                    raise ConfigError(f"{name} must be a table/object")
                try:
                    kw[name] = cls.from_json(block)
                except TypeError as err:
                    raise ConfigError(f"{name}: {err}") from err
        return PipelineConfig(**kw)

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


def load_config(path) -> PipelineConfig:
    """Read a TOML (.toml) or JSON (.json) config file."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err}") from err
    try:
        if p.suffix.lower() == ".toml":
            obj = tomllib.loads(raw.decode("utf-8"))
        elif p.suffix.lower() == ".json":
            obj = json.loads(raw.decode("utf-8"))
        else:
            raise ConfigError(f"config must be .toml or .json, got {p.suffix!r}")
    except (ValueError, UnicodeDecodeError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"cannot parse config {p}: {err}") from err
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a table/object")
    # TOML reads arrays as lists and has no null; normalize for round-trip.
    return PipelineConfig.from_json(obj)
