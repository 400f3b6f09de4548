"""Pipeline configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .correspondence import MatchConfig
from .fmap import SpectralWeights
from .interpolation import SpatialWeights


class ConfigError(ValueError):
    """Invalid configuration (usage error, exit code 2)."""


@dataclass
class PipelineConfig:
    mesh_x: str = ""
    mesh_y: str = ""
    gt: str = ""
    pred: str = ""
    shapes: list = field(default_factory=list)
    normalize: bool = True
    # spectral / matching
    k: int = 50
    descriptor_dim: int = 128
    temperature: float = 0.07
    match_iters: int = 100
    match_step: float = 1e-3
    lambda_reg: float = 100.0
    gamma: float = 0.5
    w_bij: float = 1.0
    w_orth: float = 1.0
    w_struct: float = 1.0
    w_couple: float = 1.0
    # interpolation
    T: int = 6
    interp_iters: int = 500
    interp_step: float = 1e-3
    w_align: float = 5.0
    w_arap: float = 100.0
    w_sym: float = 1.0
    w_var: float = 1.0
    arap_weighting: str = "uniform"
    # test-time adaptation
    lambda_d: float = 0.1
    tta_iters: int = 2000
    tta_step: float = 1e-3
    final_map_source: str = "adapted"
    # evaluation
    pck_max: float = 0.1
    pck_steps: int = 101
    conformal_max: float = 1.0
    # statistical shape model
    ssm_modes: int = 0
    ssm_trials: int = 1000
    # run
    outdir: str = "out"
    seed: int = 0
    threads: int = 1
    figures: bool = True

    def validate(self, stage: str = "pipeline") -> "PipelineConfig":
        counts = ("k", "descriptor_dim", "match_iters", "T", "tta_iters", "pck_steps", "ssm_trials", "threads")
        for name in counts:
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
        if not isinstance(self.interp_iters, int) or self.interp_iters < 0:
            raise ConfigError("interp_iters must be an integer >= 0")
        if self.T < 2:
            raise ConfigError("T must be >= 2")
        if self.descriptor_dim < 2 or self.k < 3:
            raise ConfigError("descriptor_dim must be >= 2 and k >= 3")
        nonneg = ("lambda_reg", "w_bij", "w_orth", "w_struct", "w_couple", "w_align", "w_arap", "w_sym", "w_var",
                  "lambda_d")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("temperature", "match_step", "interp_step", "tta_step", "gamma", "pck_max", "conformal_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.ssm_modes < 0:
            raise ConfigError("ssm_modes must be >= 0")
        if self.arap_weighting not in ("uniform", "cotan"):
            raise ConfigError("arap_weighting must be 'uniform' or 'cotan'")
        if self.final_map_source not in ("adapted", "blend"):
            raise ConfigError("final_map_source must be 'adapted' or 'blend'")
        if not self.outdir:
            raise ConfigError("outdir must be non-empty")
        if stage in ("match", "interpolate", "tta", "pipeline") and not (self.mesh_x and self.mesh_y):
            raise ConfigError("mesh_x and mesh_y paths are required")
        if stage == "eval" and not (self.mesh_x and self.mesh_y and self.gt):
            raise ConfigError("eval needs mesh_x, mesh_y and gt")
        if stage == "ssm" and len(self.shapes) < 3:
            raise ConfigError("ssm needs at least three shape paths")
        return self

    def match_config(self) -> MatchConfig:
        return MatchConfig(
            temperature=self.temperature, feature_dim=self.descriptor_dim, iters=self.match_iters,
            step_size=self.match_step, lambda_reg=self.lambda_reg, gamma=self.gamma,
            weights=SpectralWeights(self.w_bij, self.w_orth, self.w_struct, self.w_couple),
        )

    def spatial_weights(self) -> SpatialWeights:
        return SpatialWeights(self.w_align, self.w_arap, self.w_sym, self.w_var)

    def to_dict(self) -> dict:
        return asdict(self)


def field_types() -> dict:
    defaults = PipelineConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(PipelineConfig)}


def load_config(path: str | None, overrides: dict | None = None) -> PipelineConfig:
    data = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{path}: config file not found")
        try:
            data = json.loads(p.read_text())
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    types = field_types()
    unknown = set(data) - set(types)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, val in list(data.items()):
        want = types[key]
        if want is float and isinstance(val, int) and not isinstance(val, bool):
            data[key] = float(val)
        elif want is not type(val) and not (want is list and isinstance(val, (list, tuple))):
            raise ConfigError(f"config key {key!r} expects {want.__name__}, got {type(val).__name__}")
    return PipelineConfig(**data)
