"""Simulation config file (JSON) with strict unknown-key rejection."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import continuum, forces, mpm

Vec3 = tuple[float, float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(_Strict):
    resolution: int = Field(64, ge=8)
    boundary_width: int = Field(2, ge=2)
    boundary_kind: Literal["sticky", "slip"] = "sticky"

    @model_validator(mode="after")
    def _width_fits(self):
        if not self.boundary_width < self.resolution / 2:
            raise ValueError("boundary_width must be smaller than resolution / 2")
        return self

    def build(self) -> mpm.GridConfig:
        return mpm.GridConfig(self.resolution, self.boundary_width, self.boundary_kind)


class MaterialSection(_Strict):
    density: float = Field(1000.0, gt=0)
    youngs_modulus: float = Field(2.0e5, gt=0)
    poissons_ratio: float = Field(0.3, gt=-1.0, lt=continuum.NU_MAX)

    def build(self) -> continuum.MaterialParams:
        return continuum.MaterialParams(self.density, self.youngs_modulus, self.poissons_ratio)


class BoxSection(_Strict):
    min: Vec3
    max: Vec3

    @model_validator(mode="after")
    def _positive_extent(self):
        if not all(a < b for a, b in zip(self.min, self.max)):
            raise ValueError("box needs min < max on every axis")
        return self


class ForceSection(_Strict):
    kind: Literal["set_velocity", "newtonian_force"]
    vector: Vec3
    # t_end = null means "until the end of the run"
    window: tuple[float, Optional[float]] = (0.0, None)
    region: Union[Literal["all"], BoxSection] = "all"

    @field_validator("window")
    @classmethod
    def _ordered(cls, w):
        if w[0] < 0:
            raise ValueError("window start must be >= 0")
        if w[1] is not None and not w[0] < w[1]:
            raise ValueError("window needs t_start < t_end")
        return w

    def build(self) -> forces.ForceDirective:
        region = forces.ALL if self.region == "all" else forces.Box(self.region.min, self.region.max)
        t_end = float("inf") if self.window[1] is None else self.window[1]
        return forces.ForceDirective(self.kind, self.vector, (self.window[0], t_end), region)


class SimulationConfig(_Strict):
    input_ply: Path
    output_dir: Path
    frames: int = Field(14, ge=1)
    frame_dt: float = Field(1.0 / 24.0, gt=0)
    grid: GridSection = GridSection()
    material: MaterialSection = MaterialSection()
    gravity: Vec3 = (0.0, 0.0, -9.8)
    dt_max: float = Field(2e-4, gt=0)
    margin: float = Field(0.1, gt=0, lt=0.5)
    forces: list[ForceSection] = []
    deterministic: bool = True
    seed: int = 0  # reserved; nothing is random yet

    @field_validator("input_ply")
    @classmethod
    def _exists(cls, p: Path):
        if not p.is_file():
            raise ValueError(f"file not found: {p}")
        return p

    def schedule(self) -> forces.ForceSchedule:
        return forces.ForceSchedule([f.build() for f in self.forces])

    def fingerprint(self) -> str:
        """SHA-256 over the physics settings and the input file contents.

        Paths are left out so that moving a run does not change it.
        """
        doc = self.model_dump(mode="json", exclude={"input_ply", "output_dir"})
        h = hashlib.sha256(json.dumps(doc, sort_keys=True).encode())
        h.update(hashlib.sha256(self.input_ply.read_bytes()).digest())
        return h.hexdigest()


class ConfigError(ValueError):
    pass


def format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: str | Path) -> SimulationConfig:
    """Read and validate a config. Relative paths resolve against the file's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in ("input_ply", "output_dir"):
        if isinstance(doc.get(key), str) and not Path(doc[key]).is_absolute():
            doc[key] = str(path.parent / doc[key])
    try:
        return SimulationConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(format_errors(exc)) from exc
