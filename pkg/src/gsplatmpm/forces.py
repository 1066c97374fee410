"""Timed external-force directives applied to particles.

Two kinds exist: ``set_velocity`` overwrites the velocity of the selected
particles, ``newtonian_force`` accelerates them with ``a = f / m``. Within a
substep, Newtonian forces are applied first (additively, in declaration
order) and velocity directives after (in declaration order, so the last one
declared wins on overlap).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .continuum import ParticleSystem
from .errors import ValidationError


class ForceKind(str, Enum):
    SET_VELOCITY = "set_velocity"
    NEWTONIAN_FORCE = "newtonian_force"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in simulation coordinates, inclusive on both ends."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(c) for c in self.lo)
        hi = tuple(float(c) for c in self.hi)
        if len(lo) != 3 or len(hi) != 3 or not all(a < b for a, b in zip(lo, hi)):
            raise ValidationError(f"box must have positive extent on every axis, got lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


ALL = "all"


@dataclass(frozen=True)
class ForceDirective:
    kind: ForceKind
    vector: tuple[float, float, float]
    window: tuple[float, float] = (0.0, float("inf"))
    region: Box | str = ALL

    def __post_init__(self):
        object.__setattr__(self, "kind", ForceKind(self.kind))
        vec = tuple(float(c) for c in self.vector)
        if len(vec) != 3 or not all(np.isfinite(vec)):
            raise ValidationError(f"directive vector must be 3 finite numbers, got {self.vector}")
        object.__setattr__(self, "vector", vec)
        t0, t1 = (float(c) for c in self.window)
        if not t0 < t1:
            raise ValidationError(f"directive window must satisfy t_start < t_end, got {self.window}")
        object.__setattr__(self, "window", (t0, t1))
        if not (self.region == ALL or isinstance(self.region, Box)):
            raise ValidationError(f"region must be 'all' or a Box, got {self.region!r}")

    def active_at(self, t: float) -> bool:
        return self.window[0] <= t < self.window[1]


@dataclass
class ForceSchedule:
    directives: list[ForceDirective] = field(default_factory=list)


def evaluate_schedule(schedule: ForceSchedule | Sequence[ForceDirective] | None, t: float) -> list[ForceDirective]:
    """Directives whose half-open window ``[t_start, t_end)`` contains ``t``."""
    if schedule is None:
        return []
    directives = schedule.directives if isinstance(schedule, ForceSchedule) else schedule
    return [d for d in directives if d.active_at(t)]


def select_region(system: ParticleSystem, region) -> np.ndarray:
    """Indices of particles currently inside ``region``."""
    if region == ALL:
        return np.arange(len(system))
    lo = np.asarray(region.lo)
    hi = np.asarray(region.hi)
    inside = np.all((system.x >= lo) & (system.x <= hi), axis=1)
    return np.flatnonzero(inside)


def apply_newtonian_force(system: ParticleSystem, indices, f, dt: float, v: np.ndarray | None = None) -> np.ndarray:
    """``v += (f / m_p) dt`` for the selected particles. Returns the velocity array."""
    v = system.v if v is None else v
    idx = np.asarray(indices, dtype=np.int64)
    f = np.asarray(f, dtype=np.float64)
    v[idx] += (dt / system.mass[idx])[:, None] * f
    return v


def apply_velocity_directive(system: ParticleSystem, indices, v_set, v: np.ndarray | None = None) -> np.ndarray:
    """Overwrite the selected particles' velocity with ``v_set``."""
    v = system.v if v is None else v
    v[np.asarray(indices, dtype=np.int64)] = np.asarray(v_set, dtype=np.float64)
    return v


def apply_directives(system: ParticleSystem, directives: Sequence[ForceDirective], dt: float,
                     v: np.ndarray | None = None) -> np.ndarray:
    v = system.v if v is None else v
    for d in directives:
        if d.kind is ForceKind.NEWTONIAN_FORCE:
            apply_newtonian_force(system, select_region(system, d.region), d.vector, dt, v)
    for d in directives:
        if d.kind is ForceKind.SET_VELOCITY:
            apply_velocity_directive(system, select_region(system, d.region), d.vector, v)
    return v
