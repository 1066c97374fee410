"""Turn a static Gaussian cloud into an MPM particle system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .splat_io import GaussianCloud

NU_MAX = 0.4995


@dataclass(frozen=True)
class MaterialParams:
    """Homogeneous elastic material. Defaults describe a soft elastic solid."""

    density: float = 1000.0
    youngs_modulus: float = 2.0e5
    poissons_ratio: float = 0.3

    def __post_init__(self):
        if not (np.isfinite(self.density) and self.density > 0):
            raise ValidationError(f"density must be > 0, got {self.density}")
        if not (np.isfinite(self.youngs_modulus) and self.youngs_modulus > 0):
            raise ValidationError(f"youngs_modulus must be > 0, got {self.youngs_modulus}")
        if not (-1.0 < self.poissons_ratio < NU_MAX):
            raise ValidationError(
                f"poissons_ratio must lie in (-1, {NU_MAX}), got {self.poissons_ratio}"
            )

    @property
    def mu(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poissons_ratio))

    @property
    def lam(self) -> float:
        nu = self.poissons_ratio
        return self.youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))


@dataclass(frozen=True)
class WorldTransform:
    """Uniform scale + translation: ``x_sim = scale * x_world + translation``."""

    scale: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError("WorldTransform scale must be positive")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def to_sim(self, x_world: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x_world, dtype=np.float64) + self.translation

    def to_world(self, x_sim: np.ndarray) -> np.ndarray:
        return (np.asarray(x_sim, dtype=np.float64) - self.translation) / self.scale


@dataclass(frozen=True)
class ParticleState:
    """Read-only view of one particle, as returned by ``ParticleSystem[i]``."""

    x: np.ndarray
    v: np.ndarray
    F: np.ndarray
    C: np.ndarray
    m: float
    V0: float
    material: MaterialParams


@dataclass
class ParticleSystem:
    """Array-backed particle state, index-aligned with the source cloud.

    Rows are never reordered, inserted or removed.
    """

    x: np.ndarray
    v: np.ndarray
    F: np.ndarray
    C: np.ndarray
    mass: np.ndarray
    vol0: np.ndarray
    material: MaterialParams
    transform: WorldTransform = field(default_factory=lambda: WorldTransform(1.0, np.zeros(3)))
    t: float = 0.0

    def __post_init__(self):
        n = len(self.x)
        self.x = np.ascontiguousarray(self.x, dtype=np.float64).reshape(n, 3)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64).reshape(n, 3)
        self.F = np.ascontiguousarray(self.F, dtype=np.float64).reshape(n, 3, 3)
        self.C = np.ascontiguousarray(self.C, dtype=np.float64).reshape(n, 3, 3)
        self.mass = np.ascontiguousarray(self.mass, dtype=np.float64).reshape(n)
        self.vol0 = np.ascontiguousarray(self.vol0, dtype=np.float64).reshape(n)
        if np.any(self.mass <= 0) or np.any(self.vol0 <= 0):
            raise ValidationError("particle masses and volumes must be positive")

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> ParticleState:
        return ParticleState(self.x[i].copy(), self.v[i].copy(), self.F[i].copy(), self.C[i].copy(),
                             float(self.mass[i]), float(self.vol0[i]), self.material)

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(self.x.copy(), self.v.copy(), self.F.copy(), self.C.copy(),
                              self.mass.copy(), self.vol0.copy(), self.material, self.transform, self.t)

    def center_of_mass(self) -> np.ndarray:
        return self.mass @ self.x / self.mass.sum()

    def com_velocity(self) -> np.ndarray:
        return self.mass @ self.v / self.mass.sum()

    def momentum(self) -> np.ndarray:
        return self.mass @ self.v


def normalize_to_domain(cloud: GaussianCloud, margin: float = 0.1) -> tuple[np.ndarray, WorldTransform]:
    """Fit the cloud's bounding box, centred and aspect-preserved, into
    ``[margin, 1 - margin]^3``.

    A cloud whose bounding box is a single point is placed at the domain
    centre with scale 1.
    """
    if not 0.0 < margin < 0.5:
        raise ValidationError(f"margin must lie in (0, 0.5), got {margin}")
    if cloud.count == 0:
        raise ValidationError("cannot place an empty cloud in the simulation domain")
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float(np.max(hi - lo))
    scale = (1.0 - 2.0 * margin) / extent if extent > 0 else 1.0
    transform = WorldTransform(scale, 0.5 - scale * center)
    return transform.to_sim(cloud.positions), transform


def estimate_particle_volumes(positions: np.ndarray, grid_spacing: float) -> np.ndarray:
    """Per-particle volume ``dx^3 / n(cell)`` from particle counts per grid cell."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) == 0:
        return np.zeros(0)
    cells = np.floor(positions / grid_spacing).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    return grid_spacing**3 / counts[inverse.reshape(-1)]


def init_particles(
    cloud: GaussianCloud,
    material: MaterialParams | None = None,
    grid_spacing: float = 1.0 / 63.0,
    margin: float = 0.1,
) -> ParticleSystem:
    """Build the initial particle system: ``F = I``, ``C = 0``, ``v = 0``, ``t = 0``."""
    material = material or MaterialParams()
    x, transform = normalize_to_domain(cloud, margin)
    vol0 = estimate_particle_volumes(x, grid_spacing)
    n = len(x)
    return ParticleSystem(
        x=x,
        v=np.zeros((n, 3)),
        F=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        C=np.zeros((n, 3, 3)),
        mass=material.density * vol0,
        vol0=vol0,
        material=material,
        transform=transform,
        t=0.0,
    )
