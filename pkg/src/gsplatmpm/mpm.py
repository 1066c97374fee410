"""Explicit MLS-MPM with APIC transfers and fixed-corotated elasticity.

The loop for one substep is::

    forces -> clear grid -> p2g -> grid_update -> g2p -> update_deformation

Grid node ``(i, j, k)`` sits at ``(i, j, k) * dx`` with ``dx = 1 / (n - 1)``,
so the grid spans the unit cube. A particle is valid while its 3x3x3
quadratic B-spline stencil lies on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .continuum import ParticleSystem
from .errors import CFLViolationError, DomainEscapeError, InvertedElementError, ValidationError

CFL_FACTOR = 0.5
CFL_EPS_V = 1e-12


class BoundaryKind(str, Enum):
    STICKY = "sticky"
    SLIP = "slip"


@dataclass(frozen=True)
class GridConfig:
    resolution: int = 64
    boundary_width: int = 2
    boundary_kind: BoundaryKind = BoundaryKind.STICKY

    def __post_init__(self):
        object.__setattr__(self, "boundary_kind", BoundaryKind(self.boundary_kind))
        if int(self.resolution) != self.resolution or self.resolution < 8:
            raise ValidationError(f"grid resolution must be an integer >= 8, got {self.resolution}")
        if self.boundary_width < 2 or not self.boundary_width < self.resolution / 2:
            raise ValidationError(
                f"boundary_width must satisfy 2 <= w < n/2, got {self.boundary_width} for n={self.resolution}"
            )

    @property
    def spacing(self) -> float:
        return 1.0 / (self.resolution - 1)

    @property
    def inv_dx(self) -> float:
        return float(self.resolution - 1)


class Grid:
    """Dense Eulerian scratch grid.

    ``data[..., :3]`` accumulates momentum and ``data[..., 3]`` mass;
    ``velocity`` is valid after :func:`grid_update`.
    """

    def __init__(self, config: GridConfig):
        n = config.resolution
        self.config = config
        self.data = np.zeros((n, n, n, 4))
        self.velocity = np.zeros((n, n, n, 3))

    @property
    def mass(self) -> np.ndarray:
        return self.data[..., 3]

    @property
    def momentum(self) -> np.ndarray:
        return self.data[..., :3]

    def node_positions(self) -> np.ndarray:
        n = self.config.resolution
        idx = np.arange(n) * self.config.spacing
        return np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), axis=-1)

    def clear(self) -> None:
        self.data.fill(0.0)
        self.velocity.fill(0.0)


@dataclass(frozen=True)
class StepParams:
    dt: float
    gravity: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "gravity", tuple(float(g) for g in self.gravity))


# ---------------------------------------------------------------------------
# individual operations


def bspline_stencil(xp, grid: GridConfig, particle: int | None = None):
    """Quadratic B-spline stencil of one particle.

    Returns ``(base, weights, dweights)``: the lowest stencil node index, and
    per-axis weights / spatial weight derivatives, each shaped ``(3 axes, 3 nodes)``.
    """
    xp = np.asarray(xp, dtype=np.float64)
    s = xp * grid.inv_dx
    if not np.all((s >= 0.5) & (s < grid.resolution - 1.5)):
        raise DomainEscapeError("particle stencil leaves the grid", particle=particle)
    base = np.floor(s - 0.5).astype(np.int64)
    fx = s - base
    w = np.stack([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2], axis=1)
    dw = np.stack([fx - 1.5, -2.0 * (fx - 1.0), fx - 0.5], axis=1) * grid.inv_dx
    return base, w, dw


def compute_stress(F, mu: float, lam: float) -> np.ndarray:
    """Fixed-corotated first Piola-Kirchhoff stress.

    ``P = 2 mu (F - R) + lam (J - 1) J F^{-T}`` with ``R`` the rotation of the
    polar decomposition and ``J = det F``. Accepts one matrix or a batch.
    """
    F = np.ascontiguousarray(F, dtype=np.float64)
    single = F.ndim == 2
    batch = F.reshape(-1, 3, 3)
    P = np.empty_like(batch)
    bad = K.first_piola_batch(batch, float(mu), float(lam), P)
    if bad >= 0:
        raise InvertedElementError("det(F) <= 0 in compute_stress", particle=None if single else int(bad))
    return P[0] if single else P.reshape(F.shape)


def polar_rotation(F) -> np.ndarray:
    F = np.ascontiguousarray(F, dtype=np.float64)
    R = np.empty((3, 3))
    if not K.polar_rotation(F, R) > 0:
        raise InvertedElementError("det(F) <= 0 in polar decomposition")
    return R


def check_cfl(system: ParticleSystem, params: StepParams, config: GridConfig, v: np.ndarray | None = None) -> None:
    vmax = K.max_speed(system.v if v is None else v)
    limit = CFL_FACTOR * config.spacing / max(vmax, CFL_EPS_V)
    if params.dt > limit:
        raise CFLViolationError(f"dt={params.dt:g} exceeds CFL limit {limit:g} (max |v|={vmax:g})")


def p2g(system: ParticleSystem, grid: Grid, params: StepParams, *, deterministic: bool = True,
        v: np.ndarray | None = None, chunks: int | None = None) -> None:
    """Scatter mass and APIC momentum (plus the stress impulse) to the grid.

    The grid is accumulated into, not cleared. ``v`` overrides the particle
    velocities (used by :func:`step` for force-adjusted velocities).
    """
    cfg = grid.config
    mat = system.material
    args = (system.x, system.v if v is None else v, system.C, system.F, system.mass, system.vol0,
            mat.mu, mat.lam, params.dt, cfg.inv_dx, grid.data)
    if deterministic:
        code, p = K.p2g_serial(*args)
    else:
        import numba
        code, p = K.p2g_chunked(*args, chunks or numba.get_num_threads())
    if code == K.ESCAPED:
        raise DomainEscapeError("particle stencil leaves the grid", particle=int(p))
    if code == K.INVERTED:
        raise InvertedElementError("det(F) <= 0", particle=int(p))


def grid_update(grid: Grid, params: StepParams, config: GridConfig | None = None) -> None:
    """``v = mv / m + dt g`` on active nodes, then the boundary condition."""
    cfg = config or grid.config
    gx, gy, gz = params.gravity
    K.grid_update(grid.data, grid.velocity, params.dt, gx, gy, gz, cfg.boundary_width,
                  cfg.boundary_kind is BoundaryKind.SLIP)


def g2p(system: ParticleSystem, grid: Grid, params: StepParams, *, step_index: int | None = None):
    """Gather velocity and affine velocity gradient; advance positions.

    Returns new ``(x, v, C)`` arrays; ``system`` itself is not modified, so a
    failing step leaves the previous state intact.
    """
    x_out = np.empty_like(system.x)
    v_out = np.empty_like(system.v)
    C_out = np.empty_like(system.C)
    bad = K.g2p(system.x, grid.velocity, grid.config.inv_dx, params.dt, x_out, v_out, C_out)
    if bad >= 0:
        raise DomainEscapeError("particle advected out of the grid", particle=int(bad), step=step_index)
    return x_out, v_out, C_out


def update_deformation(F, C, dt: float) -> np.ndarray:
    """``F' = (I + dt C) F`` for one matrix or a batch; errors on ``det(F') <= 0``."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    single = F.ndim == 2
    Fb, Cb = F.reshape(-1, 3, 3), C.reshape(-1, 3, 3)
    out = np.empty_like(Fb)
    bad = K.update_deformation(Fb, Cb, float(dt), out)
    if bad >= 0:
        raise InvertedElementError("det(F) <= 0 after deformation update", particle=None if single else int(bad))
    return out[0] if single else out.reshape(F.shape)


# ---------------------------------------------------------------------------
# full step


def step(
    system: ParticleSystem,
    grid: Grid,
    params: StepParams,
    forces: Sequence = (),
    *,
    deterministic: bool = True,
    step_index: int | None = None,
) -> None:
    """Advance ``system`` by ``params.dt``. Transactional: on error nothing changes.

    ``forces`` are the active :class:`~gsplatmpm.forces.ForceDirective` s for
    this substep, applied in order before the transfer.
    """
    from .forces import apply_directives

    cfg = grid.config
    try:
        v = apply_directives(system, forces, params.dt, v=system.v.copy()) if forces else system.v
        check_cfl(system, params, cfg, v)
        grid.clear()
        p2g(system, grid, params, deterministic=deterministic, v=v)
        grid_update(grid, params, cfg)
        x_new, v_new, C_new = g2p(system, grid, params, step_index=step_index)
        F_new = update_deformation(system.F, C_new, params.dt)
    except (DomainEscapeError, InvertedElementError, CFLViolationError) as exc:
        if step_index is not None and exc.step is None:
            exc.at_step(step_index)
        raise
    system.x, system.v, system.C, system.F = x_new, v_new, C_new, F_new
    system.t += params.dt


def substep_count(frame_dt: float, dt_max: float) -> int:
    """Equal substeps per frame so that each one is at most ``dt_max``."""
    ratio = frame_dt / dt_max
    return max(1, math.ceil(ratio - 1e-9 * ratio))


@dataclass
class Simulator:
    """Frame-level driver: substeps each frame and reports frame boundaries.

    Frame 0 is the initial state; frame ``k`` is captured at ``t = k * frame_dt``.
    """

    system: ParticleSystem
    grid_config: GridConfig = field(default_factory=GridConfig)
    gravity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dt_max: float = 2e-4
    frame_dt: float = 1.0 / 24.0
    schedule: object = None
    deterministic: bool = True

    def __post_init__(self):
        self.grid = Grid(self.grid_config)
        self.substeps = substep_count(self.frame_dt, self.dt_max)
        self.params = StepParams(self.frame_dt / self.substeps, self.gravity)
        self.steps_done = 0

    def advance_frame(self) -> None:
        from .forces import evaluate_schedule

        t0 = self.system.t
        for j in range(self.substeps):
            active = evaluate_schedule(self.schedule, self.system.t) if self.schedule is not None else ()
            step(self.system, self.grid, self.params, active,
                 deterministic=self.deterministic, step_index=self.steps_done)
            self.steps_done += 1
            self.system.t = t0 + (j + 1) * self.params.dt

    def run(self, frames: int, on_frame: Callable[[int, ParticleSystem], None] | None = None) -> None:
        """Emit ``frames`` frames; ``on_frame(index, system)`` is called at each boundary."""
        start = round(self.system.t / self.frame_dt)
        for k in range(frames):
            if k > 0:
                self.advance_frame()
                self.system.t = (start + k) * self.frame_dt
            if on_frame is not None:
                on_frame(k, self.system)


def total_grid_mass(grid: Grid) -> float:
    return float(grid.mass.sum())


def total_grid_momentum(grid: Grid) -> np.ndarray:
    return grid.momentum.reshape(-1, 3).sum(axis=0)


def total_grid_velocity_momentum(grid: Grid) -> np.ndarray:
    """``sum_i m_i v_i`` over the grid (valid after :func:`grid_update`)."""
    return (grid.mass[..., None] * grid.velocity).reshape(-1, 3).sum(axis=0)


__all__ = [
    "BoundaryKind", "GridConfig", "Grid", "StepParams", "Simulator",
    "bspline_stencil", "compute_stress", "polar_rotation", "check_cfl",
    "p2g", "grid_update", "g2p", "update_deformation", "step", "substep_count",
]

