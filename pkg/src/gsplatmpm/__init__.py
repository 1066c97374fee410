"""Physics-driven dynamics for 3D Gaussian splat clouds.

Load a static 3DGS PLY, simulate it as an elastic continuum with MLS-MPM
under timed external forces, and export / render the per-frame deformed
Gaussians.
"""

import os as _os

# the TBB layer shipped with some numba builds is too old; workqueue is always available
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .continuum import MaterialParams, ParticleSystem, WorldTransform, init_particles  # noqa: E402
from .deform import decompose_covariance, deform_cloud, deform_covariance  # noqa: E402
from .forces import Box, ForceDirective, ForceKind, ForceSchedule  # noqa: E402
from .four_d import Frame, export_sequence, import_sequence, snapshot  # noqa: E402
from .mpm import Grid, GridConfig, Simulator, StepParams, step  # noqa: E402
from .splat_io import GaussianCloud, GaussianKernel, load_ply, parse_gaussian_ply, save_ply, write_gaussian_ply  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Box", "ForceDirective", "ForceKind", "ForceSchedule", "Frame", "GaussianCloud", "GaussianKernel",
    "Grid", "GridConfig", "MaterialParams", "ParticleSystem", "Simulator", "StepParams", "WorldTransform",
    "decompose_covariance", "deform_cloud", "deform_covariance", "export_sequence", "import_sequence",
    "init_particles", "load_ply", "parse_gaussian_ply", "save_ply", "snapshot", "step", "write_gaussian_ply",
]
