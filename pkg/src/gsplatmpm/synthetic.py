"""Procedural clouds for demos and tests."""

from __future__ import annotations

import numpy as np

from .splat_io import GaussianCloud


def random_quaternions(n: int, rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1.0
    return q


def lattice_cloud(per_axis, extent=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), *, seed: int = 0,
                  jitter: float = 0.0, scale: float | None = None, anisotropy: float = 0.0) -> GaussianCloud:
    """Gaussians on a regular box lattice.

    ``per_axis`` is an int or a 3-tuple of kernel counts. Kernel scales default
    to half the lattice spacing; ``anisotropy`` spreads them log-uniformly by
    that many e-folds, with random orientations whenever it is nonzero.
    """
    rng = np.random.default_rng(seed)
    counts = np.broadcast_to(np.asarray(per_axis, dtype=np.int64), (3,))
    extent = np.asarray(extent, dtype=np.float64)
    axes = [np.linspace(-0.5, 0.5, c) * e if c > 1 else np.zeros(1) for c, e in zip(counts, extent)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    spacing = float(np.min(extent / np.maximum(counts - 1, 1)))
    if jitter:
        grid += rng.uniform(-jitter, jitter, grid.shape) * spacing
    n = len(grid)
    base = 0.5 * spacing if scale is None else scale
    if anisotropy:
        scales = base * np.exp(rng.uniform(-anisotropy, anisotropy, (n, 3)) * 0.5)
        rotations = random_quaternions(n, rng)
    else:
        scales = np.full((n, 3), base)
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    colors = np.clip(0.5 + 0.5 * grid / np.maximum(extent, 1e-12), 0.0, 1.0)
    return GaussianCloud(grid + np.asarray(center), rotations, scales, np.full(n, 0.9), colors)


def sphere_cloud(n: int, radius: float = 1.0, *, seed: int = 0, scale: float | None = None) -> GaussianCloud:
    """``n`` kernels uniformly filling a ball."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0, 1, n) ** (1.0 / 3.0)
    pos = d * r[:, None]
    s = scale if scale is not None else 0.6 * radius * n ** (-1.0 / 3.0)
    scales = s * np.exp(rng.uniform(-0.3, 0.3, (n, 3)))
    colors = np.clip(0.5 + 0.5 * pos / radius, 0, 1)
    return GaussianCloud(pos, random_quaternions(n, rng), scales, rng.uniform(0.5, 1.0, n), colors)
