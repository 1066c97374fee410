"""Map simulated deformation back onto Gaussian kernels.

The accumulated deformation gradient acts on the *initial* covariance,
``Sigma_t = F_t Sigma_0 F_t^T``; the result is factored back into a rotation
quaternion and per-axis scales for storage.
"""

from __future__ import annotations

import logging

import numpy as np

from .continuum import ParticleState, ParticleSystem, WorldTransform
from .errors import ValidationError
from .rotations import quaternion_to_matrix, rotation_to_quaternion
from .splat_io import GaussianCloud, GaussianKernel

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-12
SYMMETRY_TOL = 1e-9
# relative eigenvalue gap below which two eigenvalues count as equal
DEGENERATE_RTOL = 1e-10


def deform_covariance(sigma0, F, *, check: bool = True) -> np.ndarray:
    """``F Sigma0 F^T``, symmetrized. Works on one matrix or matching batches."""
    sigma0 = np.asarray(sigma0, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if check:
        _check_symmetric(sigma0)
        if np.any(np.linalg.eigvalsh(sigma0) <= 0):
            raise ValidationError("initial covariance is not positive definite")
        if np.any(np.linalg.det(F) <= 0):
            raise ValidationError("deformation gradient must have det(F) > 0")
    out = F @ sigma0 @ np.swapaxes(F, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _check_symmetric(sigma: np.ndarray) -> None:
    if not np.all(np.isfinite(sigma)):
        raise ValidationError("covariance contains non-finite values")
    scale = np.maximum(1.0, np.abs(sigma).max(axis=(-2, -1), keepdims=True))
    if np.any(np.abs(sigma - np.swapaxes(sigma, -1, -2)) > SYMMETRY_TOL * scale):
        raise ValidationError("covariance is not symmetric")


def _canonical_basis(Q: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Deterministic eigenbasis for one matrix whose eigenvalues are sorted descending.

    Eigenvectors of simple eigenvalues get their largest-magnitude component
    positive. For an eigenvalue cluster the basis is rebuilt from the
    coordinate axes projected onto the eigenspace, strongest projection
    first (Gram-Schmidt), so isotropic input yields the identity.
    """
    Q = Q.copy()
    tol = DEGENERATE_RTOL * max(lam[0], EIG_FLOOR)
    groups, start = [], 0
    for i in range(1, 4):
        if i == 3 or lam[i - 1] - lam[i] > tol:
            groups.append((start, i))
            start = i
    for a, b in groups:
        if b - a == 1:
            col = Q[:, a]
            if col[np.argmax(np.abs(col))] < 0:
                Q[:, a] = -col
            continue
        basis = Q[:, a:b]
        proj = basis @ basis.T
        order = np.argsort(-np.round(np.linalg.norm(proj, axis=0), 12), kind="stable")
        vecs = []
        for axis in order:
            v = proj[:, axis].copy()
            for u in vecs:
                v -= (u @ v) * u
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                vecs.append(v / nv)
            if len(vecs) == b - a:
                break
        Q[:, a:b] = np.stack(vecs, axis=1)
    return Q


def decompose_covariance(sigma, *, return_clamped: bool = False):
    """Eigen-factor SPD covariances into rotation matrices and scales.

    ``Sigma = R diag(S^2) R^T`` with ``S`` sorted descending and ``det R = +1``.
    Eigenvalues below ``1e-12`` are clamped (and counted). Accepts ``(3, 3)``
    or ``(P, 3, 3)``.

    Returns ``(R, S)``, or ``(R, S, n_clamped)`` with ``return_clamped``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    single = sigma.ndim == 2
    batch = sigma.reshape(-1, 3, 3)
    _check_symmetric(batch)
    sym = 0.5 * (batch + np.swapaxes(batch, -1, -2))
    lam, Q = np.linalg.eigh(sym)
    lam, Q = lam[:, ::-1], Q[:, :, ::-1]
    clamped = int(np.count_nonzero(lam < EIG_FLOOR))
    if clamped:
        log.warning("clamped %d covariance eigenvalues below %g", clamped, EIG_FLOOR)
        lam = np.maximum(lam, EIG_FLOOR)

    # simple spectra: fix column signs vectorized; clusters go through the slow path
    tol = DEGENERATE_RTOL * np.maximum(lam[:, 0], EIG_FLOOR)
    degenerate = np.any(lam[:, :-1] - lam[:, 1:] <= tol[:, None], axis=1)
    lead = np.take_along_axis(Q, np.argmax(np.abs(Q), axis=1)[:, None, :], axis=1)
    Q = Q * np.where(lead < 0, -1.0, 1.0)
    for p in np.flatnonzero(degenerate):
        Q[p] = _canonical_basis(Q[p], lam[p])
    flip = np.linalg.det(Q) < 0
    Q[flip, :, 2] *= -1.0

    S = np.sqrt(lam)
    if single:
        Q, S = Q[0], S[0]
    return (Q, S, clamped) if return_clamped else (Q, S)


def compose_covariance(R, S) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    return (R * (S**2)[..., None, :]) @ np.swapaxes(R, -1, -2)


def deform_kernel(kernel: GaussianKernel, particle: ParticleState, transform: WorldTransform) -> GaussianKernel:
    """Deformed copy of ``kernel`` given its particle's state."""
    sigma0 = kernel.covariance()
    sigma_t = deform_covariance(sigma0, particle.F)
    R, S = decompose_covariance(sigma_t)
    return GaussianKernel(
        position=transform.to_world(particle.x),
        rotation=rotation_to_quaternion(R),
        scales=S,
        opacity=kernel.opacity,
        color=np.array(kernel.color, copy=True),
    )


def deform_cloud(source: GaussianCloud, system: ParticleSystem) -> GaussianCloud:
    """Batched :func:`deform_kernel` over an index-aligned cloud and system."""
    if source.count != len(system):
        raise ValidationError(f"cloud has {source.count} kernels but system has {len(system)} particles")
    if source.count == 0:
        return GaussianCloud.empty()
    sigma_t = deform_covariance(source.covariances(), system.F, check=False)
    R, S = decompose_covariance(sigma_t)
    return GaussianCloud(
        positions=system.transform.to_world(system.x),
        rotations=rotation_to_quaternion(R),
        scales=S,
        opacities=source.opacities,
        colors=source.colors,
    )


__all__ = [
    "deform_covariance", "decompose_covariance", "compose_covariance",
    "rotation_to_quaternion", "quaternion_to_matrix", "deform_kernel", "deform_cloud",
]
