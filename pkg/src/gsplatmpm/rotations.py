"""Quaternion / rotation-matrix conversions.

Quaternions are stored scalar-first, ``(w, x, y, z)``. All functions accept a
single value or a leading batch dimension.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_ORTHO_TOL = 1e-6


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (possibly unnormalized) quaternion ``(w, x, y, z)``."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValidationError("zero-norm quaternion has no rotation")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def canonicalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Pick the representative of ``{q, -q}`` with ``w > 0``.

    When ``w == 0`` the first nonzero component is made positive instead.
    """
    q = np.array(q, dtype=np.float64, copy=True)
    flat = q.reshape(-1, 4)
    nonzero = flat != 0.0
    first = np.argmax(nonzero, axis=1)
    lead = flat[np.arange(flat.shape[0]), first]
    flat[lead < 0.0] *= -1.0
    return flat.reshape(q.shape)


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Convert rotation matrices to unit quaternions with Shepperd's method.

    The branch is chosen per matrix from the largest of ``trace(R)`` and the
    three diagonal entries, so the square root is always taken of a quantity
    bounded away from zero. Output is canonicalized (see
    :func:`canonicalize_quaternion`).

    Raises
    ------
    ValidationError
        If any matrix is not orthonormal with determinant +1 (tolerance 1e-6).
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ValidationError(f"expected (..., 3, 3) rotation matrices, got {R.shape}")
    batch = R.shape[:-2]
    M = R.reshape(-1, 3, 3)
    if not np.all(np.isfinite(M)):
        raise ValidationError("rotation matrix contains non-finite entries")
    gram = np.einsum("nki,nkj->nij", M, M)
    ortho_err = np.abs(gram - np.eye(3)).max(axis=(1, 2)) if len(M) else np.zeros(0)
    det = np.linalg.det(M) if len(M) else np.zeros(0)
    if np.any(ortho_err > _ORTHO_TOL) or np.any(np.abs(det - 1.0) > _ORTHO_TOL):
        raise ValidationError("matrix is not a proper rotation (R^T R != I or det != +1)")

    m00, m11, m22 = M[:, 0, 0], M[:, 1, 1], M[:, 2, 2]
    trace = m00 + m11 + m22
    pivots = np.stack([trace, m00, m11, m22], axis=1)
    branch = np.argmax(pivots, axis=1)
    q = np.empty((len(M), 4))

    b = branch == 0
    if np.any(b):
        s = 2.0 * np.sqrt(1.0 + trace[b])  # s = 4w
        q[b, 0] = 0.25 * s
        q[b, 1] = (M[b, 2, 1] - M[b, 1, 2]) / s
        q[b, 2] = (M[b, 0, 2] - M[b, 2, 0]) / s
        q[b, 3] = (M[b, 1, 0] - M[b, 0, 1]) / s
    b = branch == 1
    if np.any(b):
        s = 2.0 * np.sqrt(1.0 + m00[b] - m11[b] - m22[b])  # s = 4x
        q[b, 0] = (M[b, 2, 1] - M[b, 1, 2]) / s
        q[b, 1] = 0.25 * s
        q[b, 2] = (M[b, 0, 1] + M[b, 1, 0]) / s
        q[b, 3] = (M[b, 0, 2] + M[b, 2, 0]) / s
    b = branch == 2
    if np.any(b):
        s = 2.0 * np.sqrt(1.0 + m11[b] - m00[b] - m22[b])  # s = 4y
        q[b, 0] = (M[b, 0, 2] - M[b, 2, 0]) / s
        q[b, 1] = (M[b, 0, 1] + M[b, 1, 0]) / s
        q[b, 2] = 0.25 * s
        q[b, 3] = (M[b, 1, 2] + M[b, 2, 1]) / s
    b = branch == 3
    if np.any(b):
        s = 2.0 * np.sqrt(1.0 + m22[b] - m00[b] - m11[b])  # s = 4z
        q[b, 0] = (M[b, 1, 0] - M[b, 0, 1]) / s
        q[b, 1] = (M[b, 0, 2] + M[b, 2, 0]) / s
        q[b, 2] = (M[b, 1, 2] + M[b, 2, 1]) / s
        q[b, 3] = 0.25 * s

    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return canonicalize_quaternion(q).reshape(batch + (4,))
