"""Compiled inner loops for the MPM step.

Everything here works on plain contiguous float64 arrays. Status returns use
``(code, particle)`` with code 0 = ok, 1 = domain escape, 2 = inverted element.
The grid is an ``(n, n, n, 4)`` array holding momentum in ``[..., :3]`` and
mass in ``[..., 3]``.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

OK = 0
ESCAPED = 1
INVERTED = 2

_POLAR_TOL = 1e-15
_POLAR_MAX_ITER = 60


@nb.njit(cache=True, inline="always")
def _det3(a00, a01, a02, a10, a11, a12, a20, a21, a22):
    return a00 * (a11 * a22 - a12 * a21) - a01 * (a10 * a22 - a12 * a20) + a02 * (a10 * a21 - a11 * a20)


@nb.njit(cache=True)
def polar_rotation(F, R):
    """Write the rotation factor of ``F = R S`` into ``R``.

    Scaled Newton iteration ``X <- (g X + X^{-T} / g) / 2``; the scaling is
    dropped once the iterate is close to orthogonal. Returns ``det(F)``.
    """
    x00, x01, x02 = F[0, 0], F[0, 1], F[0, 2]
    x10, x11, x12 = F[1, 0], F[1, 1], F[1, 2]
    x20, x21, x22 = F[2, 0], F[2, 1], F[2, 2]
    det_f = _det3(x00, x01, x02, x10, x11, x12, x20, x21, x22)
    if not det_f > 0.0:
        return det_f
    scaled = True
    for _ in range(_POLAR_MAX_ITER):
        d = _det3(x00, x01, x02, x10, x11, x12, x20, x21, x22)
        # cofactor matrix: X^{-T} = cof(X) / det(X)
        c00 = x11 * x22 - x12 * x21
        c01 = x12 * x20 - x10 * x22
        c02 = x10 * x21 - x11 * x20
        c10 = x02 * x21 - x01 * x22
        c11 = x00 * x22 - x02 * x20
        c12 = x01 * x20 - x00 * x21
        c20 = x01 * x12 - x02 * x11
        c21 = x02 * x10 - x00 * x12
        c22 = x00 * x11 - x01 * x10
        g = abs(d) ** (-1.0 / 3.0) if scaled else 1.0
        a = 0.5 * g
        b = 0.5 / (g * d)
        n00 = a * x00 + b * c00
        n01 = a * x01 + b * c01
        n02 = a * x02 + b * c02
        n10 = a * x10 + b * c10
        n11 = a * x11 + b * c11
        n12 = a * x12 + b * c12
        n20 = a * x20 + b * c20
        n21 = a * x21 + b * c21
        n22 = a * x22 + b * c22
        diff = (abs(n00 - x00) + abs(n01 - x01) + abs(n02 - x02)
                + abs(n10 - x10) + abs(n11 - x11) + abs(n12 - x12)
                + abs(n20 - x20) + abs(n21 - x21) + abs(n22 - x22))
        x00, x01, x02 = n00, n01, n02
        x10, x11, x12 = n10, n11, n12
        x20, x21, x22 = n20, n21, n22
        if diff < 1e-2:
            scaled = False
        if diff <= _POLAR_TOL:
            break
    R[0, 0], R[0, 1], R[0, 2] = x00, x01, x02
    R[1, 0], R[1, 1], R[1, 2] = x10, x11, x12
    R[2, 0], R[2, 1], R[2, 2] = x20, x21, x22
    return det_f


@nb.njit(cache=True)
def first_piola_batch(F, mu, lam, P):
    """Fixed-corotated first Piola-Kirchhoff stress for a batch (P, 3, 3).

    Returns the index of the first inverted matrix, or -1.
    """
    R = np.empty((3, 3))
    for p in range(F.shape[0]):
        J = polar_rotation(F[p], R)
        if not J > 0.0:
            return p
        Fp = F[p]
        # F^{-T} = cof(F) / J
        cof = np.empty((3, 3))
        cof[0, 0] = Fp[1, 1] * Fp[2, 2] - Fp[1, 2] * Fp[2, 1]
        cof[0, 1] = Fp[1, 2] * Fp[2, 0] - Fp[1, 0] * Fp[2, 2]
        cof[0, 2] = Fp[1, 0] * Fp[2, 1] - Fp[1, 1] * Fp[2, 0]
        cof[1, 0] = Fp[0, 2] * Fp[2, 1] - Fp[0, 1] * Fp[2, 2]
        cof[1, 1] = Fp[0, 0] * Fp[2, 2] - Fp[0, 2] * Fp[2, 0]
        cof[1, 2] = Fp[0, 1] * Fp[2, 0] - Fp[0, 0] * Fp[2, 1]
        cof[2, 0] = Fp[0, 1] * Fp[1, 2] - Fp[0, 2] * Fp[1, 1]
        cof[2, 1] = Fp[0, 2] * Fp[1, 0] - Fp[0, 0] * Fp[1, 2]
        cof[2, 2] = Fp[0, 0] * Fp[1, 1] - Fp[0, 1] * Fp[1, 0]
        # lam (J - 1) J F^{-T} = lam (J - 1) cof(F)
        k = lam * (J - 1.0)
        for i in range(3):
            for j in range(3):
                P[p, i, j] = 2.0 * mu * (Fp[i, j] - R[i, j]) + k * cof[i, j]
    return -1


@nb.njit(cache=True, inline="always")
def _weights(fx, w):
    w[0] = 0.5 * (1.5 - fx) ** 2
    w[1] = 0.75 - (fx - 1.0) ** 2
    w[2] = 0.5 * (fx - 0.5) ** 2


@nb.njit(cache=True)
def check_domain(x, inv_dx, n):
    """Index of the first particle whose stencil leaves the grid, or -1."""
    lo = 0.5
    hi = n - 1.5
    for p in range(x.shape[0]):
        for a in range(3):
            s = x[p, a] * inv_dx
            if not (s >= lo and s < hi):
                return p
    return -1


@nb.njit(cache=True, inline="always")
def _scatter(p, x, v, C, F, mass, vol0, mu, lam, dt, inv_dx, grid, R, wx, wy, wz):
    """Scatter particle ``p`` into ``grid`` (MLS-MPM fused stress form).

    Returns False if the particle's element is inverted.
    """
    J = polar_rotation(F[p], R)
    if not J > 0.0:
        return False
    f00, f01, f02 = F[p, 0, 0], F[p, 0, 1], F[p, 0, 2]
    f10, f11, f12 = F[p, 1, 0], F[p, 1, 1], F[p, 1, 2]
    f20, f21, f22 = F[p, 2, 0], F[p, 2, 1], F[p, 2, 2]
    # Kirchhoff stress P F^T = 2 mu (F - R) F^T + lam (J - 1) J I
    d00, d01, d02 = f00 - R[0, 0], f01 - R[0, 1], f02 - R[0, 2]
    d10, d11, d12 = f10 - R[1, 0], f11 - R[1, 1], f12 - R[1, 2]
    d20, d21, d22 = f20 - R[2, 0], f21 - R[2, 1], f22 - R[2, 2]
    tm = 2.0 * mu
    iso = lam * (J - 1.0) * J
    k00 = tm * (d00 * f00 + d01 * f01 + d02 * f02) + iso
    k01 = tm * (d00 * f10 + d01 * f11 + d02 * f12)
    k02 = tm * (d00 * f20 + d01 * f21 + d02 * f22)
    k10 = tm * (d10 * f00 + d11 * f01 + d12 * f02)
    k11 = tm * (d10 * f10 + d11 * f11 + d12 * f12) + iso
    k12 = tm * (d10 * f20 + d11 * f21 + d12 * f22)
    k20 = tm * (d20 * f00 + d21 * f01 + d22 * f02)
    k21 = tm * (d20 * f10 + d21 * f11 + d22 * f12)
    k22 = tm * (d20 * f20 + d21 * f21 + d22 * f22) + iso

    m = mass[p]
    s = dt * 4.0 * inv_dx * inv_dx * vol0[p]
    a00 = m * C[p, 0, 0] - s * k00
    a01 = m * C[p, 0, 1] - s * k01
    a02 = m * C[p, 0, 2] - s * k02
    a10 = m * C[p, 1, 0] - s * k10
    a11 = m * C[p, 1, 1] - s * k11
    a12 = m * C[p, 1, 2] - s * k12
    a20 = m * C[p, 2, 0] - s * k20
    a21 = m * C[p, 2, 1] - s * k21
    a22 = m * C[p, 2, 2] - s * k22
    mv0, mv1, mv2 = m * v[p, 0], m * v[p, 1], m * v[p, 2]

    sx = x[p, 0] * inv_dx
    sy = x[p, 1] * inv_dx
    sz = x[p, 2] * inv_dx
    bx = int(math.floor(sx - 0.5))
    by = int(math.floor(sy - 0.5))
    bz = int(math.floor(sz - 0.5))
    fx, fy, fz = sx - bx, sy - by, sz - bz
    _weights(fx, wx)
    _weights(fy, wy)
    _weights(fz, wz)
    dx = 1.0 / inv_dx
    for i in range(3):
        rx = (i - fx) * dx
        for j in range(3):
            ry = (j - fy) * dx
            wij = wx[i] * wy[j]
            for k in range(3):
                rz = (k - fz) * dx
                w = wij * wz[k]
                cell = grid[bx + i, by + j, bz + k]
                cell[0] += w * (mv0 + a00 * rx + a01 * ry + a02 * rz)
                cell[1] += w * (mv1 + a10 * rx + a11 * ry + a12 * rz)
                cell[2] += w * (mv2 + a20 * rx + a21 * ry + a22 * rz)
                cell[3] += w * m
    return True


@nb.njit(cache=True)
def p2g_serial(x, v, C, F, mass, vol0, mu, lam, dt, inv_dx, grid):
    """Deterministic scatter in particle order. Returns (code, particle)."""
    n = grid.shape[0]
    bad = check_domain(x, inv_dx, n)
    if bad >= 0:
        return ESCAPED, bad
    R = np.empty((3, 3))
    wx = np.empty(3)
    wy = np.empty(3)
    wz = np.empty(3)
    for p in range(x.shape[0]):
        if not _scatter(p, x, v, C, F, mass, vol0, mu, lam, dt, inv_dx, grid, R, wx, wy, wz):
            return INVERTED, p
    return OK, -1


@nb.njit(cache=True, parallel=True)
def p2g_chunked(x, v, C, F, mass, vol0, mu, lam, dt, inv_dx, grid, nchunks):
    """Scatter into per-chunk private grids, then reduce in chunk order."""
    n = grid.shape[0]
    bad = check_domain(x, inv_dx, n)
    if bad >= 0:
        return ESCAPED, bad
    P = x.shape[0]
    private = np.zeros((nchunks, n, n, n, 4))
    status = np.full(nchunks, -1, dtype=np.int64)
    per = (P + nchunks - 1) // nchunks
    for c in nb.prange(nchunks):
        R = np.empty((3, 3))
        wx = np.empty(3)
        wy = np.empty(3)
        wz = np.empty(3)
        g = private[c]
        for p in range(c * per, min(P, (c + 1) * per)):
            if not _scatter(p, x, v, C, F, mass, vol0, mu, lam, dt, inv_dx, g, R, wx, wy, wz):
                status[c] = p
                break
    for c in range(nchunks):
        if status[c] >= 0:
            return INVERTED, status[c]
    for i in nb.prange(n):
        for j in range(n):
            for k in range(n):
                for c in range(nchunks):
                    for a in range(4):
                        grid[i, j, k, a] += private[c, i, j, k, a]
    return OK, -1


@nb.njit(cache=True, parallel=True)
def grid_update(grid, vel, dt, gx, gy, gz, bw, slip):
    """Momentum -> velocity, gravity, boundary condition. Inactive nodes get v = 0."""
    n = grid.shape[0]
    for i in nb.prange(n):
        for j in range(n):
            for k in range(n):
                m = grid[i, j, k, 3]
                if m > 0.0:
                    vx = grid[i, j, k, 0] / m + dt * gx
                    vy = grid[i, j, k, 1] / m + dt * gy
                    vz = grid[i, j, k, 2] / m + dt * gz
                    bi = i < bw or i >= n - bw
                    bj = j < bw or j >= n - bw
                    bk = k < bw or k >= n - bw
                    if slip:
                        if bi:
                            vx = 0.0
                        if bj:
                            vy = 0.0
                        if bk:
                            vz = 0.0
                    elif bi or bj or bk:
                        vx = 0.0
                        vy = 0.0
                        vz = 0.0
                    vel[i, j, k, 0] = vx
                    vel[i, j, k, 1] = vy
                    vel[i, j, k, 2] = vz
                else:
                    vel[i, j, k, 0] = 0.0
                    vel[i, j, k, 1] = 0.0
                    vel[i, j, k, 2] = 0.0


@nb.njit(cache=True, parallel=True)
def g2p(x, vel, inv_dx, dt, x_out, v_out, C_out):
    """Gather velocities and APIC affine matrices; advect positions.

    A gather, so the result does not depend on the thread count.
    Returns the index of the first particle that left the valid region, or -1.
    """
    n = vel.shape[0]
    P = x.shape[0]
    escaped = np.full(P, False)
    dx = 1.0 / inv_dx
    scale = 4.0 * inv_dx * inv_dx
    for p in nb.prange(P):
        wx = np.empty(3)
        wy = np.empty(3)
        wz = np.empty(3)
        sx = x[p, 0] * inv_dx
        sy = x[p, 1] * inv_dx
        sz = x[p, 2] * inv_dx
        bx = int(math.floor(sx - 0.5))
        by = int(math.floor(sy - 0.5))
        bz = int(math.floor(sz - 0.5))
        fx, fy, fz = sx - bx, sy - by, sz - bz
        _weights(fx, wx)
        _weights(fy, wy)
        _weights(fz, wz)
        v0 = v1 = v2 = 0.0
        c00 = c01 = c02 = c10 = c11 = c12 = c20 = c21 = c22 = 0.0
        for i in range(3):
            rx = (i - fx) * dx
            for j in range(3):
                ry = (j - fy) * dx
                wij = wx[i] * wy[j]
                for k in range(3):
                    rz = (k - fz) * dx
                    w = wij * wz[k]
                    cell = vel[bx + i, by + j, bz + k]
                    gv0 = w * cell[0]
                    gv1 = w * cell[1]
                    gv2 = w * cell[2]
                    v0 += gv0
                    v1 += gv1
                    v2 += gv2
                    c00 += gv0 * rx
                    c01 += gv0 * ry
                    c02 += gv0 * rz
                    c10 += gv1 * rx
                    c11 += gv1 * ry
                    c12 += gv1 * rz
                    c20 += gv2 * rx
                    c21 += gv2 * ry
                    c22 += gv2 * rz
        v_out[p, 0] = v0
        v_out[p, 1] = v1
        v_out[p, 2] = v2
        C_out[p, 0, 0] = scale * c00
        C_out[p, 0, 1] = scale * c01
        C_out[p, 0, 2] = scale * c02
        C_out[p, 1, 0] = scale * c10
        C_out[p, 1, 1] = scale * c11
        C_out[p, 1, 2] = scale * c12
        C_out[p, 2, 0] = scale * c20
        C_out[p, 2, 1] = scale * c21
        C_out[p, 2, 2] = scale * c22
        nx = x[p, 0] + dt * v0
        ny = x[p, 1] + dt * v1
        nz = x[p, 2] + dt * v2
        x_out[p, 0] = nx
        x_out[p, 1] = ny
        x_out[p, 2] = nz
        for s in (nx * inv_dx, ny * inv_dx, nz * inv_dx):
            if not (s >= 0.5 and s < n - 1.5):
                escaped[p] = True
    for p in range(P):
        if escaped[p]:
            return p
    return -1


@nb.njit(cache=True, parallel=True)
def update_deformation(F, C, dt, F_out):
    """``F_out = (I + dt C) F``. Returns the first particle with det <= 0, or -1."""
    P = F.shape[0]
    inverted = np.full(P, False)
    for p in nb.prange(P):
        for i in range(3):
            a0 = dt * C[p, i, 0]
            a1 = dt * C[p, i, 1]
            a2 = dt * C[p, i, 2]
            if i == 0:
                a0 += 1.0
            elif i == 1:
                a1 += 1.0
            else:
                a2 += 1.0
            for j in range(3):
                F_out[p, i, j] = a0 * F[p, 0, j] + a1 * F[p, 1, j] + a2 * F[p, 2, j]
        Fo = F_out[p]
        d = _det3(Fo[0, 0], Fo[0, 1], Fo[0, 2], Fo[1, 0], Fo[1, 1], Fo[1, 2], Fo[2, 0], Fo[2, 1], Fo[2, 2])
        if not d > 0.0:
            inverted[p] = True
    for p in range(P):
        if inverted[p]:
            return p
    return -1


@nb.njit(cache=True)
def max_speed(v):
    best = 0.0
    for p in range(v.shape[0]):
        s = v[p, 0] * v[p, 0] + v[p, 1] * v[p, 1] + v[p, 2] * v[p, 2]
        if s > best:
            best = s
    return math.sqrt(best)
