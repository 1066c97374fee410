"""Slow reference implementations used as independent oracles in tests."""

import itertools

import numpy as np
from scipy.linalg import polar


def bspline_1d(fx):
    return np.array([0.5 * (1.5 - fx) ** 2, 0.75 - (fx - 1.0) ** 2, 0.5 * (fx - 0.5) ** 2])


def corotated_energy(F, mu, lam):
    R, _ = polar(F)
    J = np.linalg.det(F)
    return mu * np.sum((F - R) ** 2) + 0.5 * lam * (J - 1.0) ** 2


def fd_stress(F, mu, lam, h=1e-6):
    P = np.zeros((3, 3))
    for i, j in itertools.product(range(3), range(3)):
        Fp, Fm = F.copy(), F.copy()
        Fp[i, j] += h
        Fm[i, j] -= h
        P[i, j] = (corotated_energy(Fp, mu, lam) - corotated_energy(Fm, mu, lam)) / (2 * h)
    return P


def stress_scipy(F, mu, lam):
    R, _ = polar(F)
    J = np.linalg.det(F)
    return 2 * mu * (F - R) + lam * (J - 1) * J * np.linalg.inv(F).T


def p2g_bruteforce(x, v, C, F, mass, vol, mu, lam, dt, n):
    """Per-particle, per-node loop straight from the transfer formula."""
    dx = 1.0 / (n - 1)
    grid_m = np.zeros((n, n, n))
    grid_mv = np.zeros((n, n, n, 3))
    for p in range(len(x)):
        s = x[p] / dx
        base = np.floor(s - 0.5).astype(int)
        w = [bspline_1d(s[a] - base[a]) for a in range(3)]
        P = stress_scipy(F[p], mu, lam)
        affine = mass[p] * C[p] - dt * 4.0 / dx**2 * vol[p] * P @ F[p].T
        for i, j, k in itertools.product(range(3), repeat=3):
            node = base + (i, j, k)
            wi = w[0][i] * w[1][j] * w[2][k]
            dpos = node * dx - x[p]
            grid_m[tuple(node)] += wi * mass[p]
            grid_mv[tuple(node)] += wi * (mass[p] * v[p] + affine @ dpos)
    return grid_m, grid_mv


def g2p_bruteforce(x, grid_v, dt, n):
    dx = 1.0 / (n - 1)
    vs, Cs = np.zeros((len(x), 3)), np.zeros((len(x), 3, 3))
    for p in range(len(x)):
        s = x[p] / dx
        base = np.floor(s - 0.5).astype(int)
        w = [bspline_1d(s[a] - base[a]) for a in range(3)]
        for i, j, k in itertools.product(range(3), repeat=3):
            node = base + (i, j, k)
            wi = w[0][i] * w[1][j] * w[2][k]
            vi = grid_v[tuple(node)]
            vs[p] += wi * vi
            Cs[p] += 4.0 / dx**2 * wi * np.outer(vi, node * dx - x[p])
    return x + dt * vs, vs, Cs
