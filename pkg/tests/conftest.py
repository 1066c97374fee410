import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
import pytest

from gsplatmpm.continuum import MaterialParams, ParticleSystem
from gsplatmpm.synthetic import lattice_cloud, sphere_cloud


def make_system(n, lo=0.3, hi=0.7, *, seed=0, v=None, C_scale=0.0, material=None, F=None):
    """Random particles in an interior box with positive masses/volumes."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, (n, 3))
    vel = np.zeros((n, 3)) if v is None else np.broadcast_to(np.asarray(v, float), (n, 3)).copy()
    C = rng.normal(scale=C_scale, size=(n, 3, 3)) if C_scale else np.zeros((n, 3, 3))
    Fm = np.tile(np.eye(3), (n, 1, 1)) if F is None else np.broadcast_to(F, (n, 3, 3)).copy()
    mass = rng.uniform(0.5, 2.0, n) * 1e-3
    vol = rng.uniform(0.5, 2.0, n) * 1e-6
    return ParticleSystem(x, vel, Fm, C, mass, vol, material or MaterialParams())


def random_rotations(n, rng):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def random_spd(n, rng, max_log_cond=np.log(1e6)):
    R = random_rotations(n, rng)
    logs = rng.uniform(0, max_log_cond, (n, 3))
    logs -= logs.min(axis=1, keepdims=True)
    lam = np.exp(logs) * np.exp(rng.uniform(-3, 3, (n, 1)))
    return (R * lam[:, None, :]) @ np.swapaxes(R, 1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cloud():
    return lattice_cloud(6, anisotropy=1.0, seed=3)


@pytest.fixture
def ball_cloud():
    return sphere_cloud(400, seed=5)


ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: numbered acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
