import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsplatmpm.continuum import (
    MaterialParams, WorldTransform, estimate_particle_volumes, init_particles, normalize_to_domain,
)
from gsplatmpm.errors import ValidationError
from gsplatmpm.splat_io import GaussianCloud
from gsplatmpm.synthetic import lattice_cloud, sphere_cloud


def cloud_at(positions):
    n = len(positions)
    return GaussianCloud(np.asarray(positions, float), [[1, 0, 0, 0]] * n, np.full((n, 3), 0.01),
                         np.full(n, 0.5), np.full((n, 3), 0.5))


def test_lame_parameters():
    m = MaterialParams(density=1.0, youngs_modulus=1.0, poissons_ratio=0.0)
    assert m.mu == 0.5 and m.lam == 0.0
    m = MaterialParams(1.0, 2e5, 0.3)
    assert m.mu == pytest.approx(2e5 / 2.6)
    assert m.lam == pytest.approx(2e5 * 0.3 / (1.3 * 0.4))
    assert MaterialParams(1.0, 1.0, 0.4994).lam > 250  # 1/(3 (1 - 2 nu)) blows up


@pytest.mark.parametrize("kw", [dict(poissons_ratio=0.4995), dict(poissons_ratio=0.6), dict(poissons_ratio=-1.0),
                                dict(density=0.0), dict(youngs_modulus=-1.0)])
def test_material_validation(kw):
    with pytest.raises(ValidationError):
        MaterialParams(**kw)


def test_normalize_bbox_example():
    pos, tr = normalize_to_domain(cloud_at([[-1, -1, -1], [1, 1, 1], [0, 0.5, -0.2]]), 0.1)
    assert tr.scale == pytest.approx(0.4)
    np.testing.assert_allclose(pos.min(axis=0), 0.1)
    np.testing.assert_allclose(pos.max(axis=0), 0.9)


def test_normalize_preserves_aspect_and_centres():
    pos, tr = normalize_to_domain(cloud_at([[0, 0, 0], [4, 2, 1]]), 0.1)
    np.testing.assert_allclose(pos, [[0.1, 0.3, 0.4], [0.9, 0.7, 0.6]])


def test_single_point_goes_to_centre():
    pos, tr = normalize_to_domain(cloud_at([[3.0, -2.0, 7.0]] * 2), 0.1)
    assert tr.scale == 1.0
    np.testing.assert_allclose(pos, 0.5)


def test_normalize_errors():
    with pytest.raises(ValidationError):
        normalize_to_domain(GaussianCloud.empty())
    with pytest.raises(ValidationError):
        normalize_to_domain(cloud_at([[0, 0, 0]]), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 0.49))
def test_transform_round_trip(seed, margin):
    cloud = sphere_cloud(50, radius=float(np.random.default_rng(seed).uniform(0.01, 100)), seed=seed)
    pos, tr = normalize_to_domain(cloud, margin)
    np.testing.assert_allclose(tr.to_world(pos), cloud.positions, atol=1e-9 * max(1.0, np.abs(cloud.positions).max()))
    assert pos.min() >= margin - 1e-12 and pos.max() <= 1 - margin + 1e-12


def test_world_transform_validation():
    with pytest.raises(ValidationError):
        WorldTransform(0.0, np.zeros(3))


def test_volume_examples():
    rng = np.random.default_rng(0)
    np.testing.assert_allclose(estimate_particle_volumes(rng.uniform(0, 1, (8, 3)) * 0.999, 1.0), 0.125)
    np.testing.assert_allclose(estimate_particle_volumes([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]], 0.5), 0.125)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 300), st.sampled_from([0.5, 0.25, 1 / 7, 1 / 63]))
def test_volume_partition(seed, n, dx):
    pos = np.random.default_rng(seed).uniform(0, 1, (n, 3)) ** 2
    vol = estimate_particle_volumes(pos, dx)
    assert np.all(vol > 0)
    occupied = len({tuple(c) for c in np.floor(pos / dx).astype(int)})  # brute-force oracle
    assert vol.sum() == pytest.approx(occupied * dx**3, rel=1e-12)


def test_init_particles_contract():
    cloud = lattice_cloud(5, extent=(2, 1, 1), anisotropy=1.0)
    mat = MaterialParams(density=2.0)
    sys_ = init_particles(cloud, mat, grid_spacing=1 / 63)
    assert len(sys_) == cloud.count
    np.testing.assert_array_equal(sys_.F, np.tile(np.eye(3), (cloud.count, 1, 1)))
    np.testing.assert_array_equal(sys_.C, 0)
    np.testing.assert_array_equal(sys_.v, 0)
    assert sys_.t == 0.0
    np.testing.assert_array_equal(sys_.x, sys_.transform.to_sim(cloud.positions))
    np.testing.assert_array_equal(sys_.mass, 2.0 * sys_.vol0)
    assert sys_.mass.sum() == 2.0 * sys_.vol0.sum()  # power-of-two density scales exactly


def test_mass_from_density_example():
    # two particles far apart, each alone in a cell of volume 0.125
    cloud = cloud_at([[0, 0, 0], [1, 1, 1]])
    sys_ = init_particles(cloud, MaterialParams(density=2.0), grid_spacing=0.5, margin=0.2)
    np.testing.assert_allclose(sys_.vol0, 0.125)
    np.testing.assert_allclose(sys_.mass, 0.25)
