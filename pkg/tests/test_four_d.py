import json
import logging

import numpy as np
import pytest

from gsplatmpm.continuum import init_particles
from gsplatmpm.errors import FormatVersionError, SequenceError
from gsplatmpm.four_d import (
    MANIFEST_NAME, Frame, SequenceManifest, export_sequence, frame_filename, import_sequence, read_manifest, snapshot,
)
from gsplatmpm.mpm import GridConfig, Simulator
from gsplatmpm.synthetic import lattice_cloud


def assert_clouds_close(a, b, atol=1e-6):
    assert a.count == b.count
    np.testing.assert_allclose(a.positions, b.positions, atol=atol, rtol=atol)
    np.testing.assert_allclose(a.covariances(), b.covariances(), atol=atol * 1e-2, rtol=atol)
    np.testing.assert_allclose(a.opacities, b.opacities, atol=atol)
    np.testing.assert_allclose(a.colors, b.colors, atol=atol)


@pytest.fixture(scope="module")
def sim_frames():
    cloud = lattice_cloud(6, anisotropy=1.0, seed=4)
    sys_ = init_particles(cloud, grid_spacing=1 / 31)
    sim = Simulator(sys_, GridConfig(32), gravity=(0, 0, -9.8), dt_max=5e-4, frame_dt=0.01)
    frames = []
    sim.run(14, lambda k, s: frames.append(snapshot(s, cloud, k)))
    return cloud, frames


def test_snapshot_at_t0_reproduces_source(small_cloud):
    sys_ = init_particles(small_cloud)
    frame = snapshot(sys_, small_cloud, 0)
    assert frame.time == 0.0 and frame.index == 0
    assert_clouds_close(frame.kernels, small_cloud)
    np.testing.assert_allclose(np.sort(frame.kernels.scales, axis=1), np.sort(small_cloud.scales, axis=1), rtol=1e-6)
    again = snapshot(sys_, small_cloud, 0)
    for name in ("positions", "rotations", "scales", "opacities", "colors"):
        np.testing.assert_array_equal(getattr(frame.kernels, name), getattr(again.kernels, name))


def test_export_import_round_trip(tmp_path, sim_frames):
    cloud, frames = sim_frames
    manifest = export_sequence(frames, tmp_path, frame_dt=0.01, config_fingerprint="abc")
    assert manifest.frame_count == 14 and manifest.kernel_count == cloud.count
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted([MANIFEST_NAME] + [frame_filename(i) for i in range(14)])
    doc = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert set(doc) == {"format_version", "frame_count", "frame_dt", "kernel_count", "frames", "config_fingerprint"}
    assert doc["frames"][3] == {"index": 3, "time": frames[3].time, "file": "frame_0003.ply"}
    back = import_sequence(tmp_path)
    assert [f.index for f in back] == list(range(14))
    assert [f.time for f in back] == [f.time for f in frames]
    for a, b in zip(frames, back):
        assert_clouds_close(b.kernels, a.kernels)
    assert frames[-1].time == pytest.approx(0.13)
    # motion actually happened
    assert frames[-1].kernels.positions[:, 2].mean() < frames[0].kernels.positions[:, 2].mean() - 1e-3


def test_empty_and_inconsistent_sequences_rejected(tmp_path, sim_frames):
    cloud, frames = sim_frames
    with pytest.raises(SequenceError):
        export_sequence([], tmp_path)
    with pytest.raises(SequenceError):
        export_sequence([frames[1], frames[0]], tmp_path)
    with pytest.raises(SequenceError):
        export_sequence([frames[0], Frame(1, 1.0, lattice_cloud(2))], tmp_path)
    assert not (tmp_path / MANIFEST_NAME).exists()


def test_missing_frame_named(tmp_path, sim_frames):
    _, frames = sim_frames
    export_sequence(frames, tmp_path)
    (tmp_path / "frame_0013.ply").unlink()
    with pytest.raises(SequenceError, match="frame_0013.ply"):
        import_sequence(tmp_path)


def test_unknown_format_version(tmp_path, sim_frames):
    _, frames = sim_frames
    export_sequence(frames[:2], tmp_path)
    doc = json.loads((tmp_path / MANIFEST_NAME).read_text())
    doc["format_version"] = 99
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(FormatVersionError, match="99"):
        import_sequence(tmp_path)


def test_manifest_count_checks(tmp_path, sim_frames):
    _, frames = sim_frames
    export_sequence(frames[:3], tmp_path)
    doc = json.loads((tmp_path / MANIFEST_NAME).read_text())
    doc["frame_count"] = 4
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(SequenceError):
        read_manifest(tmp_path)
    doc["frame_count"] = 3
    doc["kernel_count"] = 5
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(doc))
    with pytest.raises(SequenceError, match="kernels"):
        import_sequence(tmp_path)
    with pytest.raises(SequenceError):
        import_sequence(tmp_path / "nowhere")


def test_fingerprint_mismatch_only_warns(tmp_path, sim_frames, caplog):
    _, frames = sim_frames
    export_sequence(frames[:2], tmp_path, config_fingerprint="aaa")
    with caplog.at_level(logging.WARNING):
        back = import_sequence(tmp_path, expected_fingerprint="bbb")
    assert len(back) == 2
    assert "fingerprint" in caplog.text


def test_no_temp_files_left(tmp_path, sim_frames):
    _, frames = sim_frames
    export_sequence(frames[:2], tmp_path)
    export_sequence(frames[:2], tmp_path)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_manifest_json_round_trip():
    m = SequenceManifest(2, 1 / 24, 7, [{"index": 0, "time": 0.0, "file": "frame_0000.ply"},
                                        {"index": 1, "time": 1 / 24, "file": "frame_0001.ply"}], "ff")
    assert SequenceManifest.from_json(m.to_json()) == m
    with pytest.raises(SequenceError):
        SequenceManifest.from_json('{"format_version": 1}')


def test_imported_frames_identical_to_in_memory(tmp_path, sim_frames):
    _, frames = sim_frames
    export_sequence(frames, tmp_path)
    for a, b in zip(frames, import_sequence(tmp_path)):
        for name in ("positions", "rotations", "scales", "opacities", "colors"):
            np.testing.assert_array_equal(getattr(a.kernels, name), getattr(b.kernels, name))
