"""Per-frame storage of deformed Gaussians (the 4D sequence).

Directory layout::

    manifest.json
    frame_0000.ply
    frame_0001.ply
    ...

Each frame is a regular 3DGS PLY, so any splat viewer can open it. The
manifest is written last (atomically), so a directory without one is an
incomplete export.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .continuum import ParticleSystem
from .deform import deform_cloud
from .errors import FormatVersionError, SequenceError
from .splat_io import GaussianCloud, parse_gaussian_ply, to_storage_precision, write_gaussian_ply

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"


def frame_filename(index: int) -> str:
    return f"frame_{index:04d}.ply"


@dataclass
class Frame:
    index: int
    time: float
    kernels: GaussianCloud

    @property
    def kernel_count(self) -> int:
        return self.kernels.count


@dataclass
class SequenceManifest:
    frame_count: int
    frame_dt: float
    kernel_count: int
    frames: list[dict] = field(default_factory=list)
    config_fingerprint: str = ""
    format_version: int = FORMAT_VERSION

    @property
    def files(self) -> list[str]:
        return [f["file"] for f in self.frames]

    def to_json(self) -> str:
        doc = {
            "format_version": self.format_version,
            "frame_count": self.frame_count,
            "frame_dt": self.frame_dt,
            "kernel_count": self.kernel_count,
            "frames": self.frames,
            "config_fingerprint": self.config_fingerprint,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SequenceManifest":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatVersionError(f"unsupported manifest format_version {version!r} (expected {FORMAT_VERSION})")
        try:
            return cls(
                frame_count=int(doc["frame_count"]),
                frame_dt=float(doc["frame_dt"]),
                kernel_count=int(doc["kernel_count"]),
                frames=[{"index": int(f["index"]), "time": float(f["time"]), "file": str(f["file"])}
                        for f in doc["frames"]],
                config_fingerprint=str(doc.get("config_fingerprint", "")),
                format_version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SequenceError(f"malformed manifest: {exc}") from exc


def snapshot(system: ParticleSystem, source: GaussianCloud, index: int) -> Frame:
    """Capture the deformed kernels of ``source`` at the system's current time.

    Kernels are held at storage (float32) precision, so an exported and
    re-imported frame is identical to the in-memory one.
    """
    kernels = to_storage_precision(deform_cloud(source, system))
    return Frame(index=index, time=float(system.t), kernels=kernels)


def _check_frames(frames: list[Frame]) -> None:
    if not frames:
        raise SequenceError("cannot export an empty frame sequence")
    counts = {f.kernel_count for f in frames}
    if len(counts) != 1:
        raise SequenceError(f"kernel count varies across frames: {sorted(counts)}")
    times = [f.time for f in frames]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise SequenceError("frame times must be strictly increasing")


def write_frame(frame: Frame, directory: str | Path) -> str:
    name = frame_filename(frame.index)
    path = Path(directory) / name
    try:
        path.write_bytes(write_gaussian_ply(frame.kernels))
    except OSError as exc:
        raise SequenceError(f"failed to write {path}: {exc}") from exc
    return name


def write_manifest(manifest: SequenceManifest, directory: str | Path) -> None:
    directory = Path(directory)
    fd, tmp = tempfile.mkstemp(prefix=".manifest.", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(manifest.to_json())
        os.replace(tmp, directory / MANIFEST_NAME)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise SequenceError(f"failed to write {directory / MANIFEST_NAME}: {exc}") from exc


def build_manifest(frames: list[Frame], frame_dt: float, config_fingerprint: str = "") -> SequenceManifest:
    return SequenceManifest(
        frame_count=len(frames),
        frame_dt=float(frame_dt),
        kernel_count=frames[0].kernel_count if frames else 0,
        frames=[{"index": f.index, "time": f.time, "file": frame_filename(f.index)} for f in frames],
        config_fingerprint=config_fingerprint,
    )


def export_sequence(frames: list[Frame], directory: str | Path, frame_dt: float | None = None,
                    config_fingerprint: str = "") -> SequenceManifest:
    """Write one PLY per frame and then ``manifest.json``."""
    _check_frames(frames)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if frame_dt is None:
        frame_dt = frames[1].time - frames[0].time if len(frames) > 1 else 0.0
    for frame in frames:
        write_frame(frame, directory)
    manifest = build_manifest(frames, frame_dt, config_fingerprint)
    write_manifest(manifest, directory)
    return manifest


def read_manifest(directory: str | Path) -> SequenceManifest:
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise SequenceError(f"no {MANIFEST_NAME} in {directory}")
    manifest = SequenceManifest.from_json(path.read_text())
    if manifest.frame_count != len(manifest.frames):
        raise SequenceError(
            f"manifest frame_count={manifest.frame_count} but lists {len(manifest.frames)} frames"
        )
    return manifest


def import_sequence(directory: str | Path, expected_fingerprint: str | None = None) -> list[Frame]:
    """Load a sequence written by :func:`export_sequence`, in index order."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    if expected_fingerprint is not None and expected_fingerprint != manifest.config_fingerprint:
        log.warning("config fingerprint mismatch: manifest has %s, expected %s",
                    manifest.config_fingerprint, expected_fingerprint)
    missing = [f["file"] for f in manifest.frames if not (directory / f["file"]).is_file()]
    if missing:
        raise SequenceError(f"missing frame file {missing[0]}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    frames = []
    for entry in sorted(manifest.frames, key=lambda f: f["index"]):
        cloud = parse_gaussian_ply((directory / entry["file"]).read_bytes())
        if cloud.count != manifest.kernel_count:
            raise SequenceError(
                f"{entry['file']} has {cloud.count} kernels, manifest says {manifest.kernel_count}"
            )
        frames.append(Frame(index=entry["index"], time=entry["time"], kernels=cloud))
    return frames
