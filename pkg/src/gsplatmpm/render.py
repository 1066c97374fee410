"""Deterministic CPU splatting renderer.

Kernels are projected to screen-space Gaussians with the local-affine (EWA)
approximation, sorted front to back once per frame, and alpha-composited per
pixel. Pixel ``(px, py)`` is sampled at its centre ``(px + 0.5, py + 0.5)``;
the principal point is the image centre. Camera space is x right, y down,
z forward.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np
from PIL import Image, PngImagePlugin

from .errors import ValidationError
from .four_d import Frame, import_sequence
from .splat_io import GaussianCloud, GaussianKernel

COV2D_DILATION = 0.3
T_MIN = 1e-4
# contributions below this are skipped by render_frame; it bounds each splat's footprint
SIGMA_MIN = 1.0 / 255.0
BAND_HEIGHT = 16


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)
    vertical_fov: float = math.radians(60.0)
    width: int = 512
    height: int = 512
    near: float = 0.01

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))
        f = np.subtract(self.look_at, self.position)
        if np.linalg.norm(f) == 0:
            raise ValidationError("camera position equals look_at")
        f = f / np.linalg.norm(f)
        up = np.asarray(self.up)
        if np.linalg.norm(up) == 0 or np.linalg.norm(np.cross(f, up)) < 1e-9 * np.linalg.norm(up):
            raise ValidationError("camera up vector is parallel to the view direction")
        if not 0.0 < self.vertical_fov < math.pi:
            raise ValidationError("vertical_fov must lie in (0, pi)")
        if not self.near > 0:
            raise ValidationError("near must be positive")

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(0.5 * self.vertical_fov)

    def rotation(self) -> np.ndarray:
        """World -> camera rotation; rows are right, down, forward."""
        f = np.subtract(self.look_at, self.position)
        f /= np.linalg.norm(f)
        r = np.cross(f, self.up)
        r /= np.linalg.norm(r)
        d = np.cross(f, r)
        return np.stack([r, d, f])

    def orbit(self, degrees: float) -> "Camera":
        """Rotate the camera position about ``look_at`` around the up axis."""
        k = np.asarray(self.up) / np.linalg.norm(self.up)
        a = math.radians(degrees)
        p = np.subtract(self.position, self.look_at)
        p_rot = p * math.cos(a) + np.cross(k, p) * math.sin(a) + k * (k @ p) * (1.0 - math.cos(a))
        return replace(self, position=tuple(np.add(self.look_at, p_rot)))


@dataclass(frozen=True)
class Splat2D:
    center: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float


def default_camera(cloud: GaussianCloud, width: int = 512, height: int = 512,
                   fov_deg: float = 60.0) -> Camera:
    """Camera on the -y side of the cloud, z up, framing its bounding sphere."""
    if cloud.count:
        lo, hi = cloud.positions.min(axis=0), cloud.positions.max(axis=0)
    else:
        lo = hi = np.zeros(3)
    center = 0.5 * (lo + hi)
    radius = max(0.5 * float(np.linalg.norm(hi - lo)), 1e-3)
    dist = 1.1 * radius / math.sin(0.5 * math.radians(fov_deg))
    return Camera(position=tuple(center - np.array([0.0, dist, 0.0])), look_at=tuple(center),
                  up=(0.0, 0.0, 1.0), vertical_fov=math.radians(fov_deg), width=width, height=height)


# ---------------------------------------------------------------------------
# projection


def project_arrays(positions: np.ndarray, covariances: np.ndarray, camera: Camera, *, dilation=COV2D_DILATION):
    """Vectorized projection. Returns ``(centers, cov2d, depth, visible)``."""
    W = camera.rotation()
    t = (positions - np.asarray(camera.position)) @ W.T
    z = t[:, 2]
    visible = z > camera.near
    zs = np.where(visible, z, 1.0)
    f = camera.focal
    centers = np.stack([f * t[:, 0] / zs + 0.5 * camera.width, f * t[:, 1] / zs + 0.5 * camera.height], axis=1)
    J = np.zeros((len(positions), 2, 3))
    J[:, 0, 0] = f / zs
    J[:, 0, 2] = -f * t[:, 0] / zs**2
    J[:, 1, 1] = f / zs
    J[:, 1, 2] = -f * t[:, 1] / zs**2
    T = J @ W
    cov2d = T @ covariances @ np.swapaxes(T, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2)) + dilation * np.eye(2)
    return centers, cov2d, z, visible


def project_gaussian(kernel: GaussianKernel, camera: Camera) -> Splat2D | None:
    """Screen-space Gaussian for one kernel, or ``None`` if behind the near plane."""
    centers, cov2d, depth, visible = project_arrays(
        np.asarray(kernel.position, dtype=np.float64)[None], kernel.covariance()[None], camera)
    if not visible[0]:
        return None
    return Splat2D(center=centers[0], cov2d=cov2d[0], depth=float(depth[0]),
                   color=np.asarray(kernel.color, dtype=np.float64), opacity=float(kernel.opacity))


# ---------------------------------------------------------------------------
# compositing


def splat_sigma(splat: Splat2D, pixel) -> float:
    d = np.asarray(pixel, dtype=np.float64) - splat.center
    q = d @ np.linalg.solve(splat.cov2d, d)
    return splat.opacity * math.exp(-0.5 * q)


def composite(splats: Sequence[Splat2D], pixel, *, min_sigma: float = 0.0, return_alpha: bool = False):
    """Front-to-back alpha compositing of depth-sorted splats at one pixel.

    ``C = sum_i c_i s_i prod_{j<i} (1 - s_j)`` with ``s_i = alpha_i G_i(pixel)``.
    Stops once transmittance drops below 1e-4. The background is
    transparent black.
    """
    color = np.zeros(3)
    T = 1.0
    for s in splats:
        sigma = splat_sigma(s, pixel)
        if sigma < min_sigma or sigma <= 0.0:
            continue
        color += np.asarray(s.color) * (sigma * T)
        T *= 1.0 - sigma
        if T < T_MIN:
            break
    return (color, 1.0 - T) if return_alpha else color


@nb.njit(cache=True)
def _raster_band(y0, y1, width, centers, conics, colors, opacity, boxes, out_rgb, out_T, min_sigma):
    T = np.ones((y1 - y0, width))
    done = np.zeros((y1 - y0, width), dtype=np.bool_)
    live = (y1 - y0) * width
    for s in range(centers.shape[0]):
        bx0, by0, bx1, by1 = boxes[s, 0], boxes[s, 1], boxes[s, 2], boxes[s, 3]
        if by1 < y0 or by0 >= y1:
            continue
        cx, cy = centers[s, 0], centers[s, 1]
        a, b, c = conics[s, 0], conics[s, 1], conics[s, 2]
        op = opacity[s]
        for py in range(max(by0, y0), min(by1 + 1, y1)):
            dy = py + 0.5 - cy
            r = py - y0
            for px in range(bx0, bx1 + 1):
                if done[r, px]:
                    continue
                dx = px + 0.5 - cx
                q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                sigma = op * math.exp(-0.5 * q)
                if sigma < min_sigma or sigma <= 0.0:
                    continue
                w = sigma * T[r, px]
                out_rgb[py, px, 0] += colors[s, 0] * w
                out_rgb[py, px, 1] += colors[s, 1] * w
                out_rgb[py, px, 2] += colors[s, 2] * w
                T[r, px] *= 1.0 - sigma
                if T[r, px] < T_MIN:
                    done[r, px] = True
                    live -= 1
        if live == 0:
            break
    out_T[y0:y1] = T


@nb.njit(cache=True, parallel=True)
def _raster(height, width, band, centers, conics, colors, opacity, boxes, out_rgb, out_T, min_sigma):
    nbands = (height + band - 1) // band
    for i in nb.prange(nbands):
        y0 = i * band
        y1 = min(height, y0 + band)
        _raster_band(y0, y1, width, centers, conics, colors, opacity, boxes, out_rgb, out_T, min_sigma)


def _prepare(cloud: GaussianCloud, camera: Camera):
    """Project, cull and depth-sort; returns raster inputs in compositing order."""
    centers, cov2d, depth, visible = project_arrays(cloud.positions, cloud.covariances(), camera)
    op = cloud.opacities
    keep = visible & (op * 255.0 > 1.0)
    idx = np.flatnonzero(keep)
    idx = idx[np.argsort(depth[idx], kind="stable")]
    centers, cov2d, op, colors = centers[idx], cov2d[idx], op[idx], cloud.colors[idx]
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = np.sqrt(2.0 * np.log(op * 255.0) * lam_max)
    boxes = np.stack([
        np.ceil(centers[:, 0] - radius - 0.5), np.ceil(centers[:, 1] - radius - 0.5),
        np.floor(centers[:, 0] + radius - 0.5), np.floor(centers[:, 1] + radius - 0.5),
    ], axis=1)
    boxes[:, 0] = np.clip(boxes[:, 0], 0, camera.width)
    boxes[:, 2] = np.clip(boxes[:, 2], -1, camera.width - 1)
    boxes[:, 1] = np.clip(boxes[:, 1], 0, camera.height)
    boxes[:, 3] = np.clip(boxes[:, 3], -1, camera.height - 1)
    on_screen = (boxes[:, 0] <= boxes[:, 2]) & (boxes[:, 1] <= boxes[:, 3])
    sel = np.flatnonzero(on_screen)
    return (np.ascontiguousarray(centers[sel]), np.ascontiguousarray(conics[sel]),
            np.ascontiguousarray(colors[sel]), np.ascontiguousarray(op[sel]),
            np.ascontiguousarray(boxes[sel].astype(np.int64)))


def render_float(kernels: GaussianCloud | Frame, camera: Camera, *, band_height: int = BAND_HEIGHT):
    """Premultiplied colour ``(H, W, 3)`` and final transmittance ``(H, W)``."""
    cloud = kernels.kernels if isinstance(kernels, Frame) else kernels
    if camera.width <= 0 or camera.height <= 0:
        raise ValidationError("image size must be positive")
    rgb = np.zeros((camera.height, camera.width, 3))
    T = np.ones((camera.height, camera.width))
    if cloud.count:
        args = _prepare(cloud, camera)
        _raster(camera.height, camera.width, band_height, *args, rgb, T, SIGMA_MIN)
    return rgb, T


def to_rgba8(rgb: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Straight-alpha RGBA8 from premultiplied colour and transmittance."""
    alpha = np.clip(1.0 - T, 0.0, 1.0)
    straight = np.divide(rgb, alpha[..., None], out=np.zeros_like(rgb), where=alpha[..., None] > 0)
    out = np.concatenate([np.clip(straight, 0.0, 1.0), alpha[..., None]], axis=-1)
    return np.floor(out * 255.0 + 0.5).astype(np.uint8)


def render_frame(frame: GaussianCloud | Frame, camera: Camera, *, band_height: int = BAND_HEIGHT) -> np.ndarray:
    """Render to an ``(H, W, 4)`` uint8 straight-alpha RGBA image."""
    if camera.width <= 0 or camera.height <= 0:
        raise ValidationError("image size must be positive")
    return to_rgba8(*render_float(frame, camera, band_height=band_height))


def encode_png(image: np.ndarray) -> bytes:
    info = PngImagePlugin.PngInfo()
    info.add(b"sRGB", b"\x00")
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGBA").save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def camera_for_frame(camera: Camera, index: int, turntable_deg: float | None) -> Camera:
    if not turntable_deg:
        return camera
    return camera.orbit(turntable_deg * index)


def render_frames(frames: Sequence[Frame], camera: Camera, out_dir: str | Path,
                  turntable_deg: float | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, frame in enumerate(frames):
        cam = camera_for_frame(camera, k, turntable_deg)
        path = out_dir / f"frame_{frame.index:04d}.png"
        path.write_bytes(encode_png(render_frame(frame, cam)))
        paths.append(path)
    return paths


def render_sequence(directory: str | Path, camera: Camera | None = None, *, turntable_deg: float | None = None,
                    out_dir: str | Path | None = None, width: int = 512, height: int = 512,
                    fov_deg: float = 60.0) -> list[Path]:
    """Render every frame of an exported sequence to ``frame_%04d.png``.

    Without an explicit camera, one framing the first frame is used. PNGs go
    to ``out_dir`` (default: the sequence directory).
    """
    frames = import_sequence(directory)
    if camera is None:
        camera = default_camera(frames[0].kernels, width, height, fov_deg)
    return render_frames(frames, camera, out_dir or directory, turntable_deg)
