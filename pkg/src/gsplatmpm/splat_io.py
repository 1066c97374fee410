"""Reading and writing 3D Gaussian Splatting clouds in binary PLY form.

Files follow the layout used by the public 3DGS tooling: one ``vertex``
element whose float32 properties hold the position, degree-0 SH colour,
opacity logit, log scales and an unnormalized ``(w, x, y, z)`` quaternion.
In memory the parameters are kept *activated* (sigmoid opacity, exp scales,
RGB colour, unit quaternion) in float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import PlyError, PlyHeaderError, PlyLengthError, PlySchemaError, ValidationError
from .rotations import quaternion_to_matrix

log = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814
OPACITY_EPS = 1e-6
# stored quaternions already unit to float32 precision are kept verbatim so
# that parse -> write is byte-exact
_UNIT_TOL = 1e-6

REQUIRED_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

_VERTEX_DTYPE = np.dtype([(name, "<f4") for name in REQUIRED_PROPERTIES])


@dataclass(frozen=True)
class RawGaussianRecord:
    """One vertex exactly as stored on disk."""

    position: np.ndarray
    f_dc: np.ndarray
    opacity_logit: float
    log_scales: np.ndarray
    rotation_q: np.ndarray


@dataclass(frozen=True)
class GaussianKernel:
    """A single activated Gaussian. Also used for deformed (per-frame) kernels."""

    position: np.ndarray
    rotation: np.ndarray
    scales: np.ndarray
    opacity: float
    color: np.ndarray

    def covariance(self) -> np.ndarray:
        R = quaternion_to_matrix(self.rotation)
        return (R * self.scales**2) @ R.T


DeformedKernel = GaussianKernel


class GaussianCloud:
    """An ordered, array-backed collection of activated Gaussian kernels.

    Kernel ``i`` is row ``i`` of every array. Construction validates the
    kernel invariants; arrays are stored as float64 copies.
    """

    def __init__(self, positions, rotations, scales, opacities, colors):
        self.positions = np.array(positions, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.array(rotations, dtype=np.float64).reshape(-1, 4)
        self.scales = np.array(scales, dtype=np.float64).reshape(-1, 3)
        self.opacities = np.array(opacities, dtype=np.float64).reshape(-1)
        self.colors = np.array(colors, dtype=np.float64).reshape(-1, 3)
        self._validate()

    def _validate(self) -> None:
        n = len(self.positions)
        for name in ("rotations", "scales", "opacities", "colors"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        for name in ("positions", "rotations", "scales", "opacities", "colors"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} contains non-finite values")
        if np.any(self.scales <= 0.0):
            raise ValidationError("scales must be strictly positive")
        if np.any((self.opacities < 0.0) | (self.opacities > 1.0)):
            raise ValidationError("opacities must lie in [0, 1]")
        if np.any((self.colors < 0.0) | (self.colors > 1.0)):
            raise ValidationError("colors must lie in [0, 1]")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise ValidationError("rotations must be unit quaternions (tolerance 1e-6)")

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    @property
    def count(self) -> int:
        return len(self.positions)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> GaussianKernel:
        return GaussianKernel(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            scales=self.scales[i].copy(),
            opacity=float(self.opacities[i]),
            color=self.colors[i].copy(),
        )

    def __iter__(self) -> Iterator[GaussianKernel]:
        for i in range(self.count):
            yield self[i]

    @property
    def kernels(self) -> list[GaussianKernel]:
        return list(self)

    def covariances(self) -> np.ndarray:
        """World-space covariances ``R diag(s^2) R^T``, shape (P, 3, 3)."""
        R = quaternion_to_matrix(self.rotations) if self.count else np.zeros((0, 3, 3))
        return np.einsum("pij,pj,pkj->pik", R, self.scales**2, R)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions, self.rotations, self.scales, self.opacities, self.colors)

    def __repr__(self) -> str:
        return f"GaussianCloud(count={self.count})"


# ---------------------------------------------------------------------------
# activation


def _activate(position, f_dc, opacity_logit, log_scales, rotation_q):
    """Vectorized raw -> activated conversion. Inputs are (P, k) float arrays."""
    for name, arr in (("opacity", opacity_logit), ("scale", log_scales), ("position", position),
                      ("f_dc", f_dc), ("rot", rotation_q)):
        if len(arr) == 0:
            continue
        bad = ~np.all(np.isfinite(np.reshape(arr, (len(arr), -1))), axis=1)
        if np.any(bad):
            raise PlyError(f"non-finite {name} value in record {int(np.flatnonzero(bad)[0])}")
    norms = np.linalg.norm(rotation_q, axis=1)
    if np.any(norms == 0.0):
        raise PlyError(f"zero-norm quaternion in record {int(np.flatnonzero(norms == 0.0)[0])}")
    keep = np.abs(norms - 1.0) <= _UNIT_TOL
    rotation = np.where(keep[:, None], rotation_q, rotation_q / norms[:, None])
    opacity = 1.0 / (1.0 + np.exp(-opacity_logit))
    scales = np.exp(log_scales)
    color = np.clip(0.5 + SH_C0 * f_dc, 0.0, 1.0)
    return position, rotation, scales, opacity, color


def activate_record(raw: RawGaussianRecord) -> GaussianKernel:
    """Activate one stored record: sigmoid opacity, exp scales, SH-DC colour."""
    pos, rot, sc, op, col = _activate(
        np.asarray(raw.position, dtype=np.float64).reshape(1, 3),
        np.asarray(raw.f_dc, dtype=np.float64).reshape(1, 3),
        np.asarray([raw.opacity_logit], dtype=np.float64),
        np.asarray(raw.log_scales, dtype=np.float64).reshape(1, 3),
        np.asarray(raw.rotation_q, dtype=np.float64).reshape(1, 4),
    )
    return GaussianKernel(position=pos[0], rotation=rot[0], scales=sc[0], opacity=float(op[0]), color=col[0])


# ---------------------------------------------------------------------------
# parsing


@dataclass
class _Element:
    name: str
    count: int
    properties: list[tuple[str, str]]  # (name, numpy dtype); dtype "list" for list properties


def _parse_header(data: bytes) -> tuple[list[_Element], int]:
    end = data.find(b"end_header")
    if end < 0:
        raise PlyHeaderError(1, data[:16].decode("latin-1").split("\n")[0], "no end_header found")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyHeaderError(data[:end].count(b"\n") + 1, "end_header", "header not newline-terminated")
    header = data[:nl].decode("ascii", errors="replace").replace("\r", "")
    lines = header.split("\n")

    if lines[0].strip() != "ply":
        raise PlyHeaderError(1, lines[0], "file does not start with 'ply'")
    elements: list[_Element] = []
    have_format = False
    for no, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            raise PlyHeaderError(no, line, "empty header line")
        key = tokens[0]
        if key in ("comment", "obj_info"):
            continue
        if key == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise PlyHeaderError(no, line, "only 'format binary_little_endian 1.0' is supported")
            have_format = True
        elif key == "element":
            if len(tokens) != 3:
                raise PlyHeaderError(no, line, "expected 'element <name> <count>'")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyHeaderError(no, line, "element count is not an integer") from None
            if count < 0:
                raise PlyHeaderError(no, line, "negative element count")
            elements.append(_Element(tokens[1], count, []))
        elif key == "property":
            if not elements:
                raise PlyHeaderError(no, line, "property declared before any element")
            if len(tokens) >= 2 and tokens[1] == "list":
                if len(tokens) != 5:
                    raise PlyHeaderError(no, line, "expected 'property list <count type> <type> <name>'")
                elements[-1].properties.append((tokens[4], "list"))
                continue
            if len(tokens) != 3:
                raise PlyHeaderError(no, line, "expected 'property <type> <name>'")
            if tokens[1] not in _PLY_SCALARS:
                raise PlyHeaderError(no, line, f"unknown property type {tokens[1]!r}")
            names = [p[0] for p in elements[-1].properties]
            if tokens[2] in names:
                raise PlyHeaderError(no, line, f"duplicate property {tokens[2]!r}")
            elements[-1].properties.append((tokens[2], _PLY_SCALARS[tokens[1]]))
        elif key == "end_header":
            if no != len(lines):
                raise PlyHeaderError(no, line, "unexpected content after end_header")
        else:
            raise PlyHeaderError(no, line, f"unknown header keyword {key!r}")
    if not have_format:
        raise PlyHeaderError(2, lines[1] if len(lines) > 1 else "", "missing format line")
    return elements, nl + 1


def _element_dtype(element: _Element) -> np.dtype:
    if any(kind == "list" for _, kind in element.properties):
        raise PlyError(f"list properties are not supported in element {element.name!r}")
    return np.dtype([(name, kind) for name, kind in element.properties])


def _read_vertices(data: bytes) -> np.ndarray:
    elements, offset = _parse_header(data)
    vertex = None
    for element in elements:
        if element.name == "vertex":
            vertex = element
            break
        offset += element.count * _element_dtype(element).itemsize
    if vertex is None:
        raise PlySchemaError(list(REQUIRED_PROPERTIES), "PLY has no 'vertex' element")

    declared = dict(vertex.properties)
    missing = [name for name in REQUIRED_PROPERTIES if name not in declared]
    if missing:
        raise PlySchemaError(missing)
    wrong = [name for name in REQUIRED_PROPERTIES if declared[name] != "<f4"]
    if wrong:
        raise PlySchemaError(wrong, "required properties must be float32: " + ", ".join(wrong))

    dtype = _element_dtype(vertex)
    need = vertex.count * dtype.itemsize
    have = len(data) - offset
    if have < need:
        raise PlyLengthError(
            f"vertex data truncated: header declares {vertex.count} records "
            f"({need} bytes) but only {have} bytes follow the header"
        )
    return np.frombuffer(data, dtype=dtype, count=vertex.count, offset=offset)


def _columns(records: np.ndarray, names) -> np.ndarray:
    return np.stack([records[n].astype(np.float64) for n in names], axis=1) if len(records) else np.zeros((0, len(names)))


def parse_gaussian_ply(data: bytes) -> GaussianCloud:
    """Parse a binary little-endian 3DGS PLY into an activated cloud.

    Extra vertex properties (normals, ``f_rest_*``, ...) are skipped.

    Raises
    ------
    PlyHeaderError
        Malformed header; the message names the offending line.
    PlyLengthError
        Fewer vertex bytes than the header declares.
    PlySchemaError
        Required properties absent or not float32.
    PlyError
        Non-finite values in some record.

    An all-zero stored quaternion (as left by zero-initialized exporters)
    is read as the identity rotation, with a warning; :func:`activate_record`
    still rejects it.
    """
    records = _read_vertices(bytes(data))
    quats = _columns(records, ("rot_0", "rot_1", "rot_2", "rot_3"))
    zero = np.all(quats == 0.0, axis=1)
    if np.any(zero):
        log.warning("%d record(s) with a zero quaternion read as identity", int(zero.sum()))
        quats[zero, 0] = 1.0
    pos, rot, sc, op, col = _activate(
        _columns(records, ("x", "y", "z")),
        _columns(records, ("f_dc_0", "f_dc_1", "f_dc_2")),
        records["opacity"].astype(np.float64),
        _columns(records, ("scale_0", "scale_1", "scale_2")),
        quats,
    )
    return GaussianCloud(pos, rot, sc, op, col)


def read_raw_records(data: bytes) -> list[RawGaussianRecord]:
    """Stored (non-activated) records, mostly useful for inspection and tests."""
    records = _read_vertices(bytes(data))
    out = []
    for r in records:
        out.append(RawGaussianRecord(
            position=np.array([r["x"], r["y"], r["z"]], dtype=np.float64),
            f_dc=np.array([r["f_dc_0"], r["f_dc_1"], r["f_dc_2"]], dtype=np.float64),
            opacity_logit=float(r["opacity"]),
            log_scales=np.array([r["scale_0"], r["scale_1"], r["scale_2"]], dtype=np.float64),
            rotation_q=np.array([r["rot_0"], r["rot_1"], r["rot_2"], r["rot_3"]], dtype=np.float64),
        ))
    return out


# ---------------------------------------------------------------------------
# writing


def ply_header(count: int) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    lines += [f"property float {name}" for name in REQUIRED_PROPERTIES]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_gaussian_ply(cloud: GaussianCloud) -> bytes:
    """Serialize a cloud with inverse activations in canonical property order.

    Opacities of exactly 0 or 1 are clamped to ``[1e-6, 1 - 1e-6]`` before the
    logit. Non-finite values are refused with :class:`ValueError`.
    """
    arrays = (cloud.positions, cloud.rotations, cloud.scales, cloud.opacities, cloud.colors)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValidationError("refusing to write a cloud with non-finite values")
    alpha = np.clip(cloud.opacities, OPACITY_EPS, 1.0 - OPACITY_EPS)
    logit = np.log(alpha) - np.log1p(-alpha)
    log_scales = np.log(cloud.scales)
    f_dc = (cloud.colors - 0.5) / SH_C0

    out = np.empty(cloud.count, dtype=_VERTEX_DTYPE)
    for k, name in enumerate(("x", "y", "z")):
        out[name] = cloud.positions[:, k]
    for k in range(3):
        out[f"f_dc_{k}"] = f_dc[:, k]
        out[f"scale_{k}"] = log_scales[:, k]
    out["opacity"] = logit
    for k in range(4):
        out[f"rot_{k}"] = cloud.rotations[:, k]
    return ply_header(cloud.count) + out.tobytes()


def to_storage_precision(cloud: GaussianCloud, max_passes: int = 4) -> GaussianCloud:
    """The cloud exactly as a PLY write/read would return it.

    The float32 round-trip is repeated until it reaches a fixed point, so
    that writing and re-reading the result gives back identical values.
    """
    data = write_gaussian_ply(cloud)
    for _ in range(max_passes):
        out = parse_gaussian_ply(data)
        again = write_gaussian_ply(out)
        if again == data:
            return out
        data = again
    return parse_gaussian_ply(data)


def load_ply(path: str | Path) -> GaussianCloud:
    return parse_gaussian_ply(Path(path).read_bytes())


def save_ply(cloud: GaussianCloud, path: str | Path) -> None:
    Path(path).write_bytes(write_gaussian_ply(cloud))
