"""Geometry-aware 3D volumes and a bit-exact MetaImage (.mha) subset.

Volumes carry voxel data plus physical geometry (mm spacing and origin), so
boxes computed in millimetres can move between grids of different resolution
without resampling. The on-disk format is a strict, uncompressed MetaImage
subset with the payload stored LOCAL and little-endian; anything outside the
subset is rejected rather than reinterpreted.

Canonical header (fixed key order, floats printed with up to 9 significant
digits, lines terminated by "\\n"):

    ObjectType = Image
    NDims = 3
    BinaryData = True
    BinaryDataByteOrderMSB = False
    CompressedData = False
    TransformMatrix = 1 0 0 0 1 0 0 0 1
    Offset = ox oy oz
    ElementSpacing = sx sy sz
    DimSize = nx ny nz
    ElementType = MET_UCHAR|MET_SHORT|MET_USHORT|MET_FLOAT
    ElementDataFile = LOCAL

The raw payload follows immediately, in x-fastest voxel order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import atomic_write_bytes

# mm tolerance for geometry compatibility: below scanner precision, above
# float-32 noise.
GEOMETRY_TOL_MM = 1e-6

ELEMENT_DTYPES = {
    "MET_UCHAR": np.dtype("<u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_USHORT": np.dtype("<u2"),
    "MET_FLOAT": np.dtype("<f4"),
}

_HEADER_KEYS = (
    "ObjectType",
    "NDims",
    "BinaryData",
    "BinaryDataByteOrderMSB",
    "CompressedData",
    "TransformMatrix",
    "Offset",
    "ElementSpacing",
    "DimSize",
    "ElementType",
    "ElementDataFile",
)

_IDENTITY_MATRIX = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


class MetaImageError(Exception):
    """Raised for files outside the supported MetaImage subset."""


class ValidationError(ValueError):
    """Raised when volume data violates a contract (e.g. not a probability map)."""


@dataclass(frozen=True)
class Geometry:
    """Voxel grid geometry: dims (voxels), spacing (mm/voxel), origin (mm).

    Origin is the physical position of the center of voxel (0, 0, 0); axes
    are ordered (x, y, z).
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if len(self.dims) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("geometry fields must have 3 components")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if any(not math.isfinite(s) or s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be finite and > 0, got {self.spacing}")
        if any(not math.isfinite(o) for o in self.origin):
            raise ValueError(f"origin must be finite, got {self.origin}")

    @property
    def num_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def compatible(self, other: "Geometry", tol: float = GEOMETRY_TOL_MM) -> bool:
        """Same dims, spacing and origin componentwise within tol mm."""
        return (
            self.dims == other.dims
            and all(abs(a - b) <= tol for a, b in zip(self.spacing, other.spacing))
            and all(abs(a - b) <= tol for a, b in zip(self.origin, other.origin))
        )


def voxel_to_physical(g: Geometry, idx) -> tuple[float, float, float]:
    """Physical mm position of a voxel center; indices may be out of range."""
    return tuple(g.origin[a] + idx[a] * g.spacing[a] for a in range(3))


def physical_to_voxel(g: Geometry, p) -> tuple[float, float, float]:
    """Continuous voxel coordinates of a physical mm point (inverse affine)."""
    return tuple((p[a] - g.origin[a]) / g.spacing[a] for a in range(3))


class Volume:
    """A 3D scalar grid with geometry.

    Data is held as a flat buffer in x-fastest order (the MetaImage payload
    layout); `as_array()` exposes it as an (nx, ny, nz) view indexable as
    [x, y, z]. Buffers are marked read-only after construction, so volumes
    can be shared freely across threads.
    """

    __slots__ = ("geometry", "data")

    def __init__(self, geometry: Geometry, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 1:
            raise ValueError("data must be a flat 1-D buffer in x-fastest order")
        kind = _kind_for_dtype(data.dtype)
        if kind is None:
            raise ValueError(f"unsupported element dtype {data.dtype}")
        if data.size != geometry.num_voxels:
            raise ValueError(
                f"buffer length {data.size} does not match dims {geometry.dims}"
            )
        if data.base is not None or data.flags.writeable:
            data = data.copy()
        data.setflags(write=False)
        self.geometry = geometry
        self.data = data

    @classmethod
    def from_array(cls, arr: np.ndarray, geometry: Geometry) -> "Volume":
        """Build from an (nx, ny, nz) array indexed [x, y, z]."""
        if arr.shape != geometry.dims:
            raise ValueError(f"array shape {arr.shape} does not match dims {geometry.dims}")
        return cls(geometry, arr.reshape(-1, order="F"))

    @property
    def element_kind(self) -> str:
        return _kind_for_dtype(self.data.dtype)

    def as_array(self) -> np.ndarray:
        """(nx, ny, nz) view of the buffer, no copy."""
        return self.data.reshape(self.geometry.dims, order="F")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Volume)
            and self.geometry == other.geometry
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"Volume(dims={self.geometry.dims}, kind={self.element_kind})"


def _kind_for_dtype(dtype: np.dtype) -> str | None:
    dtype = np.dtype(dtype)
    for kind, dt in ELEMENT_DTYPES.items():
        if dtype == dt or dtype == dt.newbyteorder("="):
            return kind
    return None


def validate_probability_map(v: Volume, what: str = "volume") -> Volume:
    """Check a volume is a float-32 map with all values finite in [0, 1]."""
    if v.element_kind != "MET_FLOAT":
        raise ValidationError(f"{what} must be float-32, got {v.element_kind}")
    data = v.data
    if data.size and (not np.isfinite(data).all() or data.min() < 0.0 or data.max() > 1.0):
        raise ValidationError(f"{what} has values outside [0, 1]")
    return v


# ---------------------------------------------------------------------------
# MetaImage subset I/O
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return f"{x:.9g}"


def encode_mha(v: Volume) -> bytes:
    """Serialize to canonical header + raw little-endian payload."""
    g = v.geometry
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "TransformMatrix = 1 0 0 0 1 0 0 0 1",
        "Offset = " + " ".join(_fmt_float(o) for o in g.origin),
        "ElementSpacing = " + " ".join(_fmt_float(s) for s in g.spacing),
        "DimSize = " + " ".join(str(d) for d in g.dims),
        f"ElementType = {v.element_kind}",
        "ElementDataFile = LOCAL",
    ]
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.ascontiguousarray(v.data).astype(ELEMENT_DTYPES[v.element_kind], copy=False)
    return header + payload.tobytes()


def write_mha(v: Volume, path: str | Path) -> None:
    """Write a volume; the file appears atomically or not at all."""
    atomic_write_bytes(path, encode_mha(v))


def decode_mha(blob: bytes, name: str = "<bytes>") -> Volume:
    """Parse canonical-subset MetaImage bytes into a Volume."""
    fields: dict[str, str] = {}
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise MetaImageError(f"{name}: header ended without ElementDataFile")
        raw = blob[pos:nl]
        pos = nl + 1
        try:
            line = raw.decode("ascii")
        except UnicodeDecodeError:
            raise MetaImageError(f"{name}: malformed header line (non-ASCII)") from None
        if "=" not in line:
            raise MetaImageError(f"{name}: malformed header line {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise MetaImageError(f"{name}: malformed header line {line!r}")
        if key not in _HEADER_KEYS:
            raise MetaImageError(f"{name}: unsupported header key {key!r}")
        if key in fields:
            raise MetaImageError(f"{name}: duplicate header key {key!r}")
        fields[key] = value
        if key == "ElementDataFile":
            break

    def require(key: str) -> str:
        if key not in fields:
            raise MetaImageError(f"{name}: missing required key {key!r}")
        return fields[key]

    if require("ObjectType") != "Image":
        raise MetaImageError(f"{name}: unsupported ObjectType {fields['ObjectType']!r}")
    if require("NDims") != "3":
        raise MetaImageError(f"{name}: unsupported NDims {fields['NDims']!r} (only 3)")
    if require("BinaryData") != "True":
        raise MetaImageError(f"{name}: unsupported: non-binary data")
    if require("BinaryDataByteOrderMSB") != "False":
        raise MetaImageError(f"{name}: unsupported: big-endian data")
    if require("CompressedData") != "False":
        raise MetaImageError(f"{name}: unsupported: compressed data")
    if "TransformMatrix" in fields:
        try:
            mat = tuple(float(x) for x in fields["TransformMatrix"].split())
        except ValueError:
            raise MetaImageError(f"{name}: malformed TransformMatrix") from None
        if mat != _IDENTITY_MATRIX:
            raise MetaImageError(f"{name}: unsupported: non-identity TransformMatrix")
    if require("ElementDataFile") != "LOCAL":
        raise MetaImageError(
            f"{name}: unsupported ElementDataFile {fields['ElementDataFile']!r} (only LOCAL)"
        )

    kind = require("ElementType")
    if kind not in ELEMENT_DTYPES:
        raise MetaImageError(f"{name}: unknown ElementType {kind!r}")

    def parse_triplet(key: str, conv):
        parts = require(key).split()
        if len(parts) != 3:
            raise MetaImageError(f"{name}: {key} must have 3 components")
        try:
            return tuple(conv(p) for p in parts)
        except ValueError:
            raise MetaImageError(f"{name}: malformed {key} value") from None

    dims = parse_triplet("DimSize", int)
    spacing = parse_triplet("ElementSpacing", float)
    origin = parse_triplet("Offset", float)
    try:
        geometry = Geometry(dims, spacing, origin)
    except ValueError as e:
        raise MetaImageError(f"{name}: invalid geometry: {e}") from None

    dtype = ELEMENT_DTYPES[kind]
    expected = geometry.num_voxels * dtype.itemsize
    payload = blob[pos:]
    if len(payload) != expected:
        raise MetaImageError(
            f"{name}: payload length mismatch (expected {expected} bytes, got {len(payload)})"
        )
    data = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="), copy=True)
    return Volume(geometry, data)


def read_mha(path: str | Path) -> Volume:
    """Read a volume from the MetaImage subset; rejects non-conforming files."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_mha(blob, name=str(path))


def mean_volumes(vs: list[Volume]) -> Volume:
    """Voxelwise arithmetic mean of float-32 probability maps.

    All inputs must share a compatible geometry; the output inherits the
    first input's geometry. Accumulation runs in float64 before the final
    cast back to float32.
    """
    if not vs:
        raise ValueError("mean_volumes requires at least one input")
    for i, v in enumerate(vs):
        validate_probability_map(v, what=f"input {i}")
        if not vs[0].geometry.compatible(v.geometry):
            raise ValueError(f"input {i} geometry incompatible with input 0")
    acc = np.zeros(vs[0].data.size, dtype=np.float64)
    for v in vs:
        acc += v.data
    acc /= len(vs)
    return Volume(vs[0].geometry, acc.astype(np.float32))
