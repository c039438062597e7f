"""Physical-margin ROI cropping between grids of different resolution.

A coarse organ mask on a low-resolution grid yields a physical bounding box;
that box, widened by a millimetre margin on each side per axis, converts to
voxel indices on any target grid through physical coordinates alone, so the
two grids never need resampling. Detection maps computed on the crop paste
back into the full-size geometry for evaluation against full-size ground
truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volume import Geometry, Volume, physical_to_voxel, voxel_to_physical

DEFAULT_MARGIN_MM = (100.0, 50.0, 15.0)


@dataclass(frozen=True)
class MarginMm:
    """Margin in mm added on each side, per axis (x, y, z)."""

    x: float = DEFAULT_MARGIN_MM[0]
    y: float = DEFAULT_MARGIN_MM[1]
    z: float = DEFAULT_MARGIN_MM[2]

    def __post_init__(self):
        if any(m < 0 or not math.isfinite(m) for m in (self.x, self.y, self.z)):
            raise ValueError(f"margins must be finite and >= 0, got {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class CropBox:
    """Half-open voxel-index box [lo, hi) in a reference geometry."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    reference: Geometry

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        for a in range(3):
            if not (0 <= self.lo[a] < self.hi[a] <= self.reference.dims[a]):
                raise ValueError(
                    f"invalid box: lo={self.lo} hi={self.hi} within dims {self.reference.dims}"
                )

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.hi[a] - self.lo[a] for a in range(3))

    def to_json(self) -> dict:
        return {
            "lo": list(self.lo),
            "hi": list(self.hi),
            "reference": {
                "dims": list(self.reference.dims),
                "spacing": list(self.reference.spacing),
                "origin": list(self.reference.origin),
            },
        }

    @classmethod
    def from_json(cls, d: dict) -> "CropBox":
        ref = d["reference"]
        return cls(
            lo=tuple(d["lo"]),
            hi=tuple(d["hi"]),
            reference=Geometry(tuple(ref["dims"]), tuple(ref["spacing"]), tuple(ref["origin"])),
        )


def mask_bbox_physical(mask: Volume) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """Physical-space bounding box (min corner, max corner) of the centers
    of all foreground (> 0) voxels, in the mask's own geometry."""
    arr = mask.as_array()
    fg = np.nonzero(arr > 0)
    if fg[0].size == 0:
        raise ValueError("no foreground: mask has no voxel > 0")
    lo_idx = tuple(int(ax.min()) for ax in fg)
    hi_idx = tuple(int(ax.max()) for ax in fg)
    return voxel_to_physical(mask.geometry, lo_idx), voxel_to_physical(mask.geometry, hi_idx)


def compute_crop_box(
    phys_lo, phys_hi, target: Geometry, margin: MarginMm = MarginMm()
) -> CropBox:
    """Voxel box on the target grid covering [phys_lo, phys_hi] widened by
    the margin on each side per axis.

    Continuous voxel coordinates round outward (floor for lo, ceil + 1 for
    the exclusive hi) so the physical extent is never under-covered, then
    clamp to the target dims. Raises if the clamped box is empty.
    """
    if any(phys_lo[a] > phys_hi[a] for a in range(3)):
        raise ValueError(f"physical box corners out of order: {phys_lo} > {phys_hi}")
    m = margin.as_tuple()
    lo_mm = tuple(phys_lo[a] - m[a] for a in range(3))
    hi_mm = tuple(phys_hi[a] + m[a] for a in range(3))
    lo_cont = physical_to_voxel(target, lo_mm)
    hi_cont = physical_to_voxel(target, hi_mm)
    lo = tuple(max(0, math.floor(lo_cont[a])) for a in range(3))
    hi = tuple(min(target.dims[a], math.ceil(hi_cont[a]) + 1) for a in range(3))
    if any(lo[a] >= hi[a] for a in range(3)):
        raise ValueError("crop box is empty after clamping: box lies outside the target grid")
    return CropBox(lo=lo, hi=hi, reference=target)


def crop(v: Volume, box: CropBox) -> Volume:
    """Sub-volume over [lo, hi); spacing unchanged, origin moved to lo."""
    if not box.reference.compatible(v.geometry):
        raise ValueError("crop box reference geometry does not match the volume")
    lo, hi = box.lo, box.hi
    sub = v.as_array()[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    geometry = Geometry(
        dims=box.shape,
        spacing=v.geometry.spacing,
        origin=voxel_to_physical(v.geometry, lo),
    )
    return Volume.from_array(np.ascontiguousarray(sub), geometry)


def uncrop(det: Volume, box: CropBox) -> Volume:
    """Paste a cropped volume back into the full reference geometry,
    zero-filled outside the box."""
    if det.geometry.dims != box.shape:
        raise ValueError(
            f"dimension mismatch: volume dims {det.geometry.dims} vs box shape {box.shape}"
        )
    tol = 1e-6
    if any(abs(det.geometry.spacing[a] - box.reference.spacing[a]) > tol for a in range(3)):
        raise ValueError("spacing mismatch between cropped volume and box reference")
    full = np.zeros(box.reference.dims, dtype=det.data.dtype, order="F")
    lo, hi = box.lo, box.hi
    full[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = det.as_array()
    return Volume.from_array(full, box.reference)
