"""Iterative lesion-candidate extraction from a 3D probability map.

Candidates are peeled off one at a time: seed at the most confident voxel
remaining, grow the region through all connected voxels at or above a
threshold, then zero the region out of the working map so the next
iteration finds the next peak. The growth threshold is either a fixed value
or adaptive, scaled from the current seed's probability, which lets faint
but well-formed peaks expand as generously as strong ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Volume, validate_probability_map

CONNECTIVITY_RANKS = {6: 1, 18: 2, 26: 3}


@dataclass(frozen=True)
class ExtractionParams:
    """Extraction knobs. Exactly one of alpha (adaptive) or tau (fixed) is set.

    alpha scales the growth threshold from the seed probability
    (threshold = alpha * seed_prob); tau is an absolute threshold. Regions
    smaller than min_voxels are suppressed but not reported; extraction
    stops when the best remaining seed falls below min_seed_prob.
    """

    alpha: float | None = None
    tau: float | None = None
    max_candidates: int = 5
    min_seed_prob: float = 1e-6
    min_voxels: int = 10
    connectivity: int = 26
    confidence: str = "seed"

    def __post_init__(self):
        if (self.alpha is None) == (self.tau is None):
            raise ValueError("exactly one of alpha (adaptive) or tau (fixed) must be set")
        if self.alpha is not None and not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.tau is not None and not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if not (0.0 <= self.min_seed_prob <= 1.0) or not math.isfinite(self.min_seed_prob):
            raise ValueError("min_seed_prob must be in [0, 1]")
        if self.min_voxels < 0:
            raise ValueError("min_voxels must be >= 0")
        if self.connectivity not in CONNECTIVITY_RANKS:
            raise ValueError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")
        if self.confidence not in ("seed", "mean"):
            raise ValueError(f"confidence must be 'seed' or 'mean', got {self.confidence}")

    @property
    def mode(self) -> str:
        return "adaptive" if self.alpha is not None else "fixed"

    @property
    def iteration_cap(self) -> int:
        return max(32, 4 * self.max_candidates)

    def to_json(self) -> dict:
        d = {"threshold_mode": self.mode}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        else:
            d["tau"] = self.tau
        d.update(
            max_candidates=self.max_candidates,
            min_seed_prob=self.min_seed_prob,
            min_voxels=self.min_voxels,
            connectivity=self.connectivity,
            confidence=self.confidence,
        )
        return d


@dataclass
class Candidate:
    """One extracted region: seed voxel, its probability, member voxels
    (ascending x-fastest linear indices) and the scalar confidence."""

    rank: int
    seed_index: tuple[int, int, int]
    seed_prob: float
    voxels: np.ndarray
    confidence: float

    @property
    def num_voxels(self) -> int:
        return int(self.voxels.size)


@dataclass
class DetectionResult:
    """Candidates in extraction order plus the detection map they induce:
    each candidate's voxels hold its confidence, zero elsewhere."""

    candidates: list[Candidate]
    detection_map: Volume

    def to_json(self, case_id: str, params: ExtractionParams) -> dict:
        return {
            "case_id": case_id,
            "params": params.to_json(),
            "candidates": [
                {
                    "rank": c.rank,
                    "seed": list(c.seed_index),
                    "seed_prob": c.seed_prob,
                    "num_voxels": c.num_voxels,
                    "confidence": c.confidence,
                }
                for c in self.candidates
            ],
            "patient_score": patient_score(self),
        }


def connectivity_structure(connectivity: int) -> np.ndarray:
    """3x3x3 neighbourhood footprint for 6/18/26-connectivity."""
    return ndimage.generate_binary_structure(3, CONNECTIVITY_RANKS[connectivity])


def _unravel(idx: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    nx, ny, _ = dims
    return (idx % nx, (idx // nx) % ny, idx // (nx * ny))


def extract_candidates(p: Volume, params: ExtractionParams) -> DetectionResult:
    """Extract up to max_candidates regions from a probability map.

    Each iteration: (1) seed at the argmax of the working map, ties broken
    by smallest x-fastest linear index; (2) stop if the seed is not strictly
    positive or falls below min_seed_prob; (3) threshold = alpha * seed_prob
    (adaptive) or tau (fixed); (4) grow the region: the seed plus every voxel
    connected to it through voxels at or above the threshold (the seed alone
    if it is itself below a fixed threshold); (5) zero the region out of the
    working map; (6) report it if it has at least min_voxels voxels. An
    iteration cap of max(32, 4 * max_candidates) bounds worst-case work on
    degenerate maps. All arithmetic is float64.

    The result is a pure function of (p, params): independent of thread
    count and repeatable across runs.
    """
    validate_probability_map(p, what="probability map")
    dims = p.geometry.dims
    w = p.data.astype(np.float64)
    w3 = w.reshape(dims, order="F")
    structure = connectivity_structure(params.connectivity)

    candidates: list[Candidate] = []
    iterations = 0
    while len(candidates) < params.max_candidates and iterations < params.iteration_cap:
        seed_idx = int(np.argmax(w))
        seed_val = float(w[seed_idx])
        # A usable seed must be strictly positive: growing from a zero seed
        # would re-cover already-suppressed voxels and never shrink the map.
        if seed_val <= 0.0 or seed_val < params.min_seed_prob:
            break
        tau = params.alpha * seed_val if params.alpha is not None else params.tau

        if seed_val >= tau:
            labeled, _ = ndimage.label(w3 >= tau, structure=structure)
            labeled_flat = labeled.reshape(-1, order="F")
            region = np.flatnonzero(labeled_flat == labeled_flat[seed_idx])
        else:
            region = np.array([seed_idx], dtype=np.int64)

        if params.confidence == "mean":
            conf = float(w[region].mean())
        else:
            conf = seed_val
        w[region] = 0.0

        if region.size >= params.min_voxels:
            candidates.append(
                Candidate(
                    rank=len(candidates),
                    seed_index=_unravel(seed_idx, dims),
                    seed_prob=seed_val,
                    voxels=region.astype(np.int64),
                    confidence=conf,
                )
            )
        iterations += 1

    det = np.zeros(p.data.size, dtype=np.float32)
    for c in candidates:
        det[c.voxels] = np.float32(c.confidence)
    return DetectionResult(candidates=candidates, detection_map=Volume(p.geometry, det))


def patient_score(d: DetectionResult) -> float:
    """Patient-level score: the maximum of the detection map (0 if empty)."""
    if d.detection_map.data.size == 0 or not d.candidates:
        return 0.0
    return float(d.detection_map.data.max())
