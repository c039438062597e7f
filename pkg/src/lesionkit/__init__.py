"""lesionkit: deterministic post-processing and evaluation for 3D lesion
detection on probability volumes."""

__version__ = "0.1.0"

from .candidates import (
    Candidate,
    DetectionResult,
    ExtractionParams,
    extract_candidates,
    patient_score,
)
from .metrics import (
    CaseEval,
    EvalReport,
    GtLesion,
    auroc,
    average_precision,
    bootstrap_ci,
    evaluate_cases,
    evaluate_manifest,
    label_components,
    match_candidates,
)
from .roi import CropBox, MarginMm, compute_crop_box, crop, mask_bbox_physical, uncrop
from .splits import (
    CaseRecord,
    FoldAssignment,
    quartile_bins,
    read_cases_csv,
    stratified_kfold,
    validate_split,
)
from .sweep import SweepConfig, SweepResult, emit_csv, emit_svg, run_sweep
from .volume import (
    Geometry,
    MetaImageError,
    ValidationError,
    Volume,
    mean_volumes,
    physical_to_voxel,
    read_mha,
    validate_probability_map,
    voxel_to_physical,
    write_mha,
)

__all__ = [
    "Candidate",
    "CaseEval",
    "CaseRecord",
    "CropBox",
    "DetectionResult",
    "EvalReport",
    "ExtractionParams",
    "FoldAssignment",
    "Geometry",
    "GtLesion",
    "MarginMm",
    "MetaImageError",
    "SweepConfig",
    "SweepResult",
    "ValidationError",
    "Volume",
    "auroc",
    "average_precision",
    "bootstrap_ci",
    "compute_crop_box",
    "crop",
    "emit_csv",
    "emit_svg",
    "evaluate_cases",
    "evaluate_manifest",
    "extract_candidates",
    "label_components",
    "mask_bbox_physical",
    "match_candidates",
    "mean_volumes",
    "patient_score",
    "physical_to_voxel",
    "quartile_bins",
    "read_cases_csv",
    "read_mha",
    "run_sweep",
    "stratified_kfold",
    "uncrop",
    "validate_probability_map",
    "validate_split",
    "voxel_to_physical",
    "write_mha",
]
