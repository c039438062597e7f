"""Detection evaluation: patient-level AUROC, lesion-level AP, bootstrap CIs.

Ground-truth lesions are connected components of a binary mask. Candidates
match lesions greedily in descending confidence order under an
intersection-over-union threshold; each lesion can be claimed once. AUROC
follows the Mann-Whitney pair statistic (ties count half); AP integrates
the all-points precision-recall curve over candidates pooled across cases,
with recall measured against the total lesion count. Confidence intervals
come from seeded case-level percentile bootstrap, so both metrics resample
uniformly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scipy import ndimage

from .candidates import (
    Candidate,
    ExtractionParams,
    connectivity_structure,
    extract_candidates,
    patient_score,
)
from .rng import SplitMix64, derive_seed
from .util import read_json
from .volume import Volume, read_mha, validate_probability_map

DEFAULT_MIN_IOU = 0.10
GT_CONNECTIVITY = 26


@dataclass
class GtLesion:
    """One ground-truth lesion: a connected component of the mask, voxels as
    ascending x-fastest linear indices."""

    lesion_id: int
    voxels: np.ndarray


@dataclass
class CaseEval:
    """Per-case evaluation row. candidate_matches holds
    (candidate rank, confidence, matched lesion_id or None) in descending
    confidence order."""

    case_id: str
    label: str  # positive | negative
    patient_score: float
    candidate_matches: list[tuple[int, float, int | None]]
    num_gt_lesions: int

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError(f"label must be 'positive' or 'negative', got {self.label!r}")
        if self.label == "negative" and self.num_gt_lesions != 0:
            raise ValueError(f"negative case {self.case_id!r} has ground-truth lesions")
        hits = [m[2] for m in self.candidate_matches if m[2] is not None]
        if len(hits) != len(set(hits)):
            raise ValueError(f"case {self.case_id!r} matches a lesion twice")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"

    @property
    def num_matched(self) -> int:
        return sum(1 for m in self.candidate_matches if m[2] is not None)


@dataclass
class EvalReport:
    auroc: float
    ap: float
    auroc_ci: tuple[float, float]
    ap_ci: tuple[float, float]
    n_cases: int
    n_lesions: int
    per_case: list[CaseEval]


def label_components(mask: Volume, connectivity: int = GT_CONNECTIVITY) -> list[GtLesion]:
    """Connected components of the nonzero voxels, ids ordered by each
    component's smallest x-fastest linear index."""
    arr = mask.as_array() != 0
    labeled, num = ndimage.label(arr, structure=connectivity_structure(connectivity))
    if num == 0:
        return []
    flat = labeled.reshape(-1, order="F")
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=num + 1)
    offsets = np.cumsum(counts)
    groups = [order[offsets[lab - 1]:offsets[lab]] for lab in range(1, num + 1)]
    groups.sort(key=lambda g: g[0])
    return [GtLesion(lesion_id=i, voxels=g.astype(np.int64)) for i, g in enumerate(groups)]


def match_candidates(
    cands: list[Candidate],
    lesions: list[GtLesion],
    min_iou: float = DEFAULT_MIN_IOU,
) -> list[tuple[int, float, int | None]]:
    """Greedy one-to-one matching: candidates in descending confidence
    (ties by rank) each claim the unmatched lesion of greatest IoU if that
    IoU reaches min_iou; otherwise they count as false positives."""
    taken: set[int] = set()
    matches: list[tuple[int, float, int | None]] = []
    for c in sorted(cands, key=lambda c: (-c.confidence, c.rank)):
        best_iou, best_id = 0.0, None
        for lesion in lesions:
            if lesion.lesion_id in taken:
                continue
            inter = np.intersect1d(c.voxels, lesion.voxels, assume_unique=True).size
            if inter == 0:
                continue
            iou = inter / (c.voxels.size + lesion.voxels.size - inter)
            if iou > best_iou:
                best_iou, best_id = iou, lesion.lesion_id
        if best_id is not None and best_iou >= min_iou:
            taken.add(best_id)
            matches.append((c.rank, c.confidence, best_id))
        else:
            matches.append((c.rank, c.confidence, None))
    return matches


def auroc(scores_pos, scores_neg) -> float:
    """Mann-Whitney AUROC: fraction of (positive, negative) pairs ranked
    correctly, ties counting half. Equals trapezoidal ROC area."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("undefined AUROC: need at least one score in each class")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    at_or_below = np.searchsorted(neg_sorted, pos, side="right")
    wins_twice = 2 * int(below.sum()) + int((at_or_below - below).sum())
    return wins_twice / (2 * pos.size * neg.size)


def average_precision(pooled, total_gt_lesions: int) -> float:
    """All-points AP over pooled candidates from every case.

    pooled: iterable of (case_id, rank, confidence, matched: bool). The
    sweep orders by confidence descending with ties broken by case_id then
    rank; recall steps by 1/total_gt_lesions at each matched candidate.
    """
    if total_gt_lesions < 1:
        raise ValueError("undefined AP: total_gt_lesions must be >= 1")
    items = sorted(pooled, key=lambda t: (-t[2], t[0], t[1]))
    tp = 0
    ap = 0.0
    for n, (_, _, _, matched) in enumerate(items, start=1):
        if matched:
            tp += 1
            ap += tp / n
    return ap / total_gt_lesions


def auroc_from_cases(per_case: list[CaseEval]) -> float:
    pos = [ce.patient_score for ce in per_case if ce.is_positive]
    neg = [ce.patient_score for ce in per_case if not ce.is_positive]
    return auroc(pos, neg)


def ap_from_cases(per_case: list[CaseEval]) -> float:
    pooled = []
    for i, ce in enumerate(per_case):
        # a case drawn twice by the bootstrap must pool its candidates twice,
        # so the pool key carries the position as well as the case_id
        for rank, conf, lesion in ce.candidate_matches:
            pooled.append(((ce.case_id, i), rank, conf, lesion is not None))
    total = sum(ce.num_gt_lesions for ce in per_case)
    return average_precision(pooled, total)


_METRIC_FNS = {"auroc": auroc_from_cases, "ap": ap_from_cases}


def _nearest_rank(sorted_vals: list[float], fraction: float) -> float:
    idx = max(0, math.ceil(fraction * len(sorted_vals)) - 1)
    return sorted_vals[idx]


def bootstrap_ci(
    per_case: list[CaseEval],
    metric: str,
    n_resamples: int = 1000,
    seed: int = 42,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap interval from case-level resampling.

    Cases are resampled with replacement n_resamples times on a seeded
    stream; resamples on which the metric is undefined are redrawn up to 10
    times, then dropped. Returns nearest-rank percentiles at the two tails.
    """
    if metric not in _METRIC_FNS:
        raise ValueError(f"metric must be one of {sorted(_METRIC_FNS)}, got {metric!r}")
    if not per_case:
        raise ValueError("per_case must be nonempty")
    fn = _METRIC_FNS[metric]
    fn(per_case)  # metric must be defined on the original sample
    n = len(per_case)
    rng = SplitMix64(derive_seed(seed, 0))
    values = []
    dropped = 0
    for _ in range(n_resamples):
        for _attempt in range(10):
            idx = rng.index_block(n, n)
            resample = [per_case[i] for i in idx]
            try:
                values.append(fn(resample))
            except ValueError:
                continue
            break
        else:
            dropped += 1
    if not values:
        raise ValueError(f"all {n_resamples} bootstrap resamples had undefined {metric}")
    if dropped:
        warnings.warn(f"{dropped} bootstrap resamples dropped (undefined {metric})", stacklevel=2)
    values.sort()
    tail = (1.0 - level) / 2.0
    return (_nearest_rank(values, tail), _nearest_rank(values, 1.0 - tail))


# ---------------------------------------------------------------------------
# Manifest-driven evaluation
# ---------------------------------------------------------------------------

def candidates_from_detection(det: Volume, connectivity: int = GT_CONNECTIVITY) -> list[Candidate]:
    """Reconstruct candidates from a detection map: connected components of
    its nonzero support, confidence = the component's maximum value, ranked
    by descending confidence (ties by component order)."""
    comps = label_components(det, connectivity)
    vals = det.data.astype(np.float64)
    nx, ny, _ = det.geometry.dims
    scored = []
    for comp in comps:
        conf_pos = comp.voxels[int(np.argmax(vals[comp.voxels]))]
        scored.append((float(vals[conf_pos]), comp, int(conf_pos)))
    scored.sort(key=lambda t: (-t[0], t[1].lesion_id))
    out = []
    for rank, (conf, comp, seed_idx) in enumerate(scored):
        out.append(
            Candidate(
                rank=rank,
                seed_index=(seed_idx % nx, (seed_idx // nx) % ny, seed_idx // (nx * ny)),
                seed_prob=conf,
                voxels=comp.voxels,
                confidence=conf,
            )
        )
    return out


def _label_from_wire(raw: str, case_id: str) -> str:
    if raw == "PDAC":
        return "positive"
    if raw == "non-PDAC":
        return "negative"
    raise ValueError(f"case {case_id!r}: label must be PDAC or non-PDAC, got {raw!r}")


def load_manifest(path: str | Path) -> list[dict]:
    """Load and validate an evaluation manifest (JSON array of cases).

    Each entry: {"case_id": str, "label": "PDAC"|"non-PDAC",
    "detection": path.mha or "probability": path.mha, "gt": path.mha or null}.
    Relative paths resolve against the manifest's directory.
    """
    base = Path(path).parent
    entries = read_json(path)
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: manifest must be a nonempty JSON array")
    seen = set()
    out = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or "case_id" not in e or "label" not in e:
            raise ValueError(f"{path}: entry {i} needs case_id and label")
        cid = e["case_id"]
        if cid in seen:
            raise ValueError(f"{path}: duplicate case_id {cid!r}")
        seen.add(cid)
        _label_from_wire(e["label"], cid)
        has_det = bool(e.get("detection"))
        has_prob = bool(e.get("probability"))
        if has_det == has_prob:
            raise ValueError(f"{path}: case {cid!r} needs exactly one of detection/probability")
        entry = {"case_id": cid, "label": e["label"], "gt": None}
        key = "detection" if has_det else "probability"
        entry[key] = str(base / e[key])
        if e.get("gt"):
            entry["gt"] = str(base / e["gt"])
        out.append(entry)
    return out


def evaluate_entry(
    entry: dict,
    extraction_params: ExtractionParams | None = None,
    min_iou: float = DEFAULT_MIN_IOU,
) -> CaseEval:
    """Evaluate one manifest entry: load (or extract) the detection,
    label the ground truth and match candidates."""
    cid = entry["case_id"]
    label = _label_from_wire(entry["label"], cid)
    if entry.get("probability"):
        if extraction_params is None:
            raise ValueError(f"case {cid!r} provides a probability map but no extraction params")
        prob = read_mha(entry["probability"])
        result = extract_candidates(prob, extraction_params)
        cands = result.candidates
        score = patient_score(result)
        geometry = prob.geometry
    else:
        det = read_mha(entry["detection"])
        validate_probability_map(det, what=f"detection map for {cid!r}")
        cands = candidates_from_detection(det)
        score = float(det.data.max()) if det.data.size else 0.0
        geometry = det.geometry
    lesions: list[GtLesion] = []
    if entry.get("gt"):
        gt = read_mha(entry["gt"])
        if not gt.geometry.compatible(geometry):
            raise ValueError(f"case {cid!r}: geometry mismatch between detection and ground truth")
        lesions = label_components(gt, GT_CONNECTIVITY)
    matches = match_candidates(cands, lesions, min_iou)
    return CaseEval(
        case_id=cid,
        label=label,
        patient_score=score,
        candidate_matches=matches,
        num_gt_lesions=len(lesions),
    )


def evaluate_cases(
    per_case: list[CaseEval],
    n_resamples: int = 1000,
    seed: int = 42,
    level: float = 0.95,
) -> EvalReport:
    """Aggregate per-case rows into the final report with bootstrap CIs."""
    return EvalReport(
        auroc=auroc_from_cases(per_case),
        ap=ap_from_cases(per_case),
        auroc_ci=bootstrap_ci(per_case, "auroc", n_resamples, seed, level),
        ap_ci=bootstrap_ci(per_case, "ap", n_resamples, seed, level),
        n_cases=len(per_case),
        n_lesions=sum(ce.num_gt_lesions for ce in per_case),
        per_case=per_case,
    )


def evaluate_manifest(
    entries: list[dict],
    extraction_params: ExtractionParams | None = None,
    min_iou: float = DEFAULT_MIN_IOU,
    n_resamples: int = 1000,
    seed: int = 42,
    threads: int = 1,
) -> EvalReport:
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_case = list(
                pool.map(lambda e: evaluate_entry(e, extraction_params, min_iou), entries)
            )
    else:
        per_case = [evaluate_entry(e, extraction_params, min_iou) for e in entries]
    return evaluate_cases(per_case, n_resamples=n_resamples, seed=seed)


def report_to_json(report: EvalReport) -> dict:
    return {
        "auroc": report.auroc,
        "ap": report.ap,
        "auroc_ci": list(report.auroc_ci),
        "ap_ci": list(report.ap_ci),
        "n_cases": report.n_cases,
        "n_lesions": report.n_lesions,
        "per_case": [
            {
                "case_id": ce.case_id,
                "label": "PDAC" if ce.is_positive else "non-PDAC",
                "patient_score": ce.patient_score,
                "num_gt_lesions": ce.num_gt_lesions,
                "candidate_matches": [
                    {"rank": r, "confidence": c, "lesion_id": m}
                    for r, c, m in ce.candidate_matches
                ],
            }
            for ce in report.per_case
        ],
    }


def report_to_csv(report: EvalReport) -> str:
    lines = ["case_id,label,patient_score,num_gt_lesions,num_candidates,num_matched"]
    for ce in report.per_case:
        label = "PDAC" if ce.is_positive else "non-PDAC"
        lines.append(
            f"{ce.case_id},{label},{ce.patient_score!r},"
            f"{ce.num_gt_lesions},{len(ce.candidate_matches)},{ce.num_matched}"
        )
    return "\n".join(lines) + "\n"
