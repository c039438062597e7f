"""Deterministic stratified K-fold splitting.

Positive cases are binned by lesion-size quartiles so every fold sees the
full size distribution, and the positive-to-negative ratio is preserved per
fold up to integer rounding. Assignment is a pure function of the case set
(sorted by case_id), the fold count and the seed: input order never matters,
and the same seed reproduces the same split anywhere.

Mechanics: positives are shuffled within each quartile bin (SplitMix64
stream per bin, see rng.py) and dealt round-robin over folds with a single
running counter across bins, which guarantees both per-bin and total
positive counts differ by at most one between folds. Negatives are shuffled
on their own stream (stream index 4, following the four bins) and dealt
round-robin starting at fold 4 mod K.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

from .rng import SplitMix64, derive_seed

QUARTILE_FRACTIONS = (0.25, 0.50, 0.75)
NUM_BINS = 4
_NEG_STREAM = NUM_BINS  # negatives shuffle on the stream after the four bins

CSV_COLUMNS = ("case_id", "label", "lesion_size_mm", "age", "sex")


@dataclass(frozen=True)
class CaseRecord:
    """Per-case metadata. label is 'positive' or 'negative'; lesion_size
    (mm) is required for positives."""

    case_id: str
    label: str
    lesion_size: float | None = None
    age: float | None = None
    sex: str | None = None

    def __post_init__(self):
        if self.label not in ("positive", "negative"):
            raise ValueError(f"label must be 'positive' or 'negative', got {self.label!r}")
        if self.label == "positive":
            if self.lesion_size is None or not (self.lesion_size > 0):
                raise ValueError(f"positive case {self.case_id!r} needs lesion_size > 0")
        if self.sex is not None and self.sex not in ("M", "F"):
            raise ValueError(f"sex must be 'M' or 'F', got {self.sex!r}")

    @property
    def is_positive(self) -> bool:
        return self.label == "positive"


@dataclass(frozen=True)
class FoldAssignment:
    num_folds: int
    seed: int
    assignment: dict  # case_id -> fold index

    def __post_init__(self):
        if self.num_folds < 2:
            raise ValueError("num_folds must be >= 2")
        for cid, f in self.assignment.items():
            if not (0 <= f < self.num_folds):
                raise ValueError(f"fold index {f} for {cid!r} out of range")

    def folds(self) -> dict:
        """fold index -> sorted case_ids."""
        out: dict[int, list[str]] = {f: [] for f in range(self.num_folds)}
        for cid in sorted(self.assignment):
            out[self.assignment[cid]].append(cid)
        return out


def nearest_rank(sorted_values: list[float], fraction: float) -> float:
    """Percentile by the nearest-rank rule: value at index
    ceil(fraction * n) - 1 of the ascending sort."""
    n = len(sorted_values)
    idx = max(0, math.ceil(fraction * n) - 1)
    return sorted_values[idx]


def quartile_bins(sizes: list[float]) -> tuple[tuple[float, float, float], list[int]]:
    """Quartile thresholds (q25, q50, q75) plus each input's bin index.

    Bins close on the right: bin 0 is [min, q25], bin 1 (q25, q50],
    bin 2 (q50, q75], bin 3 (q75, max]; ties at a boundary go low.
    """
    if not sizes:
        raise ValueError("quartile_bins needs at least one size")
    if any(s <= 0 for s in sizes):
        raise ValueError("all sizes must be > 0")
    ordered = sorted(sizes)
    q25, q50, q75 = (nearest_rank(ordered, f) for f in QUARTILE_FRACTIONS)
    bins = []
    for s in sizes:
        if s <= q25:
            bins.append(0)
        elif s <= q50:
            bins.append(1)
        elif s <= q75:
            bins.append(2)
        else:
            bins.append(3)
    return (q25, q50, q75), bins


def stratified_kfold(cases: list[CaseRecord], k: int, seed: int) -> FoldAssignment:
    """Assign every case to one of k folds, stratifying positives by
    lesion-size quartile and preserving the class ratio per fold."""
    if k < 2:
        raise ValueError("k must be >= 2")
    ordered = sorted(cases, key=lambda c: c.case_id)
    ids = [c.case_id for c in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("case_ids must be unique")

    positives = [c for c in ordered if c.is_positive]
    negatives = [c for c in ordered if not c.is_positive]
    if 0 < len(positives) < k or 0 < len(negatives) < k:
        warnings.warn(
            f"fewer than k={k} cases in one class "
            f"({len(positives)} positive, {len(negatives)} negative); "
            "some folds will miss that class",
            stacklevel=2,
        )

    assignment: dict[str, int] = {}
    if positives:
        _, bin_idx = quartile_bins([c.lesion_size for c in positives])
        counter = 0
        for b in range(NUM_BINS):
            members = [c.case_id for c, bi in zip(positives, bin_idx) if bi == b]
            SplitMix64(derive_seed(seed, b)).shuffle(members)
            for cid in members:
                assignment[cid] = counter % k
                counter += 1

    neg_ids = [c.case_id for c in negatives]
    SplitMix64(derive_seed(seed, _NEG_STREAM)).shuffle(neg_ids)
    start = NUM_BINS % k
    for i, cid in enumerate(neg_ids):
        assignment[cid] = (start + i) % k

    return FoldAssignment(num_folds=k, seed=seed, assignment=assignment)


def validate_split(cases: list[CaseRecord], fa: FoldAssignment) -> dict:
    """Per-fold composition report with balance violations flagged.

    A violation is any quartile bin whose per-fold counts spread by more
    than 1, or positive (or negative) fold totals spreading by more than 1.
    """
    by_id = {c.case_id: c for c in cases}
    unknown = sorted(set(fa.assignment) - set(by_id))
    if unknown:
        raise ValueError(f"assignment references unknown case_ids: {unknown[:5]}")
    missing = sorted(set(by_id) - set(fa.assignment))
    if missing:
        raise ValueError(f"cases missing from assignment: {missing[:5]}")

    positives = [c for c in cases if c.is_positive]
    bin_of: dict[str, int] = {}
    if positives:
        _, bin_idx = quartile_bins([c.lesion_size for c in positives])
        bin_of = {c.case_id: b for c, b in zip(positives, bin_idx)}

    k = fa.num_folds
    per_fold = {}
    pos_tot = [0] * k
    neg_tot = [0] * k
    bin_counts = [[0] * NUM_BINS for _ in range(k)]
    for f in range(k):
        members = [by_id[cid] for cid, ff in fa.assignment.items() if ff == f]
        n_pos = sum(1 for c in members if c.is_positive)
        n_neg = len(members) - n_pos
        pos_tot[f], neg_tot[f] = n_pos, n_neg
        for c in members:
            if c.is_positive:
                bin_counts[f][bin_of[c.case_id]] += 1
        ages = [c.age for c in members if c.age is not None]
        sexes = [c.sex for c in members if c.sex is not None]
        per_fold[str(f)] = {
            "n_cases": len(members),
            "n_positive": n_pos,
            "n_negative": n_neg,
            "positive_ratio": (n_pos / len(members)) if members else 0.0,
            "bin_counts": bin_counts[f],
            "mean_age": (sum(ages) / len(ages)) if ages else None,
            "sex_counts": {"M": sexes.count("M"), "F": sexes.count("F")},
        }

    violations = []
    for b in range(NUM_BINS):
        counts = [bin_counts[f][b] for f in range(k)]
        if max(counts) - min(counts) > 1:
            violations.append(f"bin {b} fold counts spread by more than 1: {counts}")
    if pos_tot and max(pos_tot) - min(pos_tot) > 1:
        violations.append(f"positive fold totals spread by more than 1: {pos_tot}")
    if neg_tot and max(neg_tot) - min(neg_tot) > 1:
        violations.append(f"negative fold totals spread by more than 1: {neg_tot}")

    return {"num_folds": k, "per_fold": per_fold, "violations": violations}


def read_cases_csv(path: str | Path) -> list[CaseRecord]:
    """Load case records; header must carry case_id,label,lesion_size_mm,age,sex
    with label PDAC or non-PDAC. Empty lesion_size is allowed only for non-PDAC."""
    cases = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_COLUMNS).issubset(reader.fieldnames):
            raise ValueError(f"cases CSV must have columns {','.join(CSV_COLUMNS)}")
        for row_num, row in enumerate(reader, start=2):
            label_raw = (row["label"] or "").strip()
            if label_raw == "PDAC":
                label = "positive"
            elif label_raw == "non-PDAC":
                label = "negative"
            else:
                raise ValueError(f"row {row_num}: label must be PDAC or non-PDAC, got {label_raw!r}")
            size_raw = (row["lesion_size_mm"] or "").strip()
            age_raw = (row["age"] or "").strip()
            sex_raw = (row["sex"] or "").strip()
            try:
                cases.append(
                    CaseRecord(
                        case_id=(row["case_id"] or "").strip(),
                        label=label,
                        lesion_size=float(size_raw) if size_raw else None,
                        age=float(age_raw) if age_raw else None,
                        sex=sex_raw if sex_raw else None,
                    )
                )
            except ValueError as e:
                raise ValueError(f"row {row_num}: {e}") from None
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case_ids in CSV")
    return cases


def split_to_json(cases: list[CaseRecord], fa: FoldAssignment) -> dict:
    folds = {str(f): ids for f, ids in fa.folds().items()}
    return {
        "num_folds": fa.num_folds,
        "seed": fa.seed,
        "folds": folds,
        "report": validate_split(cases, fa),
    }
