"""Grid-search harness over the adaptive threshold scale.

For each fold manifest and each setting (a list of 1/alpha values, plus an
optional fixed-threshold baseline), candidates are re-extracted from every
case's probability map and scored with AUROC and AP. Probability maps and
ground-truth components are loaded and labeled once per fold and reused
across settings. Results are written as CSV and, optionally, as an SVG
figure with one curve per fold per metric and the baseline drawn as crosses.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .candidates import ExtractionParams, extract_candidates, patient_score
from .metrics import (
    CaseEval,
    GtLesion,
    _label_from_wire,
    ap_from_cases,
    auroc_from_cases,
    label_components,
    load_manifest,
    match_candidates,
)
from .util import atomic_write_bytes, atomic_write_text, read_json
from .volume import read_mha

DEFAULT_INVERSE_ALPHAS = (2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0)
DEFAULT_FIXED_TAU = 0.4

# pinned so SVG output is byte-identical for identical input
_SVG_HASHSALT = "lesionkit-sweep"


@dataclass
class SweepConfig:
    folds: dict[int, str]  # fold index -> eval manifest path
    inverse_alphas: tuple[float, ...] = DEFAULT_INVERSE_ALPHAS
    include_fixed_tau: float | None = DEFAULT_FIXED_TAU
    min_iou: float = 0.10
    extraction: dict = field(default_factory=dict)  # shared ExtractionParams overrides

    def __post_init__(self):
        if not self.folds:
            raise ValueError("sweep config needs at least one fold manifest")
        if not self.inverse_alphas:
            raise ValueError("inverse_alphas must be nonempty")
        if len(set(self.inverse_alphas)) != len(self.inverse_alphas):
            raise ValueError("inverse_alphas contains duplicates")
        for ia in self.inverse_alphas:
            if not ia >= 1.0:
                raise ValueError(f"inverse alpha {ia} must be >= 1 so the scale stays in (0, 1]")

    def settings(self) -> list[tuple[str, float | None, ExtractionParams]]:
        """(descriptor, inverse_alpha or None, params) per setting, in config order."""
        out = []
        for ia in self.inverse_alphas:
            params = ExtractionParams(alpha=1.0 / ia, **self.extraction)
            out.append((f"alpha=1/{ia:.6g}", ia, params))
        if self.include_fixed_tau is not None:
            params = ExtractionParams(tau=self.include_fixed_tau, **self.extraction)
            out.append((f"tau={self.include_fixed_tau:.6g}", None, params))
        return out


@dataclass
class SweepRow:
    fold: int
    setting: str
    inverse_alpha: float | None
    auroc: float
    ap: float


@dataclass
class SweepResult:
    rows: list[SweepRow]


def load_sweep_config(path: str | Path) -> SweepConfig:
    d = read_json(path)
    if not isinstance(d, dict) or "folds" not in d:
        raise ValueError(f"{path}: sweep config must be a JSON object with a 'folds' map")
    base = Path(path).parent
    folds = {int(k): str(base / v) for k, v in d["folds"].items()}
    return SweepConfig(
        folds=folds,
        inverse_alphas=tuple(d.get("inverse_alphas", DEFAULT_INVERSE_ALPHAS)),
        include_fixed_tau=d.get("include_fixed_tau", DEFAULT_FIXED_TAU),
        min_iou=d.get("min_iou", 0.10),
        extraction=d.get("extraction", {}),
    )


def _load_fold(manifest_path: str) -> list[tuple[str, str, object, list[GtLesion]]]:
    """Per-case (case_id, label, probability map, gt lesions); components are
    labeled here once so every setting reuses them."""
    cases = []
    for entry in load_manifest(manifest_path):
        if not entry.get("probability"):
            raise ValueError(
                f"case {entry['case_id']!r} has only a detection map; "
                "the sweep re-extracts candidates and needs probability maps"
            )
        label = _label_from_wire(entry["label"], entry["case_id"])
        prob = read_mha(entry["probability"])
        lesions: list[GtLesion] = []
        if entry.get("gt"):
            gt = read_mha(entry["gt"])
            if not gt.geometry.compatible(prob.geometry):
                raise ValueError(
                    f"case {entry['case_id']!r}: geometry mismatch between "
                    "probability map and ground truth"
                )
            lesions = label_components(gt)
        cases.append((entry["case_id"], label, prob, lesions))
    return cases


def _eval_setting(cases, params: ExtractionParams, min_iou: float, threads: int) -> tuple[float, float]:
    def one(case) -> CaseEval:
        case_id, label, prob, lesions = case
        result = extract_candidates(prob, params)
        return CaseEval(
            case_id=case_id,
            label=label,
            patient_score=patient_score(result),
            candidate_matches=match_candidates(result.candidates, lesions, min_iou),
            num_gt_lesions=len(lesions),
        )

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_case = list(pool.map(one, cases))
    else:
        per_case = [one(c) for c in cases]
    return auroc_from_cases(per_case), ap_from_cases(per_case)


def run_sweep(cfg: SweepConfig, threads: int = 1) -> SweepResult:
    """Evaluate every (fold, setting) pair; rows come out sorted by fold,
    then by setting in config order."""
    settings = cfg.settings()
    rows = []
    for fold in sorted(cfg.folds):
        cases = _load_fold(cfg.folds[fold])
        for descriptor, inverse_alpha, params in settings:
            roc, ap = _eval_setting(cases, params, cfg.min_iou, threads)
            rows.append(SweepRow(fold, descriptor, inverse_alpha, roc, ap))
    return SweepResult(rows=rows)


def sweep_csv(result: SweepResult) -> str:
    """CSV rendering, 6 significant digits, decimal point fixed."""
    lines = ["fold,setting,inverse_alpha,auroc,ap"]
    for r in result.rows:
        ia = "" if r.inverse_alpha is None else f"{r.inverse_alpha:.6g}"
        lines.append(f"{r.fold},{r.setting},{ia},{r.auroc:.6g},{r.ap:.6g}")
    return "\n".join(lines) + "\n"


def emit_csv(result: SweepResult, path: str | Path) -> None:
    if not result.rows:
        raise ValueError("cannot emit an empty sweep result")
    atomic_write_text(path, sweep_csv(result))


def sweep_figure(result: SweepResult):
    """Figure with AUROC and AP panels vs 1/alpha: one polyline per fold per
    metric, the fixed-threshold baseline as dotted crosses."""
    folds = sorted({r.fold for r in result.rows})
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for ax, metric, title in ((axes[0], "auroc", "AUROC"), (axes[1], "ap", "AP")):
        for i, fold in enumerate(folds):
            color = f"C{i % 10}"
            adaptive = sorted(
                (r.inverse_alpha, getattr(r, metric))
                for r in result.rows
                if r.fold == fold and r.inverse_alpha is not None
            )
            if adaptive:
                ax.plot(
                    [x for x, _ in adaptive],
                    [y for _, y in adaptive],
                    marker="o",
                    markersize=3,
                    color=color,
                    label=f"fold {fold}",
                )
            baseline = [
                getattr(r, metric)
                for r in result.rows
                if r.fold == fold and r.inverse_alpha is None
            ]
            if baseline and adaptive:
                xs = [x for x, _ in adaptive]
                ax.plot(
                    xs,
                    [baseline[0]] * len(xs),
                    linestyle=":",
                    marker="x",
                    markersize=4,
                    color=color,
                    linewidth=0.8,
                )
        ax.set_xlabel("1/alpha")
        ax.set_ylabel(title)
        ax.set_title(f"{title} vs adaptive threshold scale")
    axes[0].legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def emit_svg(result: SweepResult, path: str | Path) -> None:
    """Render the sweep curves to an SVG with deterministic bytes."""
    if not result.rows:
        raise ValueError("cannot emit an empty sweep result")
    with plt.rc_context({"svg.hashsalt": _SVG_HASHSALT, "svg.fonttype": "none"}):
        fig = sweep_figure(result)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
