"""Command-line interface: one subcommand per pipeline stage.

extract, score, ensemble, crop, uncrop, split, eval and sweep map 1:1 onto
the library operations, so a full pipeline is a shell script of stages and
each stage stays independently testable. Every subcommand validates its
flags before writing anything, writes outputs atomically, and is
reproducible: the same inputs, flags and seeds give identical bytes
regardless of --threads.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .candidates import ExtractionParams, extract_candidates, patient_score
from .metrics import (
    evaluate_manifest,
    load_manifest,
    report_to_csv,
    report_to_json,
)
from .roi import CropBox, MarginMm, compute_crop_box, crop, mask_bbox_physical, uncrop
from .splits import read_cases_csv, split_to_json, stratified_kfold
from .sweep import emit_csv, emit_svg, load_sweep_config, run_sweep
from .util import atomic_write_text, read_json, write_json
from .volume import MetaImageError, mean_volumes, read_mha, validate_probability_map, write_mha

# the committed operating point for adaptive extraction
DEFAULT_ALPHA = 1.0 / 15.0


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_extraction_flags(p: argparse.ArgumentParser, require_threshold: bool) -> None:
    group = p.add_mutually_exclusive_group(required=require_threshold)
    group.add_argument("--alpha", type=float, help="adaptive threshold scale in (0, 1]")
    group.add_argument("--tau", type=float, help="fixed growth threshold in (0, 1]")
    p.add_argument("--max-candidates", type=int, default=5)
    p.add_argument("--min-voxels", type=int, default=10)
    p.add_argument("--min-seed-prob", type=float, default=1e-6)
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26), default=26)
    p.add_argument("--confidence", choices=("seed", "mean"), default="seed")


def _extraction_params(args, default_alpha: float | None = None) -> ExtractionParams:
    alpha, tau = args.alpha, args.tau
    if alpha is None and tau is None:
        alpha = default_alpha
    try:
        return ExtractionParams(
            alpha=alpha,
            tau=tau,
            max_candidates=args.max_candidates,
            min_voxels=args.min_voxels,
            min_seed_prob=args.min_seed_prob,
            connectivity=args.connectivity,
            confidence=args.confidence,
        )
    except ValueError as e:
        raise _UsageError(str(e)) from None


def _info(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def build_parser() -> _Parser:
    parser = _Parser(prog="lesionkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lesionkit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for batch subcommands")
    common.add_argument("--quiet", action="store_true", help="suppress progress diagnostics")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common],
                       help="extract lesion candidates from a probability map")
    p.add_argument("--prob", required=True, help="input probability map (.mha)")
    p.add_argument("--out-det", required=True, help="output detection map (.mha)")
    p.add_argument("--out-json", help="optional candidate list JSON")
    p.add_argument("--case-id", help="case id for the JSON output (default: file stem)")
    _add_extraction_flags(p, require_threshold=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("score", parents=[common], help="print the patient-level score of a detection map")
    p.add_argument("--det", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ensemble", parents=[common], help="voxelwise mean of probability maps")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+", metavar="FILE")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("crop", parents=[common],
                       help="crop an image to a margin-padded box around a mask")
    p.add_argument("--mask", required=True, help="coarse organ mask (.mha, any grid)")
    p.add_argument("--image", required=True, help="volume to crop (.mha)")
    p.add_argument("--margin", default="100,50,15", help="mm margin per side as X,Y,Z")
    p.add_argument("--out", required=True, help="cropped output volume")
    p.add_argument("--out-box", required=True, help="crop box JSON (consumed by uncrop)")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("uncrop", parents=[common],
                       help="paste a cropped detection map back into the full geometry")
    p.add_argument("--det", required=True)
    p.add_argument("--box", required=True, help="crop box JSON from crop")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_uncrop)

    p = sub.add_parser("split", parents=[common], help="stratified K-fold split of a cases CSV")
    p.add_argument("--cases", required=True, help="CSV: case_id,label,lesion_size_mm,age,sex")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="fold assignment JSON")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", parents=[common], help="evaluate a case manifest (AUROC, AP, CIs)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--min-iou", type=float, default=0.10)
    p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--per-case", help="optional per-case CSV")
    _add_extraction_flags(p, require_threshold=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common],
                       help="grid-search the threshold scale across folds")
    p.add_argument("--config", required=True, help="sweep config JSON")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg")
    p.set_defaults(func=cmd_sweep)
    return parser


def cmd_extract(args) -> int:
    params = _extraction_params(args)
    prob = read_mha(args.prob)
    result = extract_candidates(prob, params)
    write_mha(result.detection_map, args.out_det)
    if args.out_json:
        case_id = args.case_id or Path(args.prob).stem
        write_json(args.out_json, result.to_json(case_id, params))
    _info(args, f"extracted {len(result.candidates)} candidates; "
                f"patient score {patient_score(result):.6g}")
    return 0


def cmd_score(args) -> int:
    det = read_mha(args.det)
    validate_probability_map(det, what="detection map")
    score = float(det.data.max()) if det.data.size else 0.0
    print(score)
    return 0


def cmd_ensemble(args) -> int:
    volumes = [read_mha(f) for f in args.inputs]
    write_mha(mean_volumes(volumes), args.out)
    _info(args, f"averaged {len(volumes)} maps -> {args.out}")
    return 0


def cmd_crop(args) -> int:
    try:
        margin = MarginMm(*(float(v) for v in args.margin.split(",")))
    except (TypeError, ValueError):
        raise _UsageError(f"--margin must be X,Y,Z in mm, got {args.margin!r}") from None
    mask = read_mha(args.mask)
    image = read_mha(args.image)
    lo, hi = mask_bbox_physical(mask)
    box = compute_crop_box(lo, hi, image.geometry, margin)
    write_mha(crop(image, box), args.out)
    write_json(args.out_box, box.to_json())
    _info(args, f"crop box {box.lo} .. {box.hi} of {image.geometry.dims}")
    return 0


def cmd_uncrop(args) -> int:
    det = read_mha(args.det)
    box = CropBox.from_json(read_json(args.box))
    write_mha(uncrop(det, box), args.out)
    return 0


def cmd_split(args) -> int:
    cases = read_cases_csv(args.cases)
    fa = stratified_kfold(cases, args.folds, args.seed)
    doc = split_to_json(cases, fa)
    write_json(args.out, doc)
    for violation in doc["report"]["violations"]:
        print(f"warning: {violation}", file=sys.stderr)
    _info(args, f"assigned {len(cases)} cases to {args.folds} folds")
    return 0


def cmd_eval(args) -> int:
    entries = load_manifest(args.manifest)
    params = None
    if any(e.get("probability") for e in entries):
        params = _extraction_params(args, default_alpha=DEFAULT_ALPHA)
    report = evaluate_manifest(
        entries,
        extraction_params=params,
        min_iou=args.min_iou,
        n_resamples=args.bootstrap,
        seed=args.seed,
        threads=args.threads,
    )
    write_json(args.out, report_to_json(report))
    if args.per_case:
        atomic_write_text(args.per_case, report_to_csv(report))
    _info(args, f"AUROC {report.auroc:.4f} {report.auroc_ci}  AP {report.ap:.4f} {report.ap_ci}  "
                f"({report.n_cases} cases, {report.n_lesions} lesions)")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_sweep_config(args.config)
    result = run_sweep(cfg, threads=args.threads)
    emit_csv(result, args.out_csv)
    if args.out_svg:
        emit_svg(result, args.out_svg)
    _info(args, f"{len(result.rows)} sweep rows -> {args.out_csv}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        print("run 'lesionkit --help' for usage", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (MetaImageError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
