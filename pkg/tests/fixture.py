"""Deterministic synthetic 8-case dataset and full-pipeline driver.

Probability maps are built from compact-support quadratic bumps
(h * max(0, 1 - d^2/W^2) over physical distance d), so region growth at a
threshold scale a covers a ball of radius W*sqrt(1-a) around each peak.
Ground-truth lesions are larger balls of radius R: tight thresholds
(1/alpha = 2.5) produce regions too small to reach the 0.10 IoU gate on the
R=19..23 lesions, while looser ones (1/alpha >= 10) match everything, which
drives the expected AP ordering in the sweep. All randomness comes from the
package's own counter-based generator, so every byte of the fixture is
reproducible anywhere.

Dims stay small (48 x 40 x 24 full grid) so the whole pipeline runs in
seconds.
"""

import json
from pathlib import Path

import numpy as np

from lesionkit import Geometry, Volume, write_mha
from lesionkit.cli import main as cli_main
from lesionkit.rng import SplitMix64, derive_seed
from lesionkit.roi import MarginMm, compute_crop_box, mask_bbox_physical
from lesionkit.util import write_json

FULL_GEOMETRY = Geometry((48, 40, 24), (1.5, 1.5, 2.5), (-36.0, -30.0, -30.0))
MASK_GEOMETRY = Geometry((24, 20, 12), (3.0, 3.0, 5.0), (-36.0, -30.0, -30.0))
CROP_MARGIN = "12,12,8"
ALPHA = 1.0 / 15.0

# (case_id, label, bumps); each bump is (center_mm, support_W_mm, height,
# gt_radius_mm or None for non-lesion bumps)
CASES = [
    ("case01", "PDAC", [((-8.0, -4.0, -2.0), 13.0, 0.92, 23.0)]),
    ("case02", "PDAC", [((-18.0, 8.0, 0.0), 13.0, 0.85, 22.0),
                        ((20.0, -8.0, 2.0), 13.0, 0.80, 14.0)]),
    ("case03", "PDAC", [((6.0, 8.0, 4.0), 11.0, 0.75, 19.0)]),
    ("case04", "PDAC", [((-2.0, -10.0, 0.0), 13.0, 0.55, 23.0)]),
    ("case05", "PDAC", [((4.0, 2.0, -4.0), 13.0, 0.35, 17.0)]),
    ("case06", "non-PDAC", [((0.0, 4.0, 0.0), 6.0, 0.45, None)]),
    ("case07", "non-PDAC", [((-6.0, 2.0, 2.0), 6.0, 0.20, None)]),
    ("case08", "non-PDAC", [((8.0, -6.0, 0.0), 5.0, 0.15, None)]),
]


def _axes_mm(g: Geometry):
    return [g.origin[a] + np.arange(g.dims[a], dtype=np.float64) * g.spacing[a] for a in range(3)]


def _dist_sq(g: Geometry, center):
    xs, ys, zs = _axes_mm(g)
    return (
        (xs - center[0])[:, None, None] ** 2
        + (ys - center[1])[None, :, None] ** 2
        + (zs - center[2])[None, None, :] ** 2
    )


def _bump(g: Geometry, center, width, height):
    return height * np.maximum(0.0, 1.0 - _dist_sq(g, center) / (width * width))


def _ball(g: Geometry, center, radius):
    return _dist_sq(g, center) <= radius * radius


def _noise(g: Geometry, stream_seed: int):
    """A few faint compact bumps, capped at 0.03."""
    rng = SplitMix64(stream_seed)

    def uniform(lo, hi):
        return lo + (hi - lo) * (rng.next_u64() / 2.0**64)

    field = np.zeros(g.dims, dtype=np.float64)
    for _ in range(6):
        center = (uniform(-25, 25), uniform(-22, 22), uniform(-18, 18))
        field += _bump(g, center, uniform(5, 9), uniform(0.005, 0.02))
    return np.minimum(field, 0.03)


def _clean_field(g: Geometry, bumps):
    field = np.zeros(g.dims, dtype=np.float64)
    for center, width, height, _ in bumps:
        field = np.maximum(field, _bump(g, center, width, height))
    return field


def generate_inputs(root: Path) -> dict:
    """Write mask/image/per-fold-probability/gt files; returns paths per case."""
    inputs = root / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    cases = {}
    for index, (case_id, label, bumps) in enumerate(CASES):
        organ_centers = [b[0] for b in bumps] + [(0.0, 0.0, 0.0)]
        mask = np.zeros(MASK_GEOMETRY.dims, dtype=bool)
        for i, center in enumerate(organ_centers):
            mask |= _ball(MASK_GEOMETRY, center, 9.0 if i < len(bumps) else 10.0)
        mask_path = inputs / f"mask_{case_id}.mha"
        write_mha(Volume.from_array(mask.astype(np.uint8), MASK_GEOMETRY), mask_path)

        clean_full = _clean_field(FULL_GEOMETRY, bumps)
        image = np.round(1000.0 * clean_full - 80.0).astype(np.int16)
        image_path = inputs / f"image_{case_id}.mha"
        write_mha(Volume.from_array(image, FULL_GEOMETRY), image_path)

        # per-fold probability maps live on the crop grid, like a model that
        # ran on the cropped image
        mask_vol = Volume.from_array(mask.astype(np.uint8), MASK_GEOMETRY)
        lo, hi = mask_bbox_physical(mask_vol)
        margin = MarginMm(*(float(v) for v in CROP_MARGIN.split(",")))
        box = compute_crop_box(lo, hi, FULL_GEOMETRY, margin)
        crop_geometry = Geometry(
            box.shape, FULL_GEOMETRY.spacing,
            tuple(FULL_GEOMETRY.origin[a] + box.lo[a] * FULL_GEOMETRY.spacing[a] for a in range(3)),
        )
        clean_crop = _clean_field(crop_geometry, bumps)
        noise = _noise(crop_geometry, derive_seed(9000 + index, 0))
        fold_paths = []
        for fold in range(3):
            jitter = 1.0 + 0.02 * (fold - 1)
            prob = np.clip(np.maximum(clean_crop * jitter, noise), 0.0, 1.0).astype(np.float32)
            path = inputs / f"prob_{case_id}_f{fold}.mha"
            write_mha(Volume.from_array(prob, crop_geometry), path)
            fold_paths.append(path)

        gt_path = None
        if label == "PDAC":
            gt = np.zeros(FULL_GEOMETRY.dims, dtype=bool)
            for center, _, _, radius in bumps:
                gt |= _ball(FULL_GEOMETRY, center, radius)
            gt_path = inputs / f"gt_{case_id}.mha"
            write_mha(Volume.from_array(gt.astype(np.uint8), FULL_GEOMETRY), gt_path)

        cases[case_id] = {
            "label": label,
            "mask": mask_path,
            "image": image_path,
            "folds": fold_paths,
            "gt": gt_path,
        }
    return cases


def run_pipeline(root: Path, threads: int = 1) -> dict:
    """Drive crop -> ensemble -> extract -> uncrop -> eval -> sweep through
    the CLI; returns the parsed eval report plus sweep artifacts."""
    cases = generate_inputs(root)
    out = root / "out"
    out.mkdir(exist_ok=True)
    t = ["--threads", str(threads)]

    eval_entries = []
    sweep_entries = []
    for case_id, info in cases.items():
        box = out / f"box_{case_id}.json"
        prob = out / f"prob_{case_id}.mha"
        det_crop = out / f"detcrop_{case_id}.mha"
        det_full = out / f"det_{case_id}.mha"
        prob_full = out / f"probfull_{case_id}.mha"
        steps = [
            ["crop", "--mask", str(info["mask"]), "--image", str(info["image"]),
             "--margin", CROP_MARGIN, "--out", str(out / f"cropimg_{case_id}.mha"),
             "--out-box", str(box), "--quiet"],
            ["ensemble", "--out", str(prob), *[str(p) for p in info["folds"]], "--quiet"],
            ["extract", "--prob", str(prob), "--alpha", repr(ALPHA),
             "--out-det", str(det_crop), "--out-json", str(out / f"cands_{case_id}.json"),
             "--case-id", case_id, "--quiet"],
            ["uncrop", "--det", str(det_crop), "--box", str(box), "--out", str(det_full), "--quiet"],
            ["uncrop", "--det", str(prob), "--box", str(box), "--out", str(prob_full), "--quiet"],
        ]
        for argv in steps:
            code = cli_main(argv + t)
            assert code == 0, f"step {argv[0]} failed for {case_id}"
        gt = str(info["gt"]) if info["gt"] else None
        eval_entries.append({"case_id": case_id, "label": info["label"],
                             "detection": str(det_full), "gt": gt})
        sweep_entries.append({"case_id": case_id, "label": info["label"],
                              "probability": str(prob_full), "gt": gt})

    eval_manifest = out / "eval_manifest.json"
    write_json(eval_manifest, eval_entries)
    sweep_manifest = out / "sweep_manifest.json"
    write_json(sweep_manifest, sweep_entries)
    sweep_config = out / "sweep_config.json"
    write_json(sweep_config, {"folds": {"0": str(sweep_manifest)}})

    report_path = out / "report.json"
    code = cli_main(["eval", "--manifest", str(eval_manifest), "--out", str(report_path),
                     "--per-case", str(out / "per_case.csv"), "--seed", "42",
                     "--bootstrap", "1000", "--quiet", *t])
    assert code == 0, "eval failed"
    csv_path = out / "sweep.csv"
    svg_path = out / "sweep.svg"
    code = cli_main(["sweep", "--config", str(sweep_config), "--out-csv", str(csv_path),
                     "--out-svg", str(svg_path), "--quiet", *t])
    assert code == 0, "sweep failed"

    return {
        "report": json.loads(report_path.read_text()),
        "per_case_csv": (out / "per_case.csv").read_text(),
        "sweep_csv": csv_path.read_text(),
        "sweep_svg": svg_path.read_bytes(),
        "out_dir": out,
    }


def sweep_ap_by_inverse_alpha(sweep_csv: str) -> dict:
    """{inverse_alpha: ap} for the adaptive rows of a single-fold sweep CSV."""
    out = {}
    for line in sweep_csv.strip().splitlines()[1:]:
        fold, setting, inverse_alpha, roc, ap = line.split(",")
        if inverse_alpha:
            out[float(inverse_alpha)] = float(ap)
    return out
