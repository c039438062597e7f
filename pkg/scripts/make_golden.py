#!/usr/bin/env python3
"""Regenerate the committed golden files under tests/data/.

Run from the repository root after any intentional behavior change:

    python scripts/make_golden.py

Outputs are deterministic, so an unchanged implementation reproduces them
bit for bit.
"""

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from lesionkit import read_cases_csv, stratified_kfold
from lesionkit.splits import split_to_json
from lesionkit.util import write_json

import fixture

DATA = ROOT / "tests" / "data"


def golden_split():
    cases = read_cases_csv(DATA / "split_cases.csv")
    fa = stratified_kfold(cases, k=5, seed=42)
    write_json(DATA / "golden_split.json", split_to_json(cases, fa))
    print("wrote", DATA / "golden_split.json")


def golden_eval_report():
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        result = fixture.run_pipeline(Path(tmp))
    write_json(DATA / "golden_eval_report.json", result["report"])
    print("wrote", DATA / "golden_eval_report.json")


if __name__ == "__main__":
    golden_split()
    golden_eval_report()
