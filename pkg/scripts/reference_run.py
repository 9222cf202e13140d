#!/usr/bin/env python3
"""Run the end-to-end reference pipeline and record the achieved numbers
in reference/reference_run.json.

The committed JSON pins the data-dependent thresholds the acceptance
suite checks (occlusion degradation factor, baseline ratios) together
with the exact recipe and timings that produced them.
"""

import argparse
import json
import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from posechat.pipeline import run_reference_pipeline  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out-dir", default=str(ROOT / "reference" / "artifacts"))
    parser.add_argument("--quick", action="store_true", help="small evals for a fast rehearsal")
    parser.add_argument("--json-out", default=str(ROOT / "reference" / "reference_run.json"))
    args = parser.parse_args()
    results = run_reference_pipeline(pathlib.Path(args.out_dir), quick=args.quick)
    out = pathlib.Path(args.json_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(results, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
