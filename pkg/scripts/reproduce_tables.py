"""Kernel table, ablation table and segmentation Dice for one manifest.

    python scripts/reproduce_tables.py MANIFEST --out out/tables --jobs 8
"""

import argparse
import json
import time
from pathlib import Path

from dermabcd.config import load_config
from dermabcd.evaluation import (extract_all, load_manifest, run_experiment,
                                 segmentation_quality, table1_text)


def ablation_text(report):
    lines = [f"{'features':<10} {'sens':>6} {'spec':>6} {'acc':>6} {'prec':>6}"]
    for name, row in report["ablation"].items():
        a = row["aggregate"]
        vals = [a[k]["mean"] for k in ("sensitivity", "specificity", "accuracy", "precision")]
        lines.append(f"{name:<10} " + " ".join("   n/a" if v is None else f"{100 * v:6.1f}" for v in vals))
    return "\n".join(lines)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--out", default="out/tables")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config, args.set)
    man = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    feats = extract_all(man, cfg, out / "cache", args.jobs)
    report = run_experiment(man, cfg, features=feats)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(table1_text(report))
    if report["ablation"]:
        print()
        print(ablation_text(report))
    q = segmentation_quality(man, cfg, args.jobs)
    if q["n"]:
        print(f"\nsegmentation vs reference masks: median Dice {q['median']:.3f}, "
              f"{100 * q['frac_ge_0_70']:.1f}% >= 0.70, {100 * q['failure_rate']:.1f}% failed")
        (out / "dice.json").write_text(json.dumps(q, indent=1, sort_keys=True))
    print(f"\n{len(man)} images, {report['dataset']['n_failed']} failed, "
          f"{time.perf_counter() - t0:.0f} s -> {out}")


if __name__ == "__main__":
    main()
