"""Per-stage timings (ms per image) for benign and melanoma groups.

    python scripts/bench_stages.py MANIFEST --repetitions 5 --limit 20
"""

import argparse
import json

from dermabcd.config import load_config
from dermabcd.evaluation import STAGES, bench, load_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    ap.add_argument("--config")
    ap.add_argument("--repetitions", type=int, default=5)
    ap.add_argument("--limit", type=int, help="at most this many images per class")
    ap.add_argument("--json", help="also write the raw timings here")
    args = ap.parse_args()
    cfg = load_config(args.config)
    man = load_manifest(args.manifest)
    if args.limit:
        idx = []
        for label in sorted(set(man.labels())):
            idx += [i for i, e in enumerate(man.entries) if e.label == label][:args.limit]
        man = man.subset(sorted(idx))
    t = bench(man, cfg, args.repetitions).to_dict()
    cols = (*STAGES, "total")
    print(f"{'stage':<12}" + "".join(f"{g:>22}" for g in ("benign", "melanoma")))
    for s in (*cols, "iterations"):
        cells = []
        for g in ("benign", "melanoma"):
            v = t.get(g, {}).get(s)
            cells.append(f"{v['mean']:>13.1f} ± {v['std']:<6.1f}" if v else f"{'-':>22}")
        print(f"{s:<12}" + "".join(cells))
    if t["failures"]:
        print(f"{len(t['failures'])} image(s) failed and were skipped")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(t, fh, indent=1, sort_keys=True)


if __name__ == "__main__":
    main()
