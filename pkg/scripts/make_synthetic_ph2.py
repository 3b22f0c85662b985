"""Write a PH2-shaped synthetic dataset (40 melanoma, 160 nevi) with masks.

Stands in for PH2 when the real images are unavailable; the manifest it
writes feeds every dermabcd command.

    python scripts/make_synthetic_ph2.py out/synthetic --seed 0
"""

import argparse

from dermabcd.evaluation import load_manifest
from dermabcd.synthetic import make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--melanoma", type=int, default=40)
    ap.add_argument("--benign", type=int, default=160)
    ap.add_argument("--width", type=int, default=192)
    ap.add_argument("--height", type=int, default=144)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    path = make_dataset(args.out_dir, args.melanoma, args.benign, args.width, args.height, args.seed)
    c = load_manifest(path).counts()
    print(f"{path}: {c['melanoma']} melanoma, {c['benign']} benign")


if __name__ == "__main__":
    main()
