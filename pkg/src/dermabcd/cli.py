"""dermabcd command line.

Exit codes: 0 success (or benign verdict), 2 melanoma verdict, 1 any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import imaging, render
from .config import CONFIG_ENV, default_config_text, load_config
from .errors import DermError
from .evaluation import (bench, extract_all, load_manifest, run_experiment, table1_csv_rows,
                         table1_text, train_model)
from .pipeline import run_image
from .svm import load_model, save_model

EXIT_OK, EXIT_ERROR, EXIT_MELANOMA = 0, 1, 2
SCHEMA_VERSION = 1


class CommandError(Exception):
    pass


def write_json(obj, path):
    """Sorted keys and fixed formatting, so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def _config(args):
    overrides = list(args.set or [])
    if getattr(args, "jobs", None) is not None:
        overrides.append(f"experiment.jobs={args.jobs}")
    cfg = load_config(args.config, overrides)
    return cfg


def _out_dir(args, cfg):
    out = Path(args.out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, cfg, capture):
    img = imaging.load_image(path)
    if capture:
        img = imaging.fit_long_edge(img, cfg.preprocess.capture_long_edge)
    return img


def _analyse(args, cfg, callback=None):
    img = _load(args.image, cfg, args.capture)
    res = run_image(img, cfg, callback, keep=True, path=args.image)
    if not res.ok:
        raise CommandError(f"[{res.stage}] {args.image}: {res.error}")
    return img, res


def cmd_classify(args):
    cfg = _config(args)
    model = load_model(args.model)
    _, res = _analyse(args, cfg)
    x = res.features.to_array()
    margin = float(model.decision(model.prepare(x))[0])
    verdict = "melanoma" if margin >= 0 else "benign"
    feats = res.features.as_dict()
    print(f"verdict: {verdict}")
    print(f"margin:  {margin:+.4f}")
    print(f"A  asymmetry   a_h={feats['a_h']:.2f}%  a_v={feats['a_v']:.2f}%")
    print(f"B  border      I={feats['border_i']:.3f}")
    print(f"C  colours     {res.features.color_count} "
          f"({', '.join(r.color_class for r in res.analysis.regions) or 'none'})")
    print(f"D  diameter    {feats['diameter_mm']:.2f} mm")
    out = _out_dir(args, cfg)
    write_json({
        "schema_version": SCHEMA_VERSION,
        "image": str(args.image),
        "verdict": verdict,
        "margin": margin,
        "features": feats,
        "colors": [r.color_class for r in res.analysis.regions],
        "iterations": res.iterations,
    }, out / f"{Path(args.image).stem}_classify.json")
    return EXIT_MELANOMA if margin >= 0 else EXIT_OK


def cmd_segment(args):
    cfg = _config(args)
    rec = render.SnapshotRecorder() if args.snapshots else None
    img = _load(args.image, cfg, args.capture)
    from .errors import SegmentationError
    from .segmentation import evolve_detailed

    planes = imaging.preprocess(img, cfg.preprocess.kernel_size, cfg.preprocess.sigma)
    try:
        seg = evolve_detailed(planes, cfg.segmentation, rec)
    except SegmentationError as exc:
        raise CommandError(f"[segment] {args.image}: {exc}") from exc
    out = _out_dir(args, cfg)
    stem = Path(args.image).stem
    paths = {"mask": str(imaging.save_png(seg.mask.bits, out / f"{stem}_mask.png"))}
    snaps = None
    if rec is not None:
        frames = rec.completed()
        paths["snapshots"] = str(imaging.save_png(render.snapshot_overlay(img, frames),
                                                  out / f"{stem}_snapshots.png"))
        snaps = {str(k): v[0] for k, v in frames.items()}
    write_json({
        "schema_version": SCHEMA_VERSION,
        "image": str(args.image),
        "iterations": seg.iterations_used,
        "converged": seg.converged,
        "area": seg.mask.area,
        "c1": seg.c1,
        "c2": seg.c2,
        "snapshot_iterations": snaps,
        "outputs": paths,
    }, out / f"{stem}_segment.json")
    print(f"{stem}: {seg.iterations_used} evolutions, area {seg.mask.area} px -> {paths['mask']}")
    return EXIT_OK


def cmd_features(args):
    cfg = _config(args)
    _, res = _analyse(args, cfg)
    out = _out_dir(args, cfg)
    stem = Path(args.image).stem
    paths = render.write_all(render.feature_overlays(res.analysis), out, f"{stem}_")
    paths["mask"] = str(imaging.save_png(res.segmentation.mask.bits, out / f"{stem}_mask.png"))
    feats = res.features.as_dict()
    write_json({
        "schema_version": SCHEMA_VERSION,
        "image": str(args.image),
        "features": feats,
        "colors": [r.color_class for r in res.analysis.regions],
        "theta": res.analysis.rect.theta,
        "scale": res.analysis.rotation.sf,
        "iterations": res.iterations,
        "outputs": paths,
    }, out / f"{stem}_features.json")
    for k, v in feats.items():
        print(f"{k:>14} {v:.4f}")
    return EXIT_OK


def _manifest_features(args, cfg):
    man = load_manifest(args.manifest)
    cache = None if args.no_cache else _out_dir(args, cfg) / "cache"
    return man, extract_all(man, cfg, cache, cfg.experiment.jobs)


def cmd_train(args):
    cfg = _config(args)
    man, results = _manifest_features(args, cfg)
    keep = [(e, r[0]) for e, r in zip(man.entries, results) if r[0] is not None]
    failures = [{"image": e.name, "stage": r[1], "error": r[2]}
                for e, r in zip(man.entries, results) if r[0] is None]
    if not keep:
        raise CommandError("no image produced features")
    x = np.vstack([v.to_array() for _, v in keep])
    y = np.array([e.label for e, _ in keep])
    seed = args.seed if args.seed is not None else 0
    model, info = train_model(x, y, cfg, seed=seed)
    out = _out_dir(args, cfg)
    model_path = Path(args.model_out) if args.model_out else out / "model.json"
    save_model(model, model_path, extra={"config": cfg.to_dict(), "seed": seed})
    report = {
        "schema_version": SCHEMA_VERSION,
        "manifest": Path(args.manifest).name,
        "model": model_path.name,
        "kernel": model.kernel.to_dict(),
        "c": model.c_param,
        "seed": seed,
        "counts": info,
        "n_support": int(len(model.dual_coefs)),
        "converged": model.converged,
        "failures": failures,
    }
    write_json(report, out / "train_report.json")
    print(f"trained {model.kernel.kind} SVM (C={model.c_param:g}) on {info['n_train']} images "
          f"({info['n_melanoma']} melanoma) -> {info['n_train_after']} after SMOTE; "
          f"{len(model.dual_coefs)} support vectors -> {model_path}")
    return EXIT_OK


def _meta(t0, argv, cfg=None):
    return {
        "argv": list(argv),
        "jobs": cfg.experiment.jobs if cfg is not None else None,
        "output_dir": cfg.output_dir if cfg is not None else None,
        "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_s": round(time.perf_counter() - t0, 3),
        "python": platform.python_version(),
        "machine": platform.machine(),
        "processor": platform.processor(),
    }


def cmd_eval(args):
    t0 = time.perf_counter()
    cfg = _config(args)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, experiment=replace(cfg.experiment, seeds=(args.seed,)))
    man, results = _manifest_features(args, cfg)
    report = run_experiment(man, cfg, features=results)
    out = _out_dir(args, cfg)
    write_json(report, out / "report.json")
    rows = table1_csv_rows(report)
    with (out / "table1.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    write_json(_meta(t0, sys.argv, cfg), out / "run_meta.json")
    print(table1_text(report))
    print(f"\nreport: {out / 'report.json'}")
    return EXIT_OK


def cmd_bench(args):
    t0 = time.perf_counter()
    cfg = _config(args)
    man = load_manifest(args.manifest)
    if args.limit:
        idx = []
        for label in sorted(set(man.labels())):
            idx += [i for i, e in enumerate(man.entries) if e.label == label][:args.limit]
        man = man.subset(sorted(idx))
    model = load_model(args.model) if args.model else None
    reps = args.repetitions or cfg.experiment.bench_repetitions
    timings = bench(man, cfg, reps, model).to_dict()
    out = _out_dir(args, cfg)
    write_json({"schema_version": SCHEMA_VERSION, "timings": timings}, out / "bench.json")
    write_json(_meta(t0, sys.argv), out / "bench_meta.json")
    stages = ("preprocess", "segment", "features", "classify", "total")
    print(f"{'group':<10}" + "".join(f"{s:>20}" for s in stages))
    for group in ("benign", "melanoma"):
        g = timings.get(group)
        if g:
            print(f"{group:<10}" + "".join(
                f"{g[s]['mean']:>11.1f} ± {g[s]['std']:<6.1f}" for s in stages))
    return EXIT_OK


def cmd_make_manifest(args):
    from .ph2 import make_ph2_manifest

    path = make_ph2_manifest(args.ph2_dir, args.out_csv)
    man = load_manifest(path)
    c = man.counts()
    print(f"{path}: {len(man)} images ({c['melanoma']} melanoma, {c['benign']} benign)")
    return EXIT_OK


def cmd_default_config(args):
    text = default_config_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"YAML config (default: ${CONFIG_ENV}, else built-ins)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. --set svm.c=10 (repeatable)")
    common.add_argument("--out-dir", help="output directory (default: config output_dir)")
    common.add_argument("--seed", type=int, help="seed for training / single-seed evaluation")

    p = argparse.ArgumentParser(prog="dermabcd", description="ABCD melanoma screening pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def image_cmd(name, help_):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("image")
        s.add_argument("--capture", action="store_true",
                       help="treat as a camera capture: resize long edge before processing")
        return s

    s = image_cmd("classify", "classify one image with a trained model")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_classify)

    s = image_cmd("segment", "segment one image, write the mask")
    s.add_argument("--snapshots", action="store_true",
                   help="also write the curve at evolutions 50/100/200/400")
    s.set_defaults(func=cmd_segment)

    s = image_cmd("features", "extract the 11 features and write overlays")
    s.set_defaults(func=cmd_features)

    for name, func, help_ in (("train", cmd_train, "train a model on a manifest"),
                              ("eval", cmd_eval, "run the holdout experiment")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("manifest")
        s.add_argument("--jobs", type=int, help="parallel feature-extraction workers")
        s.add_argument("--no-cache", action="store_true", help="ignore the feature cache")
        if name == "train":
            s.add_argument("--model-out", help="model path (default: OUT/model.json)")
        s.set_defaults(func=func)

    s = sub.add_parser("bench", parents=[common], help="per-stage timings")
    s.add_argument("manifest")
    s.add_argument("--repetitions", type=int)
    s.add_argument("--limit", type=int, help="at most this many images per class")
    s.add_argument("--model", help="time classification with this model")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("make-manifest", help="PH2 directory -> manifest CSV")
    s.add_argument("ph2_dir")
    s.add_argument("out_csv")
    s.set_defaults(func=cmd_make_manifest)

    s = sub.add_parser("default-config", help="print the default config as YAML")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_default_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (DermError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
