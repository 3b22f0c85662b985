"""Dataset manifests, the stratified holdout protocol, metrics and benchmarks."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .config import AppConfig
from .errors import LearnError, ManifestError
from .features import FEATURE_GROUPS, FEATURE_NAMES
from .learn import BENIGN, MELANOMA, Scaler, fit_scaler, oversample
from .pipeline import cached_features, run_image
from .segmentation import BinaryMask
from .svm import KernelSpec, SvmModel, kernel_matrix, svm_train

REPORT_SCHEMA_VERSION = 1
MANIFEST_HEADER = ("image", "label", "mask", "colors")
# three-way dataset diagnoses collapse to the binary task
LABELS = {
    "melanoma": MELANOMA,
    "benign": BENIGN,
    "common_nevus": BENIGN,
    "atypical_nevus": BENIGN,
}


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    label: int
    diagnosis: str
    gt_mask_path: Path | None = None
    gt_colors: tuple | None = None

    @property
    def name(self):
        return self.image_path.stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple
    source: str = ""

    def __len__(self):
        return len(self.entries)

    def labels(self):
        return np.array([e.label for e in self.entries])

    def counts(self):
        y = self.labels()
        return {"melanoma": int(np.sum(y == MELANOMA)), "benign": int(np.sum(y == BENIGN))}

    def subset(self, idx):
        return DatasetManifest(tuple(self.entries[i] for i in idx), self.source)


def load_manifest(path, check_paths=True) -> DatasetManifest:
    """Read a CSV with header ``image,label[,mask][,colors]``.

    Relative paths resolve against the CSV's directory. ``colors`` is a
    ``;``-separated list of colour class names.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ManifestError(f"{path}: manifest is empty")
    header = [h.strip().lower() for h in rows[0]]
    if "image" not in header or "label" not in header:
        raise ManifestError(f"{path}: header must contain 'image' and 'label', got {rows[0]}")
    col = {h: i for i, h in enumerate(header)}
    base = path.parent
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(c.strip() for c in row):
            continue

        def get(name):
            i = col.get(name)
            return row[i].strip() if i is not None and i < len(row) else ""

        raw_label = get("label").lower().replace(" ", "_").replace("-", "_")
        if raw_label not in LABELS:
            raise ManifestError(f"{path}:{lineno}: unknown label {get('label')!r}")
        img = base / get("image")
        if check_paths and not img.is_file():
            raise ManifestError(f"{path}:{lineno}: image not found: {img}")
        mask = get("mask")
        mask_path = base / mask if mask else None
        if check_paths and mask_path is not None and not mask_path.is_file():
            raise ManifestError(f"{path}:{lineno}: mask not found: {mask_path}")
        colors = get("colors")
        gt_colors = tuple(c.strip() for c in colors.split(";") if c.strip()) if colors else None
        entries.append(ManifestEntry(img, LABELS[raw_label], raw_label, mask_path, gt_colors))
    if not entries:
        raise ManifestError(f"{path}: manifest has no rows")
    return DatasetManifest(tuple(entries), str(path))


def write_manifest(rows, path):
    """Write (image, label, mask, colors) rows; paths stored relative to the CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for image, label, mask, colors in rows:
            w.writerow([
                _rel(image, path.parent), label, _rel(mask, path.parent) if mask else "",
                ";".join(colors) if colors else "",
            ])
    return path


def _rel(p, base):
    p = Path(p)
    try:
        return str(p.resolve().relative_to(Path(base).resolve()))
    except ValueError:
        return str(p.resolve())


def split(labels, ratio=0.7, seed=0):
    """Stratified holdout; returns sorted (train_idx, test_idx).

    Each class keeps at least one sample on both sides.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    labels = np.asarray(getattr(labels, "labels", lambda: labels)())
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in sorted(np.unique(labels)):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 2:
            raise ValueError(f"class {cls} has fewer than 2 members")
        idx = idx[rng.permutation(len(idx))]
        n_tr = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train.extend(idx[:n_tr])
        test.extend(idx[n_tr:])
    return np.sort(np.array(train)), np.sort(np.array(test))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        pos_t, pos_p = y_true == MELANOMA, y_pred == MELANOMA
        return cls(int(np.sum(pos_t & pos_p)), int(np.sum(~pos_t & pos_p)),
                   int(np.sum(~pos_t & ~pos_p)), int(np.sum(pos_t & ~pos_p)))


def _ratio(a, b):
    return a / b if b > 0 else None


def metrics(c: ConfusionCounts):
    """Sensitivity, specificity, accuracy, precision; None when undefined."""
    return {
        "sensitivity": _ratio(c.tp, c.tp + c.fn),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "precision": _ratio(c.tp, c.tp + c.fp),
    }


@dataclass(frozen=True)
class RocCurve:
    points: tuple  # (fpr, tpr) from (0, 0) to (1, 1)
    auc: float


def roc_auc(scores, labels) -> RocCurve:
    """Threshold sweep from high to low score; tied scores form one step."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == MELANOMA
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    tp = fp = 0
    pts = [(0.0, 0.0)]
    auc = 0.0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        dtp = int(pos[i:j].sum())
        dfp = (j - i) - dtp
        prev_fpr, prev_tpr = fp / n_neg, tp / n_pos
        tp += dtp
        fp += dfp
        fpr, tpr = fp / n_neg, tp / n_pos
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0
        pts.append((fpr, tpr))
        i = j
    return RocCurve(tuple(pts), float(auc))


def mann_whitney_auc(scores, labels):
    """U / (n+ n-), counting ties as one half. Independent of :func:`roc_auc`."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(labels) == MELANOMA
    sp, sn = s[pos], s[~pos]
    gt = (sp[:, None] > sn[None, :]).sum()
    eq = (sp[:, None] == sn[None, :]).sum()
    return float((gt + 0.5 * eq) / (len(sp) * len(sn)))


def dice(a, b) -> float:
    a = np.asarray(getattr(a, "bits", a), dtype=bool)
    b = np.asarray(getattr(b, "bits", b), dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks differ in size")
    s = int(a.sum()) + int(b.sum())
    if s == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / s


def load_mask(path) -> BinaryMask:
    img = imaging.load_image(path)
    return BinaryMask(img.pixels.max(axis=2) > 127)


# ---------------------------------------------------------------------------
# experiment protocol


def _extract_one(args):
    path, cfg, cache_dir = args
    return cached_features(path, cfg, cache_dir)


def extract_all(manifest: DatasetManifest, cfg: AppConfig, cache_dir=None, jobs=1):
    """Feature vectors for every entry, in manifest order."""
    work = [(str(e.image_path), cfg, cache_dir) for e in manifest.entries]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_extract_one, work))
    return [_extract_one(w) for w in work]


def train_model(x, y, cfg: AppConfig, kernel=None, c=None, use_smote=None, seed=0,
                feature_index=None):
    """Scale, optionally SMOTE (in scaled space), then fit the SVM.

    Returns ``(model, info)`` where info records counts before and after SMOTE.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if feature_index is not None:
        x = x[:, list(feature_index)]
    if len(np.unique(y)) < 2:
        raise LearnError("training data has a single class")
    scaler = fit_scaler(x)
    xs = scaler.apply(x)
    info = {"n_train": int(len(y)), "n_melanoma": int(np.sum(y == MELANOMA)),
            "n_benign": int(np.sum(y == BENIGN))}
    use_smote = cfg.smote.enabled if use_smote is None else use_smote
    if use_smote:
        xs, y = oversample(xs, y, cfg.smote.for_seed(seed))
    info.update(n_train_after=int(len(y)), n_melanoma_after=int(np.sum(y == MELANOMA)))
    model = svm_train(xs, y, c if c is not None else cfg.svm.c, cfg.svm.kernel_spec(kernel),
                      cfg.svm.tol, cfg.svm.max_passes, seed)
    model = SvmModel(model.support_vectors, model.dual_coefs, model.bias, model.kernel,
                     model.c_param, model.converged, model.iterations, scaler,
                     tuple(feature_index) if feature_index is not None else None)
    return model, info


def _evaluate(model, x, y):
    f = model.decision(model.prepare(x))
    pred = np.where(f >= 0, MELANOMA, BENIGN)
    row = metrics(ConfusionCounts.from_predictions(y, pred))
    row["auc"] = roc_auc(f, y).auc if len(np.unique(y)) == 2 else None
    return row, f


METRIC_KEYS = ("sensitivity", "specificity", "accuracy", "precision", "auc")


def _aggregate(rows):
    out = {}
    for k in METRIC_KEYS:
        vals = [r[k] for r in rows if r.get(k) is not None]
        out[k] = {"mean": float(np.mean(vals)) if vals else None,
                  "std": float(np.std(vals)) if vals else None,
                  "n": len(vals)}
    return out


def _score(agg):
    """Model-selection score: mean balanced accuracy, then mean AUC."""
    s, p = agg["sensitivity"]["mean"], agg["specificity"]["mean"]
    a = agg["auc"]["mean"]
    return ((s or 0.0) + (p or 0.0)) / 2.0, a or 0.0


def _sweep(x, y, splits, cfg, kernel, use_smote, feature_index=None):
    """Evaluate every C in the grid over all splits; return all and best."""
    per_c = []
    for c in cfg.svm.c_grid:
        rows = []
        for seed, (tr, te) in splits:
            try:
                model, info = train_model(x[tr], y[tr], cfg, kernel, c, use_smote, seed, feature_index)
            except LearnError as exc:
                rows.append({"seed": seed, "error": str(exc), **{k: None for k in METRIC_KEYS}})
                continue
            row, _ = _evaluate(model, x[te], y[te])
            row.update(seed=seed, converged=model.converged, n_support=int(len(model.dual_coefs)), **info)
            rows.append(row)
        per_c.append({"c": c, "rows": rows, "aggregate": _aggregate(rows)})
    best = max(per_c, key=lambda r: _score(r["aggregate"]))
    return per_c, best


def run_experiment(manifest: DatasetManifest, cfg: AppConfig, cache_dir=None, features=None):
    """The full holdout protocol over every seed, kernel and SMOTE setting.

    Returns the report as a plain dict (JSON-ready, no timestamps).
    ``features`` may pass precomputed ``extract_all`` output.
    """
    results = features if features is not None else extract_all(
        manifest, cfg, cache_dir, cfg.experiment.jobs)
    failures, keep = [], []
    for e, (vec, stage, err, _it) in zip(manifest.entries, results):
        if vec is None:
            failures.append({"image": e.name, "stage": stage, "error": err})
        else:
            keep.append((e, vec))
    if not keep:
        raise LearnError("every image failed feature extraction")
    x = np.vstack([v.to_array() for _, v in keep])
    y = np.array([e.label for e, _ in keep])
    splits = [(s, split(y, cfg.experiment.split_ratio, s)) for s in cfg.experiment.seeds]

    table1 = {}
    for kernel in cfg.svm.kernels:
        table1[kernel] = {}
        for use_smote in (True, False):
            per_c, best = _sweep(x, y, splits, cfg, kernel, use_smote)
            table1[kernel]["with_smote" if use_smote else "without_smote"] = {
                "best_c": best["c"],
                "aggregate": best["aggregate"],
                "per_seed": best["rows"],
                "c_sweep": {f"{r['c']:g}": r["aggregate"] for r in per_c},
            }

    ablation = None
    if cfg.experiment.ablation:
        ablation = {}
        groups = dict(FEATURE_GROUPS)
        groups["overall"] = tuple(range(len(FEATURE_NAMES)))
        for name, idx in groups.items():
            per_c, best = _sweep(x, y, splits, cfg, "rbf", cfg.smote.enabled, idx)
            ablation[name] = {"best_c": best["c"], "aggregate": best["aggregate"],
                              "features": [FEATURE_NAMES[i] for i in idx]}

    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": result_config(cfg),
        "dataset": {
            "manifest": Path(manifest.source).name if manifest.source else "",
            "n_images": len(manifest),
            **manifest.counts(),
            "n_used": int(len(y)),
            "n_failed": len(failures),
        },
        "failures": failures,
        "table1": table1,
        "ablation": ablation,
        "features": {
            "names": list(FEATURE_NAMES),
            "values": {e.name: [float(v) for v in vec.to_array()] for e, vec in keep},
        },
    }


def result_config(cfg: AppConfig):
    """Config echo without settings that only affect how a run executes."""
    d = cfg.to_dict()
    d.pop("output_dir", None)
    d["experiment"] = {k: v for k, v in d["experiment"].items() if k != "jobs"}
    return d


def table1_text(report):
    """Plain-text rendering in the layout of the published kernel table."""
    head = (f"{'SVM kernel':<12} | {'with SMOTE':^38} | {'without SMOTE':^38}\n"
            f"{'':<12} | {'sens':>6} {'spec':>6} {'acc':>6} {'auc':>6} {'C':>6}   | "
            f"{'sens':>6} {'spec':>6} {'acc':>6} {'auc':>6} {'C':>6}  ")
    lines = [head, "-" * len(head.splitlines()[0])]

    def fmt(v, pct=True):
        if v is None:
            return f"{'n/a':>6}"
        return f"{100 * v:6.1f}" if pct else f"{v:6.3f}"

    for kernel, block in report["table1"].items():
        cells = []
        for key in ("with_smote", "without_smote"):
            a = block[key]["aggregate"]
            cells.append(" ".join([fmt(a["sensitivity"]["mean"]), fmt(a["specificity"]["mean"]),
                                   fmt(a["accuracy"]["mean"]), fmt(a["auc"]["mean"], False),
                                   f"{block[key]['best_c']:6g}"]))
        lines.append(f"{kernel:<12} | {cells[0]}   | {cells[1]}")
    if report.get("ablation"):
        lines.append("")
        lines.append(f"{'features':<12} | {'sens':>6} {'spec':>6} {'acc':>6} {'prec':>6}")
        for name, row in report["ablation"].items():
            a = row["aggregate"]
            lines.append(f"{name:<12} | " + " ".join(fmt(a[k]["mean"]) for k in
                                                      ("sensitivity", "specificity", "accuracy", "precision")))
    d = report["dataset"]
    lines.append("")
    lines.append(f"images: {d['n_images']} ({d['melanoma']} melanoma, {d['benign']} benign), "
                 f"failed: {d['n_failed']}; seeds: {len(report['config']['experiment']['seeds'])}")
    return "\n".join(lines)


def table1_csv_rows(report):
    rows = []
    for kernel, block in report["table1"].items():
        for key, cell in block.items():
            a = cell["aggregate"]
            rows.append({"kernel": kernel, "smote": key == "with_smote", "c": cell["best_c"],
                         **{f"{k}_mean": a[k]["mean"] for k in METRIC_KEYS},
                         **{f"{k}_std": a[k]["std"] for k in METRIC_KEYS}})
    return rows


# ---------------------------------------------------------------------------
# segmentation oracle and timing


def segmentation_quality(manifest: DatasetManifest, cfg: AppConfig, jobs=1):
    """Dice of every segmentation against its reference mask.

    Failed segmentations score 0 and are listed.
    """
    entries = [e for e in manifest.entries if e.gt_mask_path is not None]
    work = [(str(e.image_path), str(e.gt_mask_path), cfg) for e in entries]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_dice_one, work))
    else:
        scores = [_dice_one(w) for w in work]
    d = np.array([s for s, _ in scores], dtype=float)
    failed = [e.name for e, (_, err) in zip(entries, scores) if err]
    return {
        "n": len(d),
        "median": float(np.median(d)) if len(d) else None,
        "frac_ge_0_70": float(np.mean(d >= 0.70)) if len(d) else None,
        "failure_rate": len(failed) / len(d) if len(d) else None,
        "failed": failed,
        "per_image": {e.name: float(s) for e, s in zip(entries, d)},
    }


def _dice_one(args):
    from .segmentation import evolve_detailed
    from .errors import SegmentationError

    image_path, mask_path, cfg = args
    img = imaging.load_image(image_path)
    gt = load_mask(mask_path)
    planes = imaging.preprocess(img, cfg.preprocess.kernel_size, cfg.preprocess.sigma)
    try:
        res = evolve_detailed(planes, cfg.segmentation)
    except SegmentationError as exc:
        return 0.0, str(exc)
    return dice(res.mask, gt), None


@dataclass
class StageTimings:
    groups: dict = field(default_factory=dict)

    def to_dict(self):
        return self.groups


STAGES = ("preprocess", "segment", "features", "classify")


def _timing_model(x):
    """Stand-in classifier with the shape of a trained one, for timing only."""
    try:
        scaler = fit_scaler(x)
    except LearnError:
        scaler = Scaler(np.zeros(x.shape[1]), np.ones(x.shape[1]))
    xs = scaler.apply(x)
    coefs = np.where(np.arange(len(xs)) % 2 == 0, 1.0, -1.0)
    return SvmModel(xs, coefs, 0.0, KernelSpec("rbf").resolved(x.shape[1]), 1.0, scaler=scaler)


def bench(manifest: DatasetManifest, cfg: AppConfig, repetitions=5, model: SvmModel | None = None):
    """Per-stage wall-clock timings in ms, split by class.

    Every image is run once untimed (warm-up) and then ``repetitions`` times.
    Without a model, classification is timed on a stand-in with one support
    vector per benchmarked image.
    """
    images = [(e, imaging.load_image(e.image_path)) for e in manifest.entries]
    if not images:
        raise ValueError("bench needs at least one image")
    warm = [run_image(img, cfg) for _, img in images]
    if model is None:
        vecs = [r.features.to_array() for r in warm if r.features is not None]
        model = _timing_model(np.vstack(vecs)) if vecs else None
    samples = {"benign": [], "melanoma": []}
    failures = []
    for (e, img), w in zip(images, warm):
        group = "melanoma" if e.label == MELANOMA else "benign"
        if not w.ok:
            failures.append({"image": e.name, "stage": w.stage, "error": w.error})
            continue
        for _ in range(repetitions):
            r = run_image(img, cfg)
            t = dict(r.timings_ms)
            if r.features is not None and model is not None:
                t0 = time.perf_counter()
                model.decision(model.prepare(r.features.to_array()))
                t["classify"] = (time.perf_counter() - t0) * 1e3
            else:
                t["classify"] = 0.0
            t["total"] = sum(t[s] for s in STAGES)
            t["iterations"] = r.iterations
            samples[group].append(t)
    out = {}
    for group, rows in samples.items():
        if not rows:
            continue
        g = {"n_runs": len(rows), "n_images": len(rows) // repetitions}
        for key in (*STAGES, "total", "iterations"):
            v = np.array([r[key] for r in rows])
            g[key] = {"mean": float(v.mean()), "std": float(v.std())}
        out[group] = g
    allrows = samples["benign"] + samples["melanoma"]
    if allrows:
        tot = np.array([r["total"] for r in allrows])
        out["all"] = {"n_runs": len(allrows), "total": {"mean": float(tot.mean()), "std": float(tot.std())}}
    out["failures"] = failures
    out["repetitions"] = repetitions
    return StageTimings(out)


def summarize(values):
    v = [x for x in values if x is not None and not math.isnan(x)]
    return (float(np.mean(v)), float(np.std(v))) if v else (None, None)


def kernel_psd_min_eig(spec, x):
    k = kernel_matrix(spec, x, x)
    return float(np.linalg.eigvalsh((k + k.T) / 2).min())
