"""Single-image pipeline: preprocess -> segment -> features, with timings."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .config import AppConfig
from .errors import DermError, FeatureError, SegmentationError
from .features import FeatureVector, LesionAnalysis, analyze_lesion
from .segmentation import SegmentationResult, evolve_detailed


@dataclass
class ImageResult:
    path: str
    features: FeatureVector | None = None
    stage: str | None = None  # failing stage, None on success
    error: str | None = None
    iterations: int = 0
    timings_ms: dict = field(default_factory=dict)
    segmentation: SegmentationResult | None = None
    analysis: LesionAnalysis | None = None
    image: imaging.RgbImage | None = None

    @property
    def ok(self):
        return self.error is None


def run_image(img: imaging.RgbImage, cfg: AppConfig, callback=None, keep=False, path="") -> ImageResult:
    res = ImageResult(str(path))
    t0 = time.perf_counter()
    planes = imaging.preprocess(img, cfg.preprocess.kernel_size, cfg.preprocess.sigma)
    t1 = time.perf_counter()
    res.timings_ms["preprocess"] = (t1 - t0) * 1e3
    try:
        seg = evolve_detailed(planes, cfg.segmentation, callback)
    except SegmentationError as exc:
        res.timings_ms["segment"] = (time.perf_counter() - t1) * 1e3
        res.stage, res.error = "segment", str(exc)
        res.iterations = exc.iteration or 0
        return res
    t2 = time.perf_counter()
    res.timings_ms["segment"] = (t2 - t1) * 1e3
    res.iterations = seg.iterations_used
    try:
        analysis = analyze_lesion(img, seg.mask, cfg.features)
    except FeatureError as exc:
        res.timings_ms["features"] = (time.perf_counter() - t2) * 1e3
        res.stage, res.error = f"features/{exc.stage}", str(exc)
        return res
    res.timings_ms["features"] = (time.perf_counter() - t2) * 1e3
    res.features = analysis.vector
    if keep:
        res.segmentation, res.analysis, res.image = seg, analysis, img
    return res


def process_path(path, cfg: AppConfig, keep=False, callback=None) -> ImageResult:
    t0 = time.perf_counter()
    try:
        img = imaging.load_image(path)
    except (DermError, OSError) as exc:
        return ImageResult(str(path), stage="load", error=str(exc))
    load_ms = (time.perf_counter() - t0) * 1e3
    res = run_image(img, cfg, callback, keep, path)
    res.timings_ms["load"] = load_ms
    return res


def feature_cache_key(path, cfg: AppConfig) -> str:
    """Hash of the image bytes and every setting that can change features."""
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    d = cfg.to_dict()
    h.update(json.dumps({k: d[k] for k in ("preprocess", "segmentation", "features")},
                        sort_keys=True).encode())
    return h.hexdigest()[:32]


def cached_features(path, cfg: AppConfig, cache_dir=None):
    """(features-or-None, stage, error, iterations), memoised on disk."""
    if cache_dir is not None:
        try:
            key = feature_cache_key(path, cfg)
        except OSError as exc:
            return None, "load", str(exc), 0
        entry = Path(cache_dir) / f"{key}.json"
        if entry.is_file():
            rec = json.loads(entry.read_text())
            vec = FeatureVector.from_array(rec["features"]) if rec["features"] is not None else None
            return vec, rec["stage"], rec["error"], rec["iterations"]
    res = process_path(path, cfg)
    vec = res.features
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        rec = {
            "path": str(path),
            "features": [float(x) for x in vec.to_array()] if vec is not None else None,
            "stage": res.stage,
            "error": res.error,
            "iterations": res.iterations,
        }
        entry.write_text(json.dumps(rec, sort_keys=True))
    return vec, res.stage, res.error, res.iterations


def feature_matrix(vectors):
    return np.vstack([v.to_array() for v in vectors]) if vectors else np.empty((0, 11))
