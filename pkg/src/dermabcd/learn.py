"""Feature standardisation and SMOTE oversampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LearnError

MELANOMA, BENIGN = 1, -1


@dataclass(frozen=True)
class Scaler:
    means: np.ndarray
    stds: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.means) / self.stds

    def to_dict(self):
        return {"means": [float(v) for v in self.means], "stds": [float(v) for v in self.stds]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], dtype=np.float64), np.asarray(d["stds"], dtype=np.float64))


def fit_scaler(x) -> Scaler:
    """Per-column mean and population standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise LearnError("need at least two samples to fit a scaler")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    flat = np.flatnonzero(stds <= 1e-12 * np.maximum(1.0, np.abs(means)))
    if len(flat):
        raise LearnError(f"zero-variance feature column(s) {flat.tolist()}")
    return Scaler(means, stds)


def apply_scaler(scaler: Scaler, x):
    return scaler.apply(x)


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio:
            raise ValueError("target_ratio must be positive")


def smote_count(n_minority, n_majority, target_ratio=1.0):
    """How many synthetic points bring the minority to ``target_ratio`` of
    the majority; ratios above 1 are treated as parity."""
    target = int(round(min(target_ratio, 1.0) * n_majority))
    return max(0, target - n_minority)


def smote(minority, n_synthetic: int, cfg: SmoteConfig = SmoteConfig()):
    """Synthesize ``n_synthetic`` points on segments joining each minority
    sample to one of its ``k`` nearest minority neighbours.

    Base samples are taken round-robin over a seeded permutation so every
    sample seeds about the same number of new points.
    """
    x = np.asarray(minority, dtype=np.float64)
    n = len(x)
    k = cfg.k_neighbors
    if n <= k:
        raise LearnError(f"SMOTE needs more than k={k} minority samples, got {n}")
    if n_synthetic <= 0:
        return np.empty((0, x.shape[1]))
    rng = np.random.default_rng(cfg.rng_seed)
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps neighbour choice reproducible on ties
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    order = rng.permutation(n)
    base = order[np.arange(n_synthetic) % n]
    pick = nbrs[base, rng.integers(0, k, size=n_synthetic)]
    gap = rng.random(n_synthetic)[:, None]
    return x[base] + gap * (x[pick] - x[base])


def oversample(x, y, cfg: SmoteConfig = SmoteConfig(), minority_label=MELANOMA):
    """Append SMOTE samples of ``minority_label`` up to the configured ratio."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    mino = x[y == minority_label]
    n_major = int(np.sum(y != minority_label))
    n_new = smote_count(len(mino), n_major, cfg.target_ratio)
    synth = smote(mino, n_new, cfg)
    return np.vstack([x, synth]), np.concatenate([y, np.full(len(synth), minority_label, dtype=y.dtype)])
