"""Synthetic dermoscopy-like lesions with known masks and colours.

Mild (benign-looking) lesions are near-elliptical with one or two browns;
severe ones are larger, lobed and carry several off-centre colour patches. The images are
only meant to exercise the pipeline end to end, not to stand in for real
dermoscopy when judging accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import RgbImage, save_png

SKIN = (222, 182, 160)
# representative RGB per colour class, chosen to sit inside the default HSV boxes
SWATCH = {
    "white": (232, 224, 220),
    "red": (178, 71, 80),
    "light_brown": (178, 138, 98),
    "dark_brown": (89, 54, 36),
    "blue_gray": (98, 119, 140),
    "black": (25, 20, 18),
}


@dataclass(frozen=True)
class SyntheticLesion:
    image: RgbImage
    mask: np.ndarray
    colors: tuple
    melanoma: bool


def _radial_shape(w, h, cx, cy, radius, aspect, tilt, harmonics):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(tilt), np.sin(tilt)
    u = (c * dx + s * dy) / aspect
    v = -s * dx + c * dy
    r = np.hypot(u, v)
    ang = np.arctan2(v, u)
    edge = np.ones_like(r)
    for k, amp, phase in harmonics:
        edge += amp * np.cos(k * ang + phase)
    return r / (radius * edge)  # < 1 inside


def _blob(w, h, cx, cy, r):
    yy, xx = np.mgrid[0:h, 0:w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r


SEVERITY = {
    "melanoma": (0.35, 1.0),
    "atypical_nevus": (0.1, 0.6),
    "common_nevus": (0.0, 0.35),
}


def make_lesion(melanoma: bool, width=192, height=144, seed=0, severity=None) -> SyntheticLesion:
    """``severity`` in [0, 1] drives size, lobing and colour count; by
    default it is drawn from the class range, so classes overlap a little."""
    rng = np.random.default_rng(seed)
    if severity is None:
        lo, hi = SEVERITY["melanoma" if melanoma else "common_nevus"]
        severity = rng.uniform(lo, hi)
    sev = float(np.clip(severity, 0.0, 1.0))
    scale = min(width, height)
    cx = width / 2 + rng.uniform(-0.05, 0.05) * width
    cy = height / 2 + rng.uniform(-0.05, 0.05) * height
    tilt = rng.uniform(0, np.pi)
    radius = scale * (0.20 + 0.20 * sev + rng.uniform(-0.02, 0.02))
    aspect = rng.uniform(1.0, 1.3)
    amp = 0.01 + 0.10 * sev
    harmonics = [(k, amp * rng.uniform(0.5, 1.0), rng.uniform(0, 2 * np.pi)) for k in (2, 3, 5, 7)]
    rho = _radial_shape(width, height, cx, cy, radius, aspect, tilt, harmonics)
    mask = rho < 1.0

    layers = np.empty((height, width, 3))
    layers[:] = SKIN
    base = "dark_brown" if sev > 0.5 else "light_brown"
    other_brown = "light_brown" if base == "dark_brown" else "dark_brown"
    n_extra = int(rng.binomial(4, sev))
    if sev <= 0.5:
        # mild lesions pick up the other brown first
        n_extra = max(n_extra, int(rng.random() < 0.6))
        pool = [other_brown, *rng.permutation(["blue_gray", "black", "red", "white"])]
    else:
        pool = list(rng.permutation(["blue_gray", "black", "red", "white", other_brown]))
    extra = [str(c) for c in pool[:n_extra]]
    body = np.empty_like(layers)
    body[:] = SWATCH[base]
    colors = [base]
    for name in extra:
        if sev > 0.3 or name not in ("dark_brown", "light_brown"):
            # patches sit off-centre, which makes the colour layout asymmetric
            ang = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(0.3, 0.6) * radius
            r = rng.uniform(0.2, 0.3) * radius
            patch = _blob(width, height, cx + off * np.cos(ang), cy + off * np.sin(ang), r)
        else:
            patch = rho < rng.uniform(0.35, 0.55)
        patch &= mask
        if patch.sum() >= 0.02 * mask.sum():
            body[patch] = SWATCH[name]
            colors.append(name)
    # soft rim a couple of pixels wide
    alpha = np.clip((1.0 - rho) * radius / 2.0 + 0.5, 0.0, 1.0)[..., None]
    img = layers * (1 - alpha) + body * alpha
    img = ndimage.gaussian_filter(img, sigma=(0.7, 0.7, 0))
    img += rng.normal(0.0, 4.0, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SyntheticLesion(RgbImage(pixels), mask, tuple(colors), melanoma)


def make_dataset(out_dir, n_melanoma=40, n_benign=160, width=192, height=144, seed=0):
    """Write images, reference masks and ``manifest.csv``; returns its path."""
    from .evaluation import write_manifest

    out = Path(out_dir)
    rows = []
    specs = [(True, i) for i in range(n_melanoma)] + [(False, i) for i in range(n_benign)]
    for k, (mel, i) in enumerate(specs):
        label = "melanoma" if mel else ("atypical_nevus" if i % 2 else "common_nevus")
        rng = np.random.default_rng([seed, k])
        les = make_lesion(mel, width, height, seed=seed * 100_003 + k,
                          severity=rng.uniform(*SEVERITY[label]))
        stem = f"{'MEL' if mel else 'BEN'}{i:03d}"
        img_path = save_png(les.image, out / "images" / f"{stem}.png")
        mask_path = save_png(les.mask, out / "masks" / f"{stem}_lesion.png")
        rows.append((img_path, label, mask_path, les.colors))
    return write_manifest(rows, out / "manifest.csv")
