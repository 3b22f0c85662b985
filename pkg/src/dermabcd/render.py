"""PNG overlays: curve snapshots, mirror-XOR maps, aligned mask, colour outlines."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .features import COLOR_CLASSES, LesionAnalysis
from .imaging import RgbImage, save_png

SNAPSHOT_ITERATIONS = (50, 100, 200, 400)
SNAPSHOT_COLORS = {
    50: (255, 0, 0),      # red
    100: (0, 255, 0),     # green
    200: (0, 255, 255),   # cyan
    400: (0, 0, 255),     # blue
}
# outline colour per detected colour class
COLOR_OUTLINES = {
    "dark_brown": (255, 0, 0),
    "blue_gray": (0, 255, 0),
    "light_brown": (255, 255, 0),
    "white": (0, 255, 255),
    "red": (0, 0, 255),
    "black": (0, 0, 0),
}


def outline(bits, thickness=1):
    """Inside pixels with a 4-neighbour outside (or on the image edge)."""
    bits = np.asarray(bits, dtype=bool)
    inner = ndimage.binary_erosion(bits, border_value=0)
    edge = bits & ~inner
    if thickness > 1:
        edge = ndimage.binary_dilation(edge, iterations=thickness - 1) & bits
    return edge


def _pixels(img):
    return np.array(getattr(img, "pixels", img), dtype=np.uint8, copy=True)


class SnapshotRecorder:
    """Segmentation callback that keeps the interior at chosen iterations.

    The last state seen is kept too, so milestones past an early stop show
    the stationary final curve.
    """

    def __init__(self, iterations=SNAPSHOT_ITERATIONS):
        self.iterations = tuple(iterations)
        self.frames = {}
        self.last = None

    def __call__(self, it, interior):
        self.last = (it, interior)
        if it in self.iterations:
            self.frames[it] = interior

    def completed(self):
        """{milestone: (iteration actually shown, interior)}"""
        out = {}
        for it in self.iterations:
            if it in self.frames:
                out[it] = (it, self.frames[it])
            elif self.last is not None and self.last[0] < it:
                out[it] = self.last
        return out


def snapshot_overlay(img: RgbImage, frames, thickness=2):
    """Draw each milestone's curve in its legend colour, later over earlier."""
    out = _pixels(img)
    for it in sorted(frames):
        _, bits = frames[it]
        out[outline(bits, thickness)] = SNAPSHOT_COLORS.get(it, (255, 255, 255))
    return out


def mask_image(bits):
    return np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)


def xor_map(aligned, xor_bits):
    """Lesion in white, non-overlapping mirror pixels darkened to black."""
    out = np.full(aligned.shape, 128, dtype=np.uint8)
    out[aligned] = 255
    out[xor_bits] = 0
    return out


def color_outline_overlay(img, labels, mask, regions, thickness=1):
    """Outline every retained colour region on the image."""
    out = _pixels(img)
    kept = {r.color_class for r in regions}
    mask = np.asarray(mask, dtype=bool)
    for idx, name in enumerate(COLOR_CLASSES):
        if name not in kept:
            continue
        region = (labels == idx) & mask
        out[outline(region, thickness)] = COLOR_OUTLINES[name]
    return out


def feature_overlays(analysis: LesionAnalysis):
    """{file stem: uint8 array} for every feature-stage rendering."""
    return {
        "aligned_mask": mask_image(analysis.aligned_mask),
        "aligned_image": np.asarray(analysis.aligned_image, dtype=np.uint8),
        "asymmetry_horizontal": xor_map(analysis.aligned_mask, analysis.mirror_h),
        "asymmetry_vertical": xor_map(analysis.aligned_mask, analysis.mirror_v),
        "color_contours": color_outline_overlay(analysis.aligned_image, analysis.color_labels,
                                                analysis.aligned_mask, analysis.regions),
    }


def write_all(arrays, out_dir, prefix=""):
    paths = {}
    for stem, arr in arrays.items():
        paths[stem] = str(save_png(arr, f"{out_dir}/{prefix}{stem}.png"))
    return paths
