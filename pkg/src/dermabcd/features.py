"""ABCD lesion features.

The classifier sees 11 numbers, in this order::

    a_h, a_v, d_white, d_red, d_light_brown, d_dark_brown, d_blue_gray,
    d_black, border_i, color_count, diameter_mm
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import FeatureError
from .geometry import Contour, MinAreaRect, RotationSpec
from .imaging import RgbImage, rgb_to_hsv_array

log = logging.getLogger(__name__)

COLOR_CLASSES = ("white", "red", "light_brown", "dark_brown", "blue_gray", "black")
# highest priority first when a pixel matches several ranges
COLOR_PRECEDENCE = ("black", "blue_gray", "dark_brown", "light_brown", "red", "white")

FEATURE_NAMES = (
    "a_h", "a_v",
    *(f"d_{c}" for c in COLOR_CLASSES),
    "border_i", "color_count", "diameter_mm",
)

FEATURE_GROUPS = {
    "asymmetry": tuple(range(0, 8)),
    "border": (8,),
    "color": (9,),
    "diameter": (10,),
}


_INTERVAL = re.compile(r"^\s*([\[(])\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+|inf)\s*([\])])\s*$")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    @classmethod
    def parse(cls, text):
        """Parse ``"[0.15, 0.5)"``-style notation."""
        if isinstance(text, Interval):
            return text
        m = _INTERVAL.match(str(text))
        if not m:
            raise ValueError(f"bad interval {text!r}; expected e.g. '[0.2, 0.6)'")
        lo, hi = float(m.group(2)), float(m.group(3))
        if hi < lo:
            raise ValueError(f"empty interval {text!r}")
        return cls(lo, hi, m.group(1) == "[", m.group(4) == "]")

    def contains(self, x):
        lo = x >= self.lo if self.lo_closed else x > self.lo
        hi = x <= self.hi if self.hi_closed else x < self.hi
        return lo & hi

    def __str__(self):
        return f"{'[' if self.lo_closed else '('}{self.lo:g}, {self.hi:g}{']' if self.hi_closed else ')'}"


@dataclass(frozen=True)
class ColorRange:
    """HSV box; hue may be a union of intervals (degrees)."""

    hue: tuple = (Interval(0.0, 360.0, True, False),)
    sat: Interval = Interval(0.0, 1.0)
    val: Interval = Interval(0.0, 1.0)

    def contains(self, h, s, v):
        in_h = np.zeros(np.shape(h), dtype=bool)
        for iv in self.hue:
            in_h |= iv.contains(h)
        return in_h & self.sat.contains(s) & self.val.contains(v)


def _rng(h=None, s="[0, 1]", v="[0, 1]"):
    hue = (Interval(0.0, 360.0, True, False),) if h is None else tuple(Interval.parse(x) for x in h)
    return ColorRange(hue, Interval.parse(s), Interval.parse(v))


# Ranges were tuned by eye, not measured; recalibrate against annotated data.
DEFAULT_COLOR_TABLE = {
    "white": _rng(s="[0, 0.2]", v="[0.8, 1]"),
    "red": _rng(h=("[0, 10]", "[350, 360)"), s="[0.4, 1]", v="[0.4, 1]"),
    "light_brown": _rng(h=("[20, 40]",), s="[0.2, 0.6]", v="[0.5, 1]"),
    "dark_brown": _rng(h=("[10, 30]",), s="[0.3, 1]", v="[0.15, 0.5)"),
    "blue_gray": _rng(h=("[180, 260]",), s="[0.1, 1]", v="[0.2, 0.8]"),
    "black": _rng(v="[0, 0.15)"),
}


@dataclass(frozen=True)
class FeatureConfig:
    color_table: dict = field(default_factory=lambda: dict(DEFAULT_COLOR_TABLE))
    min_fraction: float = 0.01
    gamma_mm_per_px: float = 0.01

    def __post_init__(self):
        missing = set(COLOR_CLASSES) - set(self.color_table)
        if missing:
            raise ValueError(f"colour table lacks {sorted(missing)}")
        if not 0 <= self.min_fraction < 1:
            raise ValueError("min_fraction must lie in [0, 1)")
        if not self.gamma_mm_per_px > 0:
            raise ValueError("gamma_mm_per_px must be positive")


@dataclass(frozen=True)
class ColorRegion:
    color_class: str
    pixel_count: int
    weighted_centroid: tuple


@dataclass(frozen=True)
class FeatureVector:
    a_h: float
    a_v: float
    d: tuple  # six structural distances, COLOR_CLASSES order
    border_i: float
    color_count: int
    diameter_mm: float

    def __post_init__(self):
        if len(self.d) != 6:
            raise ValueError("six structural distances expected")
        if not np.all(np.isfinite(self.to_array())):
            raise FeatureError("assemble", "non-finite feature value")

    def to_array(self):
        return np.array([self.a_h, self.a_v, *self.d, self.border_i, self.color_count, self.diameter_mm],
                        dtype=np.float64)

    def as_dict(self):
        return dict(zip(FEATURE_NAMES, (float(x) for x in self.to_array())))

    @classmethod
    def from_array(cls, arr):
        a = [float(x) for x in arr]
        if len(a) != 11:
            raise ValueError("11 features expected")
        return cls(a[0], a[1], tuple(a[2:8]), a[8], int(round(a[9])), a[10])


def _bits(mask):
    return np.asarray(getattr(mask, "bits", mask), dtype=bool)


def _mirror_xor(bits, axis, c):
    """XOR of ``bits`` with its reflection about coordinate ``c`` on ``axis``
    (1 = reflect x, left-right; 0 = reflect y, up-down). The reflection axis
    is snapped to the half-pixel grid; of the two nearest candidates the one
    with the smaller XOR is used.
    """
    n = bits.shape[axis]
    best = None
    for m in sorted({math.floor(2 * c), math.ceil(2 * c)}):
        src = m - np.arange(n)
        ok = (src >= 0) & (src < n)
        mirrored = np.zeros_like(bits)
        if axis == 1:
            mirrored[:, ok] = bits[:, src[ok]]
        else:
            mirrored[ok, :] = bits[src[ok], :]
        xor = bits ^ mirrored
        cnt = int(xor.sum())
        if best is None or cnt < best[0]:
            best = (cnt, xor)
    return best


def asymmetry_maps(aligned_mask):
    """Non-overlap maps for the left-right and up-down mirrors."""
    bits = _bits(aligned_mask)
    cx, cy = geometry.centroid(bits)
    return _mirror_xor(bits, 1, cx)[1], _mirror_xor(bits, 0, cy)[1]


def shape_asymmetry(aligned_mask):
    """(a_h, a_v): non-overlapping area over lesion area, in percent.

    a_h mirrors left-right about the centroid column, a_v mirrors up-down
    about the centroid row. The XOR counts both halves of the mismatch, so
    it is halved.
    """
    bits = _bits(aligned_mask)
    area = int(bits.sum())
    if area == 0:
        raise FeatureError("shape_asymmetry", "mask is empty")
    cx, cy = geometry.centroid(bits)
    xor_h = _mirror_xor(bits, 1, cx)[0]
    xor_v = _mirror_xor(bits, 0, cy)[0]
    return 100.0 * (xor_h / 2) / area, 100.0 * (xor_v / 2) / area


def classify_colors(img, mask, table=None):
    """Per-pixel class index into COLOR_CLASSES, -1 where unclassified."""
    table = DEFAULT_COLOR_TABLE if table is None else table
    pix = np.asarray(getattr(img, "pixels", img))
    bits = _bits(mask)
    if pix.shape[:2] != bits.shape:
        raise FeatureError("color_variegation", "image and mask differ in size")
    h, s, v = rgb_to_hsv_array(pix)
    labels = np.full(bits.shape, -1, dtype=np.int8)
    free = bits.copy()
    for name in COLOR_PRECEDENCE:
        hit = free & table[name].contains(h, s, v)
        labels[hit] = COLOR_CLASSES.index(name)
        free &= ~hit
    return labels


def color_variegation(img, mask, table=None, min_fraction=0.01):
    bits = _bits(mask)
    area = int(bits.sum())
    labels = classify_colors(img, bits, table)
    regions = []
    for idx, name in enumerate(COLOR_CLASSES):
        ys, xs = np.nonzero(labels == idx)
        if len(xs) == 0 or len(xs) < min_fraction * area:
            continue
        regions.append(ColorRegion(name, int(len(xs)), (float(xs.mean()), float(ys.mean()))))
    if not regions:
        log.info("no lesion pixel fell inside any colour range")
    return regions


def structural_asymmetry(lesion_centroid, regions, equivalent_radius=1.0):
    """Distance from the lesion centroid to each colour region's centroid,
    divided by the equivalent radius sqrt(A / pi); 0 for absent colours."""
    if not equivalent_radius > 0:
        raise ValueError("equivalent radius must be positive")
    cx, cy = lesion_centroid
    by_name = {r.color_class: r for r in regions}
    out = []
    for name in COLOR_CLASSES:
        r = by_name.get(name)
        if r is None:
            out.append(0.0)
        else:
            rx, ry = r.weighted_centroid
            out.append(math.hypot(rx - cx, ry - cy) / equivalent_radius)
    return tuple(out)


def border_irregularity(mask, contour: Contour | None = None):
    bits = _bits(mask)
    area = int(bits.sum())
    if area == 0:
        raise FeatureError("border", "zero lesion area")
    if contour is None:
        contour = geometry.trace_contour(bits)
    p = contour.perimeter()
    return p * p / (4.0 * math.pi * area)


def diameter(rect: MinAreaRect, gamma: float):
    """Lesion diameter in mm: twice the long side times mm-per-pixel."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return 2.0 * rect.side_long * gamma


@dataclass
class LesionAnalysis:
    """Every intermediate of :func:`analyze_lesion`, kept for overlays."""

    vector: FeatureVector
    contour: Contour
    rect: MinAreaRect
    rotation: RotationSpec
    aligned_mask: np.ndarray
    aligned_image: np.ndarray
    regions: list
    color_labels: np.ndarray
    mirror_h: np.ndarray
    mirror_v: np.ndarray


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except FeatureError:
        raise
    except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        raise FeatureError(name, str(exc)) from exc


def analyze_lesion(img: RgbImage, mask, config: FeatureConfig = FeatureConfig()) -> LesionAnalysis:
    bits = _bits(mask)
    pix = np.asarray(getattr(img, "pixels", img))
    if pix.shape[:2] != bits.shape:
        raise FeatureError("input", "image and mask differ in size")
    if not bits.any():
        raise FeatureError("input", "mask is empty")
    h, w = bits.shape

    contour = _stage("contour", geometry.trace_contour, bits)
    rect = _stage("min_area_rect", geometry.min_area_rect, contour)
    cxy = _stage("centroid", geometry.centroid, bits)
    sf = geometry.fit_scale(rect, cxy, rect.theta, w, h)
    rot = _stage("rotation", geometry.build_rotation, rect.theta, sf, cxy)
    aligned = _stage("warp", geometry.warp, bits, rot)
    if not aligned.any():
        raise FeatureError("warp", "aligned mask is empty")
    aligned_img = _stage("warp", geometry.warp, pix, rot)

    a_h, a_v = _stage("shape_asymmetry", shape_asymmetry, aligned)
    labels = _stage("color_variegation", classify_colors, aligned_img, aligned, config.color_table)
    regions = _stage("color_variegation", color_variegation, aligned_img, aligned,
                     config.color_table, config.min_fraction)
    area_aligned = int(aligned.sum())
    d = _stage("structural_asymmetry", structural_asymmetry, geometry.centroid(aligned), regions,
               math.sqrt(area_aligned / math.pi))
    border_i = _stage("border", border_irregularity, bits, contour)
    diam = _stage("diameter", diameter, rect, config.gamma_mm_per_px)
    mh, mv = asymmetry_maps(aligned)
    vec = FeatureVector(a_h, a_v, d, border_i, len(regions), diam)
    return LesionAnalysis(vec, contour, rect, rot, aligned, aligned_img, regions, labels, mh, mv)


def extract_features(img: RgbImage, mask, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    return analyze_lesion(img, mask, config).vector
