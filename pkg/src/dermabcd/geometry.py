"""Lesion geometry: boundary tracing, convex hull, minimum-area rectangle,
rotation about the lesion centroid and affine warping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FeatureError

# Moore neighbourhood as (dx, dy), clockwise on screen (y grows downward),
# starting from west.
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {d: i for i, d in enumerate(_MOORE)}


@dataclass(frozen=True)
class Contour:
    points: np.ndarray  # (n, 2) integer (x, y), closed

    def __len__(self):
        return len(self.points)

    def perimeter(self) -> float:
        """Closed chain length; axial steps count 1, diagonal steps sqrt(2)."""
        if len(self.points) < 2:
            return 0.0
        steps = np.diff(np.vstack([self.points, self.points[:1]]), axis=0)
        return float(np.hypot(steps[:, 0], steps[:, 1]).sum())


@dataclass(frozen=True)
class MinAreaRect:
    center: tuple
    side_long: float
    side_short: float
    theta: float  # direction of the long side, radians in (-pi/2, pi/2]

    @property
    def area(self):
        return self.side_long * self.side_short

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = np.array([c, s]) * self.side_long / 2
        v = np.array([-s, c]) * self.side_short / 2
        ctr = np.asarray(self.center)
        return np.array([ctr - u - v, ctr + u - v, ctr + u + v, ctr - u + v])


@dataclass(frozen=True)
class RotationSpec:
    alpha: float
    beta: float
    sf: float
    centroid: tuple
    matrix: np.ndarray  # 2x3

    @property
    def theta(self):
        return math.atan2(self.beta, self.alpha)


def _as_bits(mask):
    bits = getattr(mask, "bits", mask)
    return np.asarray(bits, dtype=bool)


def trace_contour(mask) -> Contour:
    """Moore-neighbour trace of the outer boundary of the largest 8-connected
    component, starting at its topmost-then-leftmost pixel.

    Stops on re-entering the start pixel from the initial backtrack direction
    (Jacob's criterion), so holes are never followed.
    """
    bits = _as_bits(mask)
    if not bits.any():
        raise FeatureError("contour", "mask is empty")
    labels, n = ndimage.label(bits, structure=np.ones((3, 3), dtype=bool))
    if n > 1:
        sizes = np.bincount(labels.ravel())[1:]
        bits = labels == (int(np.argmax(sizes)) + 1)
    h, w = bits.shape
    ys, xs = np.nonzero(bits)
    start = (int(xs[0]), int(ys[0]))

    def fg(x, y):
        return 0 <= x < w and 0 <= y < h and bits[y, x]

    points = [start]
    cur = start
    back = 0  # the west neighbour of the start pixel is background
    first_state = None
    for _ in range(8 * bits.size + 8):
        found = None
        for k in range(1, 9):
            d = (back + k) % 8
            nx, ny = cur[0] + _MOORE[d][0], cur[1] + _MOORE[d][1]
            if fg(nx, ny):
                prev = (back + k - 1) % 8
                bx, by = cur[0] + _MOORE[prev][0], cur[1] + _MOORE[prev][1]
                found = (nx, ny), _MOORE_INDEX[(bx - nx, by - ny)]
                break
        if found is None:  # isolated pixel
            break
        state = found
        if first_state is None:
            first_state = (cur, back)
        cur, back = state
        if (cur, back) == first_state:
            break
        points.append(cur)
    return Contour(np.asarray(points, dtype=np.int64).reshape(-1, 2))


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise in (x, y), no collinear points."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(contour) -> MinAreaRect:
    """Minimum-area enclosing rectangle of the contour's pixel centres.

    The optimum has one side flush with a hull edge, so every hull edge
    direction is tried (the set of orientations rotating calipers visit).
    """
    pts = contour.points if isinstance(contour, Contour) else np.asarray(contour)
    hull = convex_hull(pts)
    if len(hull) < 3:
        raise FeatureError("min_area_rect", "contour is degenerate (collinear or too few points)")
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.arctan2(edges[:, 1], edges[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    # project the hull onto each edge frame: along (c, s) and across (-s, c)
    along = hull[:, 0][None, :] * c[:, None] + hull[:, 1][None, :] * s[:, None]
    across = -hull[:, 0][None, :] * s[:, None] + hull[:, 1][None, :] * c[:, None]
    ext_a = along.max(axis=1) - along.min(axis=1)
    ext_b = across.max(axis=1) - across.min(axis=1)
    areas = ext_a * ext_b
    i = int(np.argmin(areas))
    if areas[i] <= 1e-12:
        raise FeatureError("min_area_rect", "contour is degenerate (zero-area hull)")
    mid_a = (along[i].max() + along[i].min()) / 2
    mid_b = (across[i].max() + across[i].min()) / 2
    center = (mid_a * c[i] - mid_b * s[i], mid_a * s[i] + mid_b * c[i])
    theta = float(angles[i])
    long_, short = float(ext_a[i]), float(ext_b[i])
    if short > long_:
        long_, short = short, long_
        theta += math.pi / 2
    theta = _wrap_half_turn(theta)
    return MinAreaRect((float(center[0]), float(center[1])), long_, short, theta)


def _wrap_half_turn(theta):
    """Map an axis direction to (-pi/2, pi/2]."""
    theta = math.fmod(theta, math.pi)
    if theta > math.pi / 2:
        theta -= math.pi
    elif theta <= -math.pi / 2:
        theta += math.pi
    return theta


def build_rotation(theta: float, sf: float, centroid) -> RotationSpec:
    if not 0 < sf <= 1:
        raise ValueError(f"scale factor must lie in (0, 1], got {sf}")
    cx, cy = float(centroid[0]), float(centroid[1])
    alpha = sf * math.cos(theta)
    beta = sf * math.sin(theta)
    m = np.array(
        [
            [alpha, beta, (1 - alpha) * cx - beta * cy],
            [-beta, alpha, beta * cx + (1 - alpha) * cy],
        ]
    )
    m.setflags(write=False)
    return RotationSpec(alpha, beta, float(sf), (cx, cy), m)


def invert_affine(m):
    a = m[:, :2]
    ainv = np.linalg.inv(a)
    return np.hstack([ainv, -(ainv @ m[:, 2:3])])


def apply_affine(m, pts):
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def warp(data, spec: RotationSpec, inverse_map: bool = False):
    """Apply the rotation to a mask (nearest) or image (bilinear).

    By default ``spec.matrix`` is the forward map taking input coordinates to
    output coordinates, so each output pixel samples the input at the
    inverse-mapped location. ``inverse_map=True`` samples directly at
    ``M @ (x, y, 1)``. Samples falling outside the input are background.
    """
    m = spec.matrix if inverse_map else invert_affine(spec.matrix)
    arr = _as_bits(data) if _is_mask(data) else np.asarray(getattr(data, "pixels", data))
    h, w = arr.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    if arr.dtype == bool:
        ix = np.rint(sx).astype(np.int64)
        iy = np.rint(sy).astype(np.int64)
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.zeros_like(arr)
        out[ok] = arr[iy[ok], ix[ok]]
        return _rewrap(data, out)
    return _rewrap(data, _bilinear_sample(arr, sx, sy))


def _is_mask(data):
    bits = getattr(data, "bits", None)
    if bits is not None:
        return True
    return np.asarray(data).dtype == bool


def _rewrap(data, out):
    cls = type(data)
    if hasattr(data, "bits"):
        return cls(out)
    if hasattr(data, "pixels"):
        return cls(out)
    return out


def _bilinear_sample(arr, sx, sy):
    h, w = arr.shape[:2]
    f = arr.astype(np.float64)
    if f.ndim == 2:
        f = f[..., None]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    tx = (sx - x0)[..., None]
    ty = (sy - y0)[..., None]
    out = np.zeros(sx.shape + (f.shape[2],))
    for dy, wy in ((0, 1 - ty), (1, ty)):
        for dx, wx in ((0, 1 - tx), (1, tx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.zeros_like(out)
            vals[ok] = f[yi[ok], xi[ok]]
            out += wx * wy * vals
    if arr.ndim == 2:
        out = out[..., 0]
    if arr.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def centroid(mask):
    bits = _as_bits(mask)
    ys, xs = np.nonzero(bits)
    if len(xs) == 0:
        raise FeatureError("centroid", "mask is empty")
    return float(xs.mean()), float(ys.mean())


def fit_scale(rect: MinAreaRect, center, theta, width, height, margin=1.0) -> float:
    """Largest sf <= 1 keeping the rotated rectangle inside the frame."""
    probe = build_rotation(theta, 1.0, center)
    corners = apply_affine(probe.matrix, rect.corners())
    cx, cy = center
    sf = 1.0
    lo_x, hi_x = margin, width - 1 - margin
    lo_y, hi_y = margin, height - 1 - margin
    for qx, qy in corners:
        dx, dy = qx - cx, qy - cy
        if dx > 1e-12:
            sf = min(sf, (hi_x - cx) / dx)
        elif dx < -1e-12:
            sf = min(sf, (cx - lo_x) / -dx)
        if dy > 1e-12:
            sf = min(sf, (hi_y - cy) / dy)
        elif dy < -1e-12:
            sf = min(sf, (cy - lo_y) / -dy)
    return float(min(1.0, max(sf, 1e-3)))
