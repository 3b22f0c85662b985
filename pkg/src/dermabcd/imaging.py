"""Image decoding, resizing, colour transforms and Gaussian smoothing.

Everything upstream of segmentation lives here. Arrays are numpy, row-major,
indexed ``[y, x]``. Containers freeze their buffers so they can be shared
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageError

MIN_SIDE = 8
SUPPORTED_FORMATS = {"PNG", "BMP", "JPEG", "MPO"}

# NTSC Y'UV rows, applied to (R, G, B)
YUV_MATRIX = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.147, -0.289, 0.436],
        [0.615, -0.515, -0.100],
    ]
)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster, ``pixels`` has shape ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3:
            raise ImageError(f"expected (H, W, 3) pixels, got shape {p.shape}")
        if p.dtype != np.uint8:
            if np.any(p < 0) or np.any(p > 255):
                raise ImageError("pixel values must lie in [0, 255]")
            p = p.astype(np.uint8)
        h, w = p.shape[:2]
        if w < MIN_SIDE or h < MIN_SIDE:
            raise ImageError(f"image {w}x{h} is smaller than {MIN_SIDE}x{MIN_SIDE}")
        object.__setattr__(self, "pixels", _frozen(p))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PlanarImage:
    """Named floating-point channels of identical size."""

    planes: Mapping[str, np.ndarray]

    def __post_init__(self):
        if not self.planes:
            raise ImageError("a planar image needs at least one plane")
        shapes = {np.shape(p) for p in self.planes.values()}
        if len(shapes) != 1:
            raise ImageError(f"planes disagree on size: {sorted(shapes)}")
        frozen = {}
        for name, plane in self.planes.items():
            plane = np.asarray(plane, dtype=np.float64)
            if plane.ndim != 2:
                raise ImageError(f"plane {name!r} is not 2-D")
            if not np.all(np.isfinite(plane)):
                raise ImageError(f"plane {name!r} has non-finite values")
            frozen[name] = _frozen(plane)
        object.__setattr__(self, "planes", frozen)

    @property
    def shape(self) -> tuple[int, int]:
        return next(iter(self.planes.values())).shape

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def height(self) -> int:
        return self.shape[0]

    def __getitem__(self, name):
        return self.planes[name]

    def names(self):
        return list(self.planes)


@dataclass(frozen=True)
class GaussianKernel:
    size: int
    sigma: float
    weights: np.ndarray
    # normalised 1-D factor; weights == outer(factor, factor)
    factor: np.ndarray


def load_image(path) -> RgbImage:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image file: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise ImageError(f"{path}: unsupported format {fmt}")
            im.load()
            rgb = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return RgbImage(rgb)


def save_png(array, path):
    """Encode a uint8 (H, W), (H, W, 3) array or an RgbImage as PNG."""
    if isinstance(array, RgbImage):
        array = array.pixels
    a = np.asarray(array)
    if a.dtype == bool:
        a = a.astype(np.uint8) * 255
    elif a.dtype != np.uint8:
        a = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a).save(path, format="PNG")
    return path


def resize_bilinear(img: RgbImage, out_w: int, out_h: int) -> RgbImage:
    """Corner-aligned bilinear resampling (output corners hit input corners)."""
    if out_w <= 0 or out_h <= 0:
        raise ImageError(f"target size {out_w}x{out_h} must be positive")
    if out_w < MIN_SIDE or out_h < MIN_SIDE:
        raise ImageError(f"target size {out_w}x{out_h} is below {MIN_SIDE}x{MIN_SIDE}")
    src = img.pixels
    h, w = src.shape[:2]
    if (w, h) == (out_w, out_h):
        return img
    return RgbImage(_bilinear_rgb(src, out_w, out_h))


def _bilinear_rgb(src, out_w, out_h):
    h, w = src.shape[:2]
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    x0 = np.minimum(np.floor(xs).astype(int), w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (xs - x0)[None, :, None]
    ty = (ys - y0)[:, None, None]
    f = src.astype(np.float64)
    top = f[y0][:, x0] * (1 - tx) + f[y0][:, x1] * tx
    bot = f[y1][:, x0] * (1 - tx) + f[y1][:, x1] * tx
    out = top * (1 - ty) + bot * ty
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def fit_long_edge(img: RgbImage, long_edge: int = 1024) -> RgbImage:
    """Resize so the longer side equals ``long_edge``, keeping aspect ratio.

    Used for camera captures only; dataset images stay at native size.
    """
    w, h = img.width, img.height
    if w >= h:
        out_w, out_h = long_edge, max(MIN_SIDE, round(h * long_edge / w))
    else:
        out_w, out_h = max(MIN_SIDE, round(w * long_edge / h)), long_edge
    return resize_bilinear(img, out_w, out_h)


def rgb_to_yuv(img: RgbImage) -> PlanarImage:
    rgb = img.pixels.astype(np.float64)
    yuv = rgb @ YUV_MATRIX.T
    return PlanarImage({"Y": yuv[..., 0], "U": yuv[..., 1], "V": yuv[..., 2]})


def rgb_to_hsv(pixel):
    """Hexcone HSV of one 8-bit pixel: hue in degrees, s and v in [0, 1]."""
    r, g, b = (float(c) / 255.0 for c in pixel)
    mx, mn = max(r, g, b), min(r, g, b)
    v = mx
    delta = mx - mn
    if mx == 0.0 or delta == 0.0:
        return 0.0, 0.0, v
    s = delta / mx
    if mx == r:
        h = ((g - b) / delta) % 6.0
    elif mx == g:
        h = (b - r) / delta + 2.0
    else:
        h = (r - g) / delta + 4.0
    return (60.0 * h) % 360.0, s, v


def rgb_to_hsv_array(rgb):
    """Vectorised :func:`rgb_to_hsv` over an ``(..., 3)`` uint8 array."""
    f = np.asarray(rgb, dtype=np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=-1)
    mn = f.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(
        mx == r,
        np.mod((g - b) / safe, 6.0),
        np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta > 0, np.mod(60.0 * h, 360.0), 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


def gaussian_kernel(k: int, sigma: float) -> GaussianKernel:
    if int(k) != k or k < 3 or k % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 3, got {k}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = int(k)
    c = (k - 1) / 2
    d = np.arange(k) - c
    g = np.exp(-(d**2) / (2.0 * sigma**2))
    g /= g.sum()
    w = np.outer(g, g)
    w /= w.sum()
    return GaussianKernel(k, float(sigma), _frozen(w), _frozen(g))


def convolve(plane, kernel: GaussianKernel):
    """Same-size convolution with clamp-to-edge borders.

    The Gaussian is separable, so this runs a row pass then a column pass.
    """
    plane = np.asarray(plane, dtype=np.float64)
    k = kernel.size
    if plane.shape[0] < k or plane.shape[1] < k:
        raise ValueError(f"plane {plane.shape} is smaller than the {k}x{k} kernel")
    r = k // 2
    g = kernel.factor
    padded = np.pad(plane, r, mode="edge")
    h, w = plane.shape
    rows = np.zeros((h + 2 * r, w))
    for i in range(k):
        rows += g[i] * padded[:, i : i + w]
    out = np.zeros((h, w))
    for i in range(k):
        out += g[i] * rows[i : i + h, :]
    return out


def smooth_planes(planes: PlanarImage, kernel: GaussianKernel) -> PlanarImage:
    return PlanarImage({n: convolve(p, kernel) for n, p in planes.planes.items()})


def preprocess(img: RgbImage, k: int = 5, sigma: float = 1.0) -> PlanarImage:
    """Y'UV conversion followed by Gaussian smoothing of each plane."""
    return smooth_planes(rgb_to_yuv(img), gaussian_kernel(k, sigma))

