"""Two-list level-set curve evolution (fast Chan-Vese approximation).

The level set takes values in {-3, -1, 1, 3}: -3 interior, -1 the inner
boundary list, 1 the outer boundary list, 3 exterior. A data cycle moves
boundary points by the sign of the region-competition speed, a smoothing
cycle moves them by a Gaussian-filtered interior indicator. Each sweep is
sequential in list order, so evolution is deterministic.

The two outermost pixel rings are locked: ring 0 stays at 3 forever and
ring-1 points may sit in the outer list but never switch in, so neighbour
lookups never leave the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import SegmentationError
from .imaging import PlanarImage, gaussian_kernel

INTERIOR, INNER, OUTER, EXTERIOR = -3, -1, 1, 3


@dataclass(frozen=True)
class SegmentationParams:
    lambda1: int = 2
    lambda2: int = 1
    channel_weights: tuple = (1.0, 1.0, 1.0)
    channels: tuple = ("Y", "U", "V")
    n_a: int = 40
    n_s: int = 2
    max_evolutions: int = 400
    init_fraction: float = 0.65
    smooth_kernel: tuple = (5, 1.0)
    # final |c1 - c2| below this means there is no object to separate
    min_contrast: float = 1.0
    fill_holes: bool = True

    def __post_init__(self):
        if int(self.lambda1) < 1 or int(self.lambda2) < 1:
            raise ValueError("lambda1 and lambda2 must be integers >= 1")
        w = tuple(float(x) for x in self.channel_weights)
        if len(w) != len(self.channels):
            raise ValueError("one channel weight per channel is required")
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ValueError("channel weights must be >= 0 with at least one > 0")
        object.__setattr__(self, "channel_weights", w)
        if self.max_evolutions < 1:
            raise ValueError("max_evolutions must be >= 1")
        if self.n_a < 1 or self.n_s < 0:
            raise ValueError("n_a must be >= 1 and n_s >= 0")
        if not 0 < self.init_fraction <= 1:
            raise ValueError("init_fraction must lie in (0, 1]")
        gaussian_kernel(*self.smooth_kernel)


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ValueError("a mask is 2-D")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def area(self):
        return int(self.bits.sum())


@dataclass
class LevelSetGrid:
    """Level-set state; ``l_in``/``l_out`` hold flat indices ``y * width + x``."""

    phi: np.ndarray
    l_in: np.ndarray
    l_out: np.ndarray
    # running sums of the scalar field; filled lazily by the cycles
    _sums: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def width(self):
        return self.phi.shape[1]

    @property
    def height(self):
        return self.phi.shape[0]

    def points(self, which="in"):
        """List points as an ``(n, 2)`` array of ``(x, y)``."""
        idx = self.l_in if which == "in" else self.l_out
        return np.stack([idx % self.width, idx // self.width], axis=1)

    def interior(self):
        return self.phi < 0

    def copy(self):
        return LevelSetGrid(self.phi.copy(), self.l_in.copy(), self.l_out.copy(), self._sums)


def check_invariants(grid: LevelSetGrid):
    """Full-grid audit; raises AssertionError naming the first violation."""
    phi = grid.phi
    h, w = phi.shape
    assert set(np.unique(phi)) <= {-3, -1, 1, 3}, "phi outside {-3,-1,1,3}"
    p = np.pad(phi, 1, mode="constant", constant_values=EXTERIOR)
    nbrs = np.stack([p[:-2, 1:-1], p[2:, 1:-1], p[1:-1, :-2], p[1:-1, 2:]])
    any_pos = (nbrs > 0).any(axis=0)
    any_neg = (nbrs < 0).any(axis=0)
    assert not np.any((phi == INTERIOR) & any_pos), "interior point touches exterior"
    assert not np.any((phi == EXTERIOR) & any_neg), "exterior point touches interior"
    assert not np.any((phi == INNER) & ~any_pos), "inner-list point has no outside neighbour"
    assert not np.any((phi == OUTER) & ~any_neg), "outer-list point has no inside neighbour"
    flat = phi.ravel()
    for name, lst, val in (("l_in", grid.l_in, INNER), ("l_out", grid.l_out, OUTER)):
        assert len(np.unique(lst)) == len(lst), f"{name} has duplicates"
        assert np.all(flat[lst] == val), f"{name} entry with wrong phi"
        assert len(lst) == int(np.sum(flat == val)), f"{name} misses points with phi={val}"
    assert len(np.intersect1d(grid.l_in, grid.l_out)) == 0, "lists overlap"
    assert np.all(phi[0, :] == EXTERIOR) and np.all(phi[-1, :] == EXTERIOR)
    assert np.all(phi[:, 0] == EXTERIOR) and np.all(phi[:, -1] == EXTERIOR)


def _grid_from_inside(inside: np.ndarray) -> LevelSetGrid:
    inside = inside.copy()
    inside[:2, :] = False
    inside[-2:, :] = False
    inside[:, :2] = False
    inside[:, -2:] = False
    p = np.pad(inside, 1, mode="constant")
    nb_in = p[:-2, 1:-1] | p[2:, 1:-1] | p[1:-1, :-2] | p[1:-1, 2:]
    nb_out = ~(p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:])
    phi = np.full(inside.shape, EXTERIOR, dtype=np.int8)
    phi[inside] = INTERIOR
    phi[inside & nb_out] = INNER
    phi[~inside & nb_in] = OUTER
    flat = phi.ravel()
    l_in = np.flatnonzero(flat == INNER).astype(np.int64)
    l_out = np.flatnonzero(flat == OUTER).astype(np.int64)
    return LevelSetGrid(phi, l_in, l_out)


def grid_from_mask(mask) -> LevelSetGrid:
    """Level set whose interior is ``mask`` (minus the locked border rings)."""
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    return _grid_from_inside(bits)


def init_ellipse(width: int, height: int, fraction: float = 0.65) -> LevelSetGrid:
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    a = fraction * width / 2.0
    b = fraction * height / 2.0
    if a < 2 or b < 2:
        raise SegmentationError(f"initial ellipse is degenerate (semi-axes {a:.2f}, {b:.2f} < 2 px)")
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    y, x = np.mgrid[0:height, 0:width]
    inside = ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 < 1.0
    return _grid_from_inside(inside)


def scalar_field(planes: PlanarImage, params: SegmentationParams) -> np.ndarray:
    """Weighted mean of the selected planes, the field the speeds act on."""
    w = np.asarray(params.channel_weights, dtype=np.float64)
    u = np.zeros(planes.shape)
    for name, wc in zip(params.channels, w):
        if wc > 0:
            u += wc * planes[name]
    return u / w.sum()


def region_means(grid: LevelSetGrid, planes: PlanarImage, weights=None, channels=("Y", "U", "V")):
    """Mean of the weighted field inside (phi < 0) and outside (phi > 0)."""
    if planes.shape != grid.phi.shape:
        raise ValueError("grid and planes differ in size")
    if weights is None:
        weights = (1.0,) * len(channels)
    if len(weights) < len(channels):
        channels = channels[: len(weights)]
    params = SegmentationParams(channel_weights=tuple(weights), channels=tuple(channels))
    u = scalar_field(planes, params)
    inside = grid.phi < 0
    n_in = int(inside.sum())
    n_out = inside.size - n_in
    if n_in == 0 or n_out == 0:
        raise SegmentationError("curve collapsed: empty interior or exterior")
    return float(u[inside].sum() / n_in), float(u[~inside].sum() / n_out)


# --------------------------------------------------------------------------
# numba kernels. Lists live in fixed-capacity buffers; stale entries are
# skipped by checking phi and squeezed out at the end of every pass.


@njit(cache=True)
def _compact(buf, n, phi, val, stamp, tag):
    m = 0
    for i in range(n):
        p = buf[i]
        if phi[p] == val and stamp[p] != tag:
            stamp[p] = tag
            buf[m] = p
            m += 1
    return m


@njit(cache=True)
def _touch(p, phi, touch_id, touch_sign, touched, n_touched, evo):
    if touch_id[p] != evo:
        touch_id[p] = evo
        touch_sign[p] = 1 if phi[p] > 0 else -1
        touched[n_touched] = p
        n_touched += 1
    return n_touched


@njit(cache=True)
def _switch_in(p, phi, w, lin, nin, lout, nout):
    phi[p] = -1
    lin[nin] = p
    nin += 1
    for q in (p - w, p + w, p - 1, p + 1):
        if phi[q] == 3:
            phi[q] = 1
            lout[nout] = q
            nout += 1
    return nin, nout


@njit(cache=True)
def _switch_out(p, phi, w, lin, nin, lout, nout):
    phi[p] = 1
    lout[nout] = p
    nout += 1
    for q in (p - w, p + w, p - 1, p + 1):
        if phi[q] == -3:
            phi[q] = -1
            lin[nin] = q
            nin += 1
    return nin, nout


@njit(cache=True)
def _drop_redundant_in(phi, w, lin, nin):
    for i in range(nin):
        p = lin[i]
        if phi[p] == -1:
            if phi[p - w] < 0 and phi[p + w] < 0 and phi[p - 1] < 0 and phi[p + 1] < 0:
                phi[p] = -3


@njit(cache=True)
def _drop_redundant_out(phi, w, lout, nout):
    for i in range(nout):
        p = lout[i]
        if phi[p] == 1:
            if phi[p - w] > 0 and phi[p + w] > 0 and phi[p - 1] > 0 and phi[p + 1] > 0:
                phi[p] = 3


@njit(cache=True)
def _data_cycle(phi, u, locked, w, lin, nin, lout, nout, sums, lam1, lam2, n_passes,
                stamp, tag, touch_id, touch_sign, touched, n_touched, evo):
    """Up to ``n_passes`` data passes; stops early on a pass with no switch.

    ``sums`` = [sum_in, count_in, sum_out, count_out] is updated in place.
    Returns (nin, nout, n_switched, passes_run, tag, n_touched).
    """
    total = 0
    passes = 0
    for _ in range(n_passes):
        if sums[1] <= 0.0 or sums[3] <= 0.0:
            break
        passes += 1
        c1 = sums[0] / sums[1]
        c2 = sums[2] / sums[3]
        switched = 0
        n0 = nout
        for i in range(n0):
            p = lout[i]
            if phi[p] != 1 or locked[p]:
                continue
            d2 = u[p] - c2
            d1 = u[p] - c1
            if lam2 * d2 * d2 - lam1 * d1 * d1 > 0.0:
                n_touched = _touch(p, phi, touch_id, touch_sign, touched, n_touched, evo)
                nin, nout = _switch_in(p, phi, w, lin, nin, lout, nout)
                sums[0] += u[p]
                sums[1] += 1.0
                sums[2] -= u[p]
                sums[3] -= 1.0
                switched += 1
        _drop_redundant_in(phi, w, lin, nin)
        n0 = nin
        for i in range(n0):
            p = lin[i]
            if phi[p] != -1:
                continue
            d2 = u[p] - c2
            d1 = u[p] - c1
            if lam2 * d2 * d2 - lam1 * d1 * d1 < 0.0:
                n_touched = _touch(p, phi, touch_id, touch_sign, touched, n_touched, evo)
                nin, nout = _switch_out(p, phi, w, lin, nin, lout, nout)
                sums[0] -= u[p]
                sums[1] -= 1.0
                sums[2] += u[p]
                sums[3] += 1.0
                switched += 1
        _drop_redundant_out(phi, w, lout, nout)
        tag += 1
        nin = _compact(lin, nin, phi, -1, stamp, tag)
        tag += 1
        nout = _compact(lout, nout, phi, 1, stamp, tag)
        total += switched
        if switched == 0:
            break
    return nin, nout, total, passes, tag, n_touched


@njit(cache=True)
def _filtered_inside(phi, p, w, h, kern, r):
    y = p // w
    x = p - y * w
    acc = 0.0
    for dy in range(-r, r + 1):
        yy = min(max(y + dy, 0), h - 1)
        for dx in range(-r, r + 1):
            xx = min(max(x + dx, 0), w - 1)
            if phi[yy * w + xx] < 0:
                acc += kern[dy + r, dx + r]
    return acc


@njit(cache=True)
def _smooth_cycle(phi, u, locked, w, h, lin, nin, lout, nout, sums, kern, n_passes,
                  stamp, tag, touch_id, touch_sign, touched, n_touched, evo):
    r = kern.shape[0] // 2
    total = 0
    for _ in range(n_passes):
        switched = 0
        n0 = nout
        for i in range(n0):
            p = lout[i]
            if phi[p] != 1 or locked[p]:
                continue
            if _filtered_inside(phi, p, w, h, kern, r) > 0.5:
                n_touched = _touch(p, phi, touch_id, touch_sign, touched, n_touched, evo)
                nin, nout = _switch_in(p, phi, w, lin, nin, lout, nout)
                sums[0] += u[p]
                sums[1] += 1.0
                sums[2] -= u[p]
                sums[3] -= 1.0
                switched += 1
        _drop_redundant_in(phi, w, lin, nin)
        n0 = nin
        for i in range(n0):
            p = lin[i]
            if phi[p] != -1:
                continue
            if _filtered_inside(phi, p, w, h, kern, r) < 0.5:
                n_touched = _touch(p, phi, touch_id, touch_sign, touched, n_touched, evo)
                nin, nout = _switch_out(p, phi, w, lin, nin, lout, nout)
                sums[0] -= u[p]
                sums[1] -= 1.0
                sums[2] += u[p]
                sums[3] += 1.0
                switched += 1
        _drop_redundant_out(phi, w, lout, nout)
        tag += 1
        nin = _compact(lin, nin, phi, -1, stamp, tag)
        tag += 1
        nout = _compact(lout, nout, phi, 1, stamp, tag)
        total += switched
        if switched == 0:
            break
    return nin, nout, total, tag, n_touched


@njit(cache=True)
def _net_change(phi, touched, n_touched, touch_sign):
    for i in range(n_touched):
        p = touched[i]
        s = 1 if phi[p] > 0 else -1
        if s != touch_sign[p]:
            return True
    return False


class _Evolver:
    """Mutable flat-buffer state shared by the cycle kernels."""

    def __init__(self, grid: LevelSetGrid, u: np.ndarray, params: SegmentationParams):
        h, w = grid.phi.shape
        n = h * w
        self.h, self.w = h, w
        self.params = params
        self.phi = grid.phi.astype(np.int8).ravel().copy()
        self.u = np.ascontiguousarray(u, dtype=np.float64).ravel()
        locked = np.zeros((h, w), dtype=np.bool_)
        locked[:2, :] = locked[-2:, :] = True
        locked[:, :2] = locked[:, -2:] = True
        self.locked = locked.ravel()
        self.lin = np.zeros(n, dtype=np.int64)
        self.lout = np.zeros(n, dtype=np.int64)
        self.nin = len(grid.l_in)
        self.nout = len(grid.l_out)
        self.lin[: self.nin] = grid.l_in
        self.lout[: self.nout] = grid.l_out
        inside = self.phi < 0
        self.sums = np.array(
            [self.u[inside].sum(), float(inside.sum()), self.u[~inside].sum(), float((~inside).sum())]
        )
        self.stamp = np.zeros(n, dtype=np.int64)
        self.tag = 0
        self.touch_id = np.zeros(n, dtype=np.int64)
        self.touch_sign = np.zeros(n, dtype=np.int8)
        self.touched = np.zeros(n, dtype=np.int64)
        self.n_touched = 0
        self.evo = 0
        k, sigma = params.smooth_kernel
        self.kern = np.ascontiguousarray(gaussian_kernel(k, sigma).weights)

    def begin_evolution(self):
        self.evo += 1
        self.n_touched = 0

    def data_cycle(self):
        p = self.params
        self.nin, self.nout, n, passes, self.tag, self.n_touched = _data_cycle(
            self.phi, self.u, self.locked, self.w, self.lin, self.nin, self.lout, self.nout,
            self.sums, float(p.lambda1), float(p.lambda2), p.n_a,
            self.stamp, self.tag, self.touch_id, self.touch_sign, self.touched,
            self.n_touched, self.evo,
        )
        return n

    def smoothing_cycle(self):
        self.nin, self.nout, n, self.tag, self.n_touched = _smooth_cycle(
            self.phi, self.u, self.locked, self.w, self.h, self.lin, self.nin, self.lout,
            self.nout, self.sums, self.kern, self.params.n_s,
            self.stamp, self.tag, self.touch_id, self.touch_sign, self.touched,
            self.n_touched, self.evo,
        )
        return n

    def net_change(self):
        return _net_change(self.phi, self.touched, self.n_touched, self.touch_sign)

    def collapsed(self):
        return self.sums[1] <= 0 or self.sums[3] <= 0

    def means(self):
        return self.sums[0] / self.sums[1], self.sums[2] / self.sums[3]

    def grid(self) -> LevelSetGrid:
        return LevelSetGrid(
            self.phi.reshape(self.h, self.w).copy(),
            self.lin[: self.nin].copy(),
            self.lout[: self.nout].copy(),
        )

    def interior(self):
        return (self.phi < 0).reshape(self.h, self.w)


def data_cycle(grid: LevelSetGrid, planes: PlanarImage, params: SegmentationParams):
    """Run one data-dependent cycle on a copy of ``grid``.

    Returns ``(new_grid, changed)``.
    """
    region_means(grid, planes, params.channel_weights, params.channels)
    ev = _Evolver(grid, scalar_field(planes, params), params)
    ev.begin_evolution()
    n = ev.data_cycle()
    if ev.collapsed():
        raise SegmentationError("curve collapsed during data cycle")
    return ev.grid(), n > 0


def smoothing_cycle(grid: LevelSetGrid, params: SegmentationParams) -> LevelSetGrid:
    u = np.zeros(grid.phi.shape)
    ev = _Evolver(grid, u, params)
    ev.begin_evolution()
    ev.smoothing_cycle()
    return ev.grid()


def largest_component(bits: np.ndarray) -> np.ndarray:
    """Largest 4-connected true component; ties go to the lowest label."""
    labels, n = ndimage.label(bits)
    if n <= 1:
        return bits.copy()
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


@dataclass(frozen=True)
class SegmentationResult:
    mask: BinaryMask
    iterations_used: int
    converged: bool
    c1: float
    c2: float


def evolve_detailed(planes: PlanarImage, params: SegmentationParams = SegmentationParams(),
                    callback=None, init: LevelSetGrid | None = None) -> SegmentationResult:
    """Alternate data and smoothing cycles until the curve stops moving.

    Stops when a data cycle switches nothing, when a whole evolution leaves
    the interior unchanged (data and smoothing undoing each other), or at
    ``max_evolutions``. ``callback(iteration, interior_bits)`` is invoked
    after every evolution.
    """
    h, w = planes.shape
    grid = init if init is not None else init_ellipse(w, h, params.init_fraction)
    ev = _Evolver(grid, scalar_field(planes, params), params)
    if ev.collapsed():
        raise SegmentationError("initial curve has an empty interior or exterior", 0)
    used = 0
    converged = False
    for it in range(1, params.max_evolutions + 1):
        used = it
        ev.begin_evolution()
        moved = ev.data_cycle()
        if ev.collapsed():
            raise SegmentationError("curve collapsed", it)
        if moved == 0:
            converged = True
            if callback is not None:
                callback(it, ev.interior().copy())
            break
        ev.smoothing_cycle()
        if ev.collapsed():
            raise SegmentationError("curve collapsed", it)
        if callback is not None:
            callback(it, ev.interior().copy())
        if not ev.net_change():
            converged = True
            break
    c1, c2 = ev.means()
    if abs(c1 - c2) < params.min_contrast:
        raise SegmentationError(
            f"no contrast between regions (|c1 - c2| = {abs(c1 - c2):.3g})", used
        )
    bits = largest_component(ev.interior())
    if params.fill_holes:
        bits = ndimage.binary_fill_holes(bits)
    if not bits.any() or bits.all():
        raise SegmentationError("curve collapsed", used)
    return SegmentationResult(BinaryMask(bits), used, converged, float(c1), float(c2))


def evolve(planes: PlanarImage, params: SegmentationParams = SegmentationParams(), callback=None):
    """Segment ``planes``; returns ``(mask, iterations_used)``."""
    res = evolve_detailed(planes, params, callback)
    return res.mask, res.iterations_used


def with_params(params: SegmentationParams, **changes) -> SegmentationParams:
    return replace(params, **changes)
