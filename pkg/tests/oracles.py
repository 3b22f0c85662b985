"""Slow, direct reference implementations used only by the tests.

Each one is written from the defining formula with plain loops or a
different algorithm, never by calling the package code it checks.
"""

import math

import numpy as np


def yuv_pixel(r, g, b):
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.147 * r - 0.289 * g + 0.436 * b
    v = 0.615 * r - 0.515 * g - 0.100 * b
    return y, u, v


def gaussian_weights(k, sigma):
    c = (k - 1) / 2
    w = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma)) for j in range(k)]
         for i in range(k)]
    total = sum(sum(row) for row in w)
    return np.array([[x / total for x in row] for row in w])


def convolve_loops(plane, weights):
    """Direct 2-D convolution with clamp-to-edge borders."""
    h, w = plane.shape
    k = weights.shape[0]
    r = k // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(k):
                for j in range(k):
                    yy = min(max(y + i - r, 0), h - 1)
                    xx = min(max(x + j - r, 0), w - 1)
                    acc += weights[i, j] * plane[yy, xx]
            out[y, x] = acc
    return out


def region_means_loops(phi, u):
    s_in = s_out = 0.0
    n_in = n_out = 0
    for y in range(phi.shape[0]):
        for x in range(phi.shape[1]):
            if phi[y, x] < 0:
                s_in += u[y, x]
                n_in += 1
            else:
                s_out += u[y, x]
                n_out += 1
    return s_in / n_in, s_out / n_out


def ellipse_count(width, height, fraction):
    """Pixels strictly inside the centred ellipse, away from the 2-px frame."""
    a, b = fraction * width / 2, fraction * height / 2
    cx, cy = (width - 1) / 2, (height - 1) / 2
    n = 0
    for y in range(2, height - 2):
        for x in range(2, width - 2):
            if ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 < 1:
                n += 1
    return n


def boundary_pixels(bits):
    """True pixels with a false (or off-grid) 8-neighbour."""
    h, w = bits.shape
    out = set()
    for y in range(h):
        for x in range(w):
            if not bits[y, x]:
                continue
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w) or not bits[yy, xx]:
                        out.add((x, y))
    return out


def min_rect_angle_scan(points, steps=18000):
    """Minimum-area enclosing rectangle by scanning orientations finely."""
    pts = np.asarray(points, dtype=float)
    best = None
    for t in np.linspace(0, math.pi / 2, steps, endpoint=False):
        c, s = math.cos(t), math.sin(t)
        a = pts @ np.array([c, s])
        b = pts @ np.array([-s, c])
        area = (a.max() - a.min()) * (b.max() - b.min())
        if best is None or area < best[0]:
            best = (area, t, a.max() - a.min(), b.max() - b.min())
    return best


def xor_mirror_count(bits, axis, centre2):
    """|bits XOR mirror| with the mirror line at coordinate centre2 / 2."""
    h, w = bits.shape
    n = 0
    for y in range(h):
        for x in range(w):
            if axis == 1:
                xm = centre2 - x
                m = bits[y, xm] if 0 <= xm < w else False
            else:
                ym = centre2 - y
                m = bits[ym, x] if 0 <= ym < h else False
            n += bits[y, x] != m
    return n


def mann_whitney(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    u = 0.0
    for a in pos:
        for b in neg:
            u += 1.0 if a > b else (0.5 if a == b else 0.0)
    return u / (len(pos) * len(neg))


# ---------------------------------------------------------------------------
# SVM dual by projected gradient


def kernel(kind, a, b, gamma, degree=3, coef0=0.0):
    if kind == "linear":
        return a @ b.T
    if kind == "rbf":
        d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return np.exp(-gamma * d)
    return (gamma * (a @ b.T) + coef0) ** degree


def project_box_hyperplane(v, y, c):
    """Euclidean projection onto {0 <= a <= c, y.a = 0}.

    a(nu) = clip(v - nu*y, 0, c) and g(nu) = y.a(nu) is piecewise linear and
    non-increasing, so the root is found exactly between breakpoints.
    """
    bps = np.unique(np.concatenate([v * y, (v - c) * y]))  # y = +-1, so /y == *y

    vals = np.clip(v[None, :] - bps[:, None] * y[None, :], 0.0, c) @ y
    if np.any(vals == 0):
        nu = bps[np.flatnonzero(vals == 0)[0]]
    else:
        k = np.flatnonzero((vals[:-1] > 0) & (vals[1:] < 0))
        if len(k) == 0:
            # both classes present means g changes sign; guard anyway
            nu = bps[0] if vals[0] < 0 else bps[-1]
        else:
            i = k[0]
            nu = bps[i] + (bps[i + 1] - bps[i]) * vals[i] / (vals[i] - vals[i + 1])
    return np.clip(v - nu * y, 0.0, c)


def dual_value(alpha, y, kmat):
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ kmat @ ay)


def solve_dual(kmat, y, c, iters=100_000, tol=1e-10):
    """Accelerated projected gradient ascent with gradient-based restarts.

    Stops when a plain projected-gradient step from the iterate moves it by
    less than ``tol`` (a fixed point is exactly a KKT point).
    """
    q = (y[:, None] * y[None, :]) * kmat
    lip = max(np.linalg.eigvalsh((q + q.T) / 2).max(), 1e-12)
    step = 1.0 / lip
    a = np.zeros(len(y))
    z = a.copy()
    t = 1.0
    for it in range(iters):
        a_new = project_box_hyperplane(z + step * (1.0 - q @ z), y, c)
        if np.dot(z - a_new, a_new - a) > 0:
            t = 1.0  # momentum points uphill of the ascent; drop it
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        z = a_new + ((t - 1) / t_new) * (a_new - a)
        a, t = a_new, t_new
        if it % 25 == 0:
            plain = project_box_hyperplane(a + step * (1.0 - q @ a), y, c)
            if np.max(np.abs(plain - a)) < tol:
                break
    return a


def dual_bias(alpha, y, kmat, c, eps=1e-6):
    """b from the free multipliers, else the middle of the feasible range."""
    f0 = kmat @ (alpha * y)
    free = (alpha > eps * c) & (alpha < c * (1 - eps))
    if free.any():
        return float(np.mean(y[free] - f0[free]))
    # b must satisfy y_i (f0_i + b) >= 1 for alpha=0 and <= 1 for alpha=c
    lo, hi = -np.inf, np.inf
    for i in range(len(y)):
        r = y[i] - f0[i]
        at_zero = alpha[i] <= eps * c
        if (y[i] > 0) == at_zero:
            lo = max(lo, r)
        else:
            hi = min(hi, r)
    if np.isinf(lo):
        return float(hi)
    if np.isinf(hi):
        return float(lo)
    return float((lo + hi) / 2)
